"""Command-line entry points: train, eval, dump-env."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import policy as pol
from .algorithm import METRIC_COLUMNS, initial_thetas, stream, train
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, build_env, build_team, load_config, render_config, with_train
from .evaluate import MODES, evaluate, write_eval_csv

log = logging.getLogger("dimapg")

RESOLVED_CONFIG = "resolved_config"
METRICS = "metrics.csv"
MEAN_METRICS = "metrics_mean.csv"
FINAL_CHECKPOINT = "final.dmpg"
_DUMP_ENV, _DUMP_POLICY = 20, 21


def deterministic_mode() -> bool:
    return os.environ.get("DIMAPG_DETERMINISTIC", "") == "1"


def _fmt(value) -> str:
    return repr(float(value)) if isinstance(value, (float, np.floating)) else str(value)


def write_metrics(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in METRIC_COLUMNS])


def read_metrics(path: Path) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [{k: float(v) for k, v in row.items()} for row in reader]


def mean_metrics(runs: list[list[dict[str, float]]]) -> list[dict[str, float]]:
    """Column-wise arithmetic mean across runs of equal length."""
    length = min(len(r) for r in runs)
    return [{c: float(np.mean([r[i][c] for r in runs])) for c in METRIC_COLUMNS} for i in range(length)]


def run_training(cfg: RunConfig, out: Path) -> Checkpoint:
    """Train one run into `out`; returns the final checkpoint."""
    out.mkdir(parents=True, exist_ok=True)
    (out / RESOLVED_CONFIG).write_text(render_config(cfg), encoding="utf-8")
    team = build_team(cfg)
    tc = cfg.train
    single = tc.variant == "single_agent"
    zero_clock = deterministic_mode()
    rows: list[dict] = []

    def snapshot(thetas, iteration: int) -> Checkpoint:
        return Checkpoint(team.policies, tuple(thetas), tc.seed, iteration, single)

    def on_iteration(it, thetas, row):
        row = dict(row)
        if zero_clock:
            row["wallclock_s"] = 0.0
        rows.append(row)
        done = it + 1
        if cfg.checkpoint_every > 0 and done % cfg.checkpoint_every == 0 and done < tc.iterations:
            save_checkpoint(out / f"ckpt_{done:06d}.dmpg", snapshot(thetas, done))
        log.info("iteration %d  min-agent return %.3f  grad norm %.4f", it, row["min_agent_return"], row["grad_norm"])

    result = train(tc, team, callback=on_iteration)
    write_metrics(out / METRICS, rows)
    final = snapshot(result.thetas, tc.iterations)
    save_checkpoint(out / FINAL_CHECKPOINT, final)
    return final


def cmd_train(args) -> int:
    overrides = dict(kv.split("=", 1) for kv in args.set)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    cfg = load_config(args.config, overrides)
    out = Path(args.out)
    if args.runs < 1:
        raise ValueError("--runs must be >= 1")
    if args.runs == 1:
        run_training(cfg, out)
        return 0
    per_run = []
    for r in range(args.runs):
        run_cfg = with_train(cfg, seed=cfg.train.seed + r)
        run_training(run_cfg, out / f"run_{r}")
        per_run.append(read_metrics(out / f"run_{r}" / METRICS))
    rows = mean_metrics(per_run)
    with open(out / MEAN_METRICS, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for row in rows:
            writer.writerow([repr(row[c]) for c in METRIC_COLUMNS])
    return 0


def _config_for_checkpoint(ckpt_path: Path, explicit: str | None) -> RunConfig:
    if explicit:
        return load_config(explicit)
    candidate = ckpt_path.parent / RESOLVED_CONFIG
    if not candidate.exists():
        raise ConfigError(f"no {RESOLVED_CONFIG} next to {ckpt_path}; pass --config")
    return load_config(candidate)


def cmd_eval(args) -> int:
    ckpt_path = Path(args.checkpoint)
    ckpt = load_checkpoint(ckpt_path)
    cfg = _config_for_checkpoint(ckpt_path, args.config)
    team = build_team(cfg)
    if len(ckpt.policies) != team.num_populations:
        raise CheckpointError(f"checkpoint holds {len(ckpt.policies)} populations, environment needs {team.num_populations}")
    for have, want in zip(ckpt.policies, team.policies):
        if (have.net, have.head) != (want.net, want.head):
            raise CheckpointError("checkpoint policy dimensions do not match the environment")
    summary = evaluate(team, list(ckpt.params), args.mode, args.episodes, cfg.train, args.seed, ckpt.single_agent)
    out = Path(args.out) if args.out else ckpt_path.parent / f"eval_{args.mode}.csv"
    write_eval_csv(out, summary)
    print("\n".join(summary.lines()))
    print(f"per-episode results: {out}")
    return 0


def _action_cells(action, continuous: bool) -> list[str]:
    return [repr(float(x)) if continuous else str(int(x)) for x in np.atleast_1d(action)]


def dump_trajectory(cfg: RunConfig, steps: int, seed: int) -> list[list[str]]:
    """One episode of the untrained central policy as CSV rows (header first)."""
    env = build_env(cfg)
    team = build_team(cfg)
    thetas = initial_thetas(team, seed)
    obs = env.reset(stream(seed, 0, _DUMP_ENV), 1)
    rng = stream(seed, 0, _DUMP_POLICY)
    act_width = env.action_size if env.action_kind == "continuous" else 1
    header = ["step", "agent", *(f"obs_{i}" for i in range(env.obs_dim)),
              *(f"action_{i}" for i in range(act_width)), "reward", "alive"]
    rows = [header]
    for t in range(steps):
        actions = []
        for n in range(env.num_agents):
            dist = pol.action_distribution(team.policy_of(n), thetas[team.populations[n]], obs[0, n])
            a, _ = pol.sample_and_logp(dist, rng)
            actions.append(a)
        joint = np.array(actions)[None]
        res = env.step(joint)
        for n in range(env.num_agents):
            rows.append([str(t), str(n), *(repr(float(x)) for x in obs[0, n]),
                         *_action_cells(actions[n], env.action_kind == "continuous"),
                         repr(float(res.rewards[0, n])), str(int(res.alive[0, n]))])
        obs = res.obs
    return rows


def replay_trajectory(cfg: RunConfig, rows: list[list[str]], seed: int) -> list[list[str]]:
    """Re-run the recorded actions from the same reset and emit rows in the dump format."""
    env = build_env(cfg)
    header, body = rows[0], rows[1:]
    n_obs = sum(1 for h in header if h.startswith("obs_"))
    n_act = sum(1 for h in header if h.startswith("action_"))
    continuous = env.action_kind == "continuous"
    obs = env.reset(stream(seed, 0, _DUMP_ENV), 1)
    out = [header]
    N = env.num_agents
    for t in range(len(body) // N):
        block = body[t * N:(t + 1) * N]
        acts = [[float(x) for x in r[2 + n_obs: 2 + n_obs + n_act]] for r in block]
        joint = np.array(acts)[None] if continuous else np.array([int(a[0]) for a in acts])[None]
        res = env.step(joint)
        for n in range(N):
            out.append([str(t), str(n), *(repr(float(x)) for x in obs[0, n]),
                        *_action_cells(joint[0, n], continuous),
                        repr(float(res.rewards[0, n])), str(int(res.alive[0, n]))])
        obs = res.obs
    return out


def cmd_dump_env(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.train.seed
    rows = dump_trajectory(cfg, args.steps, seed)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    finally:
        if args.out:
            fh.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dimapg", description="Distributed multi-agent policy gradient training")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every iteration")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--runs", type=int, default=1, help="independent runs with seeds seed, seed+1, ...")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", choices=MODES, default="central")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None, help=f"defaults to {RESOLVED_CONFIG} beside the checkpoint")
    p.add_argument("--out", default=None, help="per-episode CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dump-env", help="write one untrained-policy trajectory as CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="CSV path (stdout if omitted)")
    p.set_defaults(func=cmd_dump_env)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, ValueError, FloatingPointError, OSError) as exc:
        print(f"dimapg {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
