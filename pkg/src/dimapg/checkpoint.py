"""Binary checkpoint format.

Layout (all integers little-endian u32, parameters little-endian float64):

    b"DMPG" | version | flags | seed | iteration | n_pops
    per population: obs_dim, n_hidden, hidden..., action_size, activation, head, length
    parameters of population 0, then population 1, ...

flags bit 0 marks parameters trained with the single-agent variant.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import nn
from . import policy as pol

MAGIC = b"DMPG"
VERSION = 1
FLAG_SINGLE_AGENT = 1
_ACTIVATIONS = ("relu", "tanh")
_HEADS = ("gaussian", "categorical")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    policies: tuple[pol.PolicySpec, ...]
    params: tuple[np.ndarray, ...]
    seed: int = 0
    iteration: int = 0
    single_agent: bool = False

    def __post_init__(self) -> None:
        self.policies = tuple(self.policies)
        self.params = tuple(np.asarray(p, dtype=np.float64) for p in self.params)
        if len(self.policies) != len(self.params):
            raise CheckpointError("one parameter vector per population is required")
        for spec, p in zip(self.policies, self.params):
            if p.shape != (spec.num_params,):
                raise CheckpointError(f"parameter vector of length {p.shape} does not match policy ({spec.num_params})")


def _u32(*values: int) -> bytes:
    return struct.pack(f"<{len(values)}I", *values)


def encode(ckpt: Checkpoint) -> bytes:
    flags = FLAG_SINGLE_AGENT if ckpt.single_agent else 0
    parts = [MAGIC, _u32(VERSION, flags, ckpt.seed, ckpt.iteration, len(ckpt.policies))]
    for spec in ckpt.policies:
        net = spec.net
        parts.append(_u32(net.input_dim, len(net.hidden_dims), *net.hidden_dims, spec.action_dim,
                          _ACTIVATIONS.index(net.activation), _HEADS.index(spec.head), spec.num_params))
    parts.extend(p.astype("<f8").tobytes() for p in ckpt.params)
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, count: int = 1) -> tuple[int, ...]:
        return struct.unpack(f"<{count}I", self.take(4 * count))


def decode(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, flags, seed, iteration, n_pops = r.u32(5)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    specs, lengths = [], []
    for _ in range(n_pops):
        obs_dim, n_hidden = r.u32(2)
        hidden = r.u32(n_hidden) if n_hidden else ()
        action_dim, act, head, length = r.u32(4)
        if act >= len(_ACTIVATIONS) or head >= len(_HEADS):
            raise CheckpointError("unknown activation or head code")
        head_name = _HEADS[head]
        spec = pol.PolicySpec(nn.MlpSpec(obs_dim, hidden, action_dim, _ACTIVATIONS[act]), head_name)
        if spec.num_params != length:
            raise CheckpointError(f"declared length {length} does not match the network ({spec.num_params})")
        specs.append(spec)
        lengths.append(length)
    params = [np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64) for n in lengths]
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return Checkpoint(tuple(specs), tuple(params), seed, iteration, bool(flags & FLAG_SINGLE_AGENT))


def header_size(policies) -> int:
    return 4 + 4 * 5 + sum(4 * (6 + len(p.net.hidden_dims)) for p in policies)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode(fh.read())
