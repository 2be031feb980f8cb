"""Distributed multi-agent policy gradients with a shared central policy."""

__version__ = "0.1.0"
