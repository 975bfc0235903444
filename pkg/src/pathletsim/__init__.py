"""Hierarchical pathlet routing: control plane, data plane and a deterministic simulator."""

__version__ = "0.1.0"
