"""Rigid-motion invariant hierarchical point-pair features and a classical 9DoF pose toolkit."""

__version__ = "0.1.0"
