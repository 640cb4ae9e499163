"""Governance-kernel reward shaping for cooperative multi-agent RL."""

__version__ = "0.1.0"
