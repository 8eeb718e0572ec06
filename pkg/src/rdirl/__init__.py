"""Online inverse reinforcement learning with recursive second-order updates."""

__version__ = "0.1.0"
