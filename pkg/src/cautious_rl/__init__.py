"""Cautious reinforcement learning with automaton-shaped rewards and safe padding."""

__version__ = "0.1.0"
