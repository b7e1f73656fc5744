"""Guided-RL quadruped jumping: thrust planning, ballistic flight, a reduced
quadruped simulator, the jump reward and a one-step-episode PPO trainer."""

__version__ = "0.1.0"
