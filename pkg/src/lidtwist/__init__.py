"""Tactile reward shaping simulator and PPO harness for in-hand lid twisting."""
__version__ = "0.1.0"
