"""Leader-follower robotic fish simulator and imitation-learning pipeline."""

__version__ = "0.1.0"
