"""gridhouse: symbolic household gridworld + hierarchical skill agents."""

__version__ = "0.1.0"
