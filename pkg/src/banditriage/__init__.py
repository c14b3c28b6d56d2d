"""Budget-constrained test prioritization: risk ranking plus bandit exploration."""

__version__ = "0.1.0"
