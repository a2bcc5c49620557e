"""Cache-locality-aware prioritized multi-agent experience replay."""

__version__ = "0.1.0"
