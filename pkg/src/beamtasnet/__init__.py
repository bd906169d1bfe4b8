"""Multi-channel time-domain speech enhancement with MVDR integration."""

__version__ = "0.1.0"
