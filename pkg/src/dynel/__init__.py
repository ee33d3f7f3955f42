"""dynel: sequential entity linking with a learned mention-ordering policy."""

__version__ = "0.1.0"
