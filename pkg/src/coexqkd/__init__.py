"""Co-existence simulator for COW quantum key distribution next to classical DWDM traffic."""

__version__ = "0.1.0"
