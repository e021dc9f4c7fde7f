"""Neural operators that map an initial wave state to later snapshots on bounded domains."""

__version__ = "0.1.0"
