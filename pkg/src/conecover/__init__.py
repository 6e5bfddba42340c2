"""Random walks on directed covers of graphs."""

__version__ = "0.1.0"
