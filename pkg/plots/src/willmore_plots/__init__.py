"""Figure rendering for willmore-lab outputs."""

__version__ = "0.1.0"
