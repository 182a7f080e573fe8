"""Random-matrix laboratory for PT- and PTT'-symmetric coupled resonators."""

__version__ = "0.1.0"
