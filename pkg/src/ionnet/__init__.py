"""Simulator and analysis toolkit for a two-node trapped-ion quantum network."""

__version__ = "0.1.0"
