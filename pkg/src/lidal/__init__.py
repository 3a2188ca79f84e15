"""LiDAL indoor optical radar simulator."""

__version__ = "0.1.0"
