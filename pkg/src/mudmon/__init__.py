"""MUD-driven SDN flow monitoring and volumetric attack detection sandbox."""

__version__ = "0.1.0"
