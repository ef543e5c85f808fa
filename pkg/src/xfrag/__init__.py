"""Workload-driven horizontal fragmentation of star-schema XML warehouses."""

__version__ = "0.1.0"
