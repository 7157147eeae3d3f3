"""Outage prediction and fault-tolerant VM management for simulated clouds."""

__version__ = "0.1.0"
