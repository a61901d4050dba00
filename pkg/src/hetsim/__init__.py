"""Discrete-event simulator for heterogeneous task-based runtimes with adaptive-priority scheduling."""

__version__ = "0.1.0"
