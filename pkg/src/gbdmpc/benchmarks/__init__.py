"""Experiment problems, closed-loop simulation and metrics."""
