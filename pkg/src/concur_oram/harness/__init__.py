"""Simulation, verification and benchmarking tools."""
