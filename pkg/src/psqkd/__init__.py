"""Simulation and key-rate toolkit for probabilistically shaped 16QAM CV-QKD with a local local oscillator."""

__version__ = "0.1.0"
