"""Switched-capacitor receivers that track frequency-hopping wireless power transfer."""

__version__ = "0.1.0"
