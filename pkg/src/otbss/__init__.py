"""Supervised audio source separation with optimal-transport NMF."""

__version__ = "0.1.0"
