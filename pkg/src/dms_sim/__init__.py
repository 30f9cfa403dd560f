"""Distributed discrete-event simulation of manufacturing enterprises."""

__version__ = "0.1.0"
