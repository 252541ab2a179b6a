"""Decentralised, declarative application management over Fog infrastructures."""

__version__ = "0.1.0"
