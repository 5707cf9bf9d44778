"""Gamepad-overlay action extraction, dataset curation and flow-matching policies."""

__version__ = "0.1.0"
