"""Light estimation by extended radiosity and invisible-light-switch control."""

__version__ = "0.1.0"
