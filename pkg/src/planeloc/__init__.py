"""Multi-agent plane localization with searched agents on synthetic phantoms."""

__version__ = "0.1.0"
