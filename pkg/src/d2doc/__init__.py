"""Data-to-document generation evaluation toolkit."""

__version__ = "0.1.0"
