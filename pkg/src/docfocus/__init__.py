"""Prompt-guided OCR-free document understanding at desk scale."""

__version__ = "0.1.0"
