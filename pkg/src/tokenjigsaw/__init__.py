"""Blind square-jigsaw solving as sequence-to-sequence prediction over piece tokens."""

__version__ = "0.1.0"
