"""Adaptive bitrate streaming with per-chunk network coding over lossy links."""

__version__ = "0.1.0"
