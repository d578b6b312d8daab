"""Adaptive routing of documents across text parsers under a compute budget."""

from __future__ import annotations

__version__ = "0.1.0"
