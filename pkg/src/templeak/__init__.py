"""templeak: audit black-box text-to-image endpoints for template memorization."""

__version__ = "0.1.0"
