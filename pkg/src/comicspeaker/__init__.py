"""Speaker attribution for comic pages."""

__version__ = "0.1.0"
