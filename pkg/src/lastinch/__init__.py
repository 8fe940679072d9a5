"""Category-level last-inch manipulation from a single demonstration."""

__version__ = "0.1.0"
