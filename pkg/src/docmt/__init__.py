"""Document-context neural machine translation toolkit (CPU, float64)."""

__version__ = "0.1.0"
