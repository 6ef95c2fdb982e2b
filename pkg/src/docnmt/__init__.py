"""Document-level neural machine translation with large concatenated contexts."""

__version__ = "0.1.0"
