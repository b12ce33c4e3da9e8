"""Near-field codebook construction and evaluation for extremely large arrays."""

__version__ = "0.1.0"
