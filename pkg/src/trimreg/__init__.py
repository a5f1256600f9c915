"""M-estimation with the trimmed l1 penalty."""

__version__ = "0.1.0"
