"""Digital re-staining toolkit for H&E stain normalisation."""

__version__ = "0.1.0"
