"""Performance prediction for configurable software with calibrated BNN ensembles."""

__version__ = "0.1.0"
