"""
Debiased GP - unbiased Gaussian-process hyperparameter learning lab.
"""
__version__ = "0.3.0"

__all__ = ["__version__"]
