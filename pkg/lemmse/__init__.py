"""
Closed-form constrained MMSE estimators for linear imaging inverse problems
over finite datasets.
"""

__version__ = "0.1"
