"""Sparse-coding and GMM Fisher vector encoders."""
from ._kernels import BACKEND

__version__ = "0.1.0"
