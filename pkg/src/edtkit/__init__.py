"""Encoder-decoder window transformer for image restoration, built on numpy.

Subpackages: ``autodiff`` (tensor engine), ``model`` (architecture and cost
accounting), ``diagnostics`` (CKA, attention distance), ``data``
(degradations and patches) and ``training`` (toy training loops).
"""

__version__ = "0.1.0"
