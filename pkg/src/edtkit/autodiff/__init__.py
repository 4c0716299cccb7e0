"""Minimal float64 tensor engine with tape-based reverse-mode autodiff."""

from . import functional
from .gradcheck import GRAD_CASES, finite_diff_check, run_grad_cases
from .serialization import FormatError, load_arrays, save_arrays
from .tensor import Graph, NonFiniteError, Tensor, as_tensor, no_grad

__all__ = [
    "Tensor",
    "Graph",
    "NonFiniteError",
    "as_tensor",
    "no_grad",
    "functional",
    "finite_diff_check",
    "GRAD_CASES",
    "run_grad_cases",
    "save_arrays",
    "load_arrays",
    "FormatError",
]
