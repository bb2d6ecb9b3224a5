"""Kernel backend selected at import: the compiled extension when built, else numpy."""
try:
    from . import _ckernels as _impl
    BACKEND = "cython"
except ImportError:  # extension not built
    from . import _pykernels as _impl
    BACKEND = "python"

from ._pykernels import LOST, UNHERALDED

sample_codes = _impl.sample_codes
count_codes = _impl.count_codes
von_neumann = _impl.von_neumann
block_counts = _impl.block_counts

__all__ = ["BACKEND", "LOST", "UNHERALDED", "sample_codes", "count_codes", "von_neumann", "block_counts"]
