"""Backend selection for the membrane scan kernels.

The compiled extension is used when it imports; otherwise the numpy twin in
``_pykernels`` is used.  Set ``SPIKEINIT_BACKEND=python`` to force the
fallback (useful for benchmarking and for equivalence tests).
"""
import logging
import os

from . import _pykernels

log = logging.getLogger(__name__)

_NAMES = ("scan_plain", "scan_random_walk", "scan_wiener", "scan_permutation", "reverse_leaky_sum")


def _load_compiled():
    try:
        from . import _ckernels
    except ImportError:  # extension not built
        return None
    return _ckernels


def get_backend(name=None):
    """Return the kernel module for ``name`` ('compiled', 'python' or None for auto)."""
    if name is None:
        name = os.environ.get("SPIKEINIT_BACKEND", "auto").lower()
    if name in ("python", "py", "numpy"):
        return _pykernels
    mod = _load_compiled()
    if mod is None:
        if name in ("compiled", "cython", "c"):
            raise ImportError("compiled kernels requested but spikeinit._ckernels is not built")
        log.info("compiled kernels unavailable, using numpy fallback")
        return _pykernels
    return mod


backend = get_backend()
BACKEND_NAME = "compiled" if backend is not _pykernels else "python"
HAVE_COMPILED = _load_compiled() is not None

scan_plain = backend.scan_plain
scan_random_walk = backend.scan_random_walk
scan_wiener = backend.scan_wiener
scan_permutation = backend.scan_permutation
reverse_leaky_sum = backend.reverse_leaky_sum
