"""Block kernels used by local velocity elimination.

The compiled extension is used when it was built; otherwise, or when the
environment variable ``MFMFE_PURE=1`` is set, the numpy fallback is used.
Both expose ``factorize``, ``block_solve``, ``block_inverse``,
``inverse_matrix`` and ``schur`` with the same signatures.
"""
import os

from . import _fallback

fallback = _fallback
compiled = None
if os.environ.get("MFMFE_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as compiled
    except ImportError:  # extension not built
        compiled = None

backend = compiled if compiled is not None else _fallback
BACKEND = "cython" if compiled is not None else "numpy"

BlockFactorError = (_fallback.BlockFactorError,) + (
    (compiled.BlockFactorError,) if compiled is not None else ()
)


def get_backend(name=None):
    """Kernel module by name ('cython', 'numpy') or the default."""
    if name is None:
        return backend
    if name == "numpy":
        return _fallback
    if name == "cython":
        if compiled is None:
            raise ImportError("compiled kernels are not available")
        return compiled
    raise ValueError(f"unknown kernel backend {name!r}")
