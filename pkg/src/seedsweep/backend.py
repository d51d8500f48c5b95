"""Backend selection: compiled kernels when available, NumPy otherwise.

Set ``SEEDSWEEP_BACKEND=python`` to force the fallback (used by the parity
tests and the benchmark).  Both backends expose the same callables; see
``_kernels_py`` for the contracts.
"""

import os

if os.environ.get("SEEDSWEEP_BACKEND", "").lower() == "python":
    from . import _kernels_py as _impl
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as _impl

lasso_cd = _impl.lasso_cd
group_cd = _impl.group_cd
exp_neg_axpy_lower = _impl.exp_neg_axpy_lower
shift_chol_logdet_lower = _impl.shift_chol_logdet_lower


def active_backend() -> str:
    """Name of the kernel backend in use: ``"compiled"`` or ``"python"``."""
    return _impl.BACKEND_NAME
