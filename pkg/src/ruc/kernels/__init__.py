"""Rolling and cross-sectional kernels with backend selection at import.

The compiled extension (``_core``) is used when it is importable; otherwise,
or when the environment variable ``RUC_PURE_PYTHON`` is set to a non-empty
value other than ``0``, the numpy implementation in ``_fallback`` is used.
``BACKEND`` names the active one.
"""

import importlib
import os

from . import _fallback

KERNEL_NAMES = (
    "rolling_mean", "rolling_sum", "rolling_std", "rolling_skew", "rolling_zscore",
    "rolling_ir", "rolling_min", "rolling_max", "rolling_argmax", "rolling_argmin",
    "rolling_rank", "rolling_decay_linear", "rolling_delta", "rolling_median",
    "rolling_corr", "rolling_cov", "rolling_regression",
    "cs_rank", "cs_zscore", "cs_demean",
)


def _load_compiled():
    try:
        return importlib.import_module(f"{__name__}._core")
    except ImportError:
        return None


_core = _load_compiled() if os.environ.get("RUC_PURE_PYTHON", "0") in ("", "0") else None

BACKEND = "compiled" if _core is not None else "python"
_impl = _core if _core is not None else _fallback

for _name in KERNEL_NAMES:
    globals()[_name] = getattr(_impl, _name)
del _name


def backend_module(name):
    """Return the kernel module for ``"compiled"`` or ``"python"`` (for tests/benchmarks)."""
    if name == "python":
        return _fallback
    if name == "compiled":
        core = _core or _load_compiled()
        if core is None:
            raise ImportError("compiled kernels are not built")
        return core
    raise ValueError(name)
