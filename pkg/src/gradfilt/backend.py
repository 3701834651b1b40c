"""Kernel backend selection.

The compiled Cython module is preferred; the NumPy implementation is the
fallback when the extension was not built.  GRADFILT_BACKEND=numpy forces the
fallback, GRADFILT_BACKEND=compiled makes a missing extension a hard error.
"""

import os

from .errors import ConfigError

_ENV_VAR = "GRADFILT_BACKEND"


def _load():
    want = os.environ.get(_ENV_VAR, "auto")
    if want not in ("auto", "compiled", "numpy"):
        raise ConfigError(f"{_ENV_VAR} must be auto, compiled, or numpy, got {want!r}")
    if want in ("auto", "compiled"):
        try:
            from . import _kernels

            return _kernels, "compiled"
        except ImportError:
            if want == "compiled":
                raise
    from . import _kernels_np

    return _kernels_np, "numpy"


kernels, _name = _load()


def backend_name() -> str:
    """Which kernel implementation this process is using."""
    return _name
