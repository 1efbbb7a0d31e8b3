"""Kernel backend selection.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``FVKIT_PURE_PYTHON`` is set to a non-empty value other
than ``0``, the numpy fallback is used. ``get_backend`` returns either one
explicitly, for tests and benchmarks.
"""
import logging
import os

from . import _python

log = logging.getLogger(__name__)

try:
    from . import _compiled
except ImportError:  # pragma: no cover - depends on the build
    _compiled = None

_forced = os.environ.get("FVKIT_PURE_PYTHON", "") not in ("", "0")

if _compiled is not None and not _forced:
    _active = _compiled
else:
    if _compiled is None:
        log.info("compiled kernels unavailable, using numpy fallback")
    _active = _python

BACKEND = _active.BACKEND
lasso_cd = _active.lasso_cd
svm_dual_epoch = _active.svm_dual_epoch


def available_backends():
    return ["python"] + (["compiled"] if _compiled is not None else [])


def get_backend(name=None):
    """Return the kernel module called ``name`` (default: the active one)."""
    if name is None:
        return _active
    if name == "python":
        return _python
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")
