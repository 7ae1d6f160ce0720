"""Kernel backend selection.

The compiled Cython module is used when it imported successfully; otherwise
the numpy fallback is active. Both implement the same reduction order and
give bit-identical results, so switching changes speed only.
"""
from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = ("compiled", "python")

_impl = _compiled if _compiled is not None else _fallback


def compiled_available():
    return _compiled is not None


def active_backend():
    return "compiled" if _impl is _compiled and _compiled is not None else "python"


def set_backend(name):
    """Select ``"compiled"`` or ``"python"``; returns the previous name."""
    global _impl
    previous = active_backend()
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available; rebuild the package")
        _impl = _compiled
    elif name == "python":
        _impl = _fallback
    else:
        raise ValueError(f"unknown backend {name!r}; expected one of {BACKENDS}")
    return previous


class use_backend:
    """Context manager that temporarily switches the backend."""

    def __init__(self, name):
        self.name = name
        self._previous = None

    def __enter__(self):
        self._previous = set_backend(self.name)
        return self

    def __exit__(self, *exc):
        set_backend(self._previous)
        return False


def kernels():
    return _impl
