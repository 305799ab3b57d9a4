"""Scan-recurrence kernels with backend selection at import time.

The compiled Cython extension is used when present; otherwise the pure-numpy
fallback. Both implement the identical contract and produce bit-identical
results; `use_backend` / `backend` switch between them (the comparison
benchmark and the parity tests rely on that).
"""

from contextlib import contextmanager

from . import _recurrence_py as _py

try:
    from . import _recurrence_cy as _cy
except ImportError:
    _cy = None

_BACKENDS = {"python": _py}
if _cy is not None:
    _BACKENDS["cython"] = _cy

_active = "cython" if _cy is not None else "python"


def available_backends():
    return sorted(_BACKENDS)


def active_backend():
    return _active


def use_backend(name: str):
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {available_backends()}")
    _active = name


@contextmanager
def backend(name: str):
    """Temporarily select a backend."""
    prev = _active
    use_backend(name)
    try:
        yield
    finally:
        use_backend(prev)


def recurrence_forward(a, b, h):
    _BACKENDS[_active].recurrence_forward(a, b, h)


def recurrence_backward(a, h, grad_h, grad_a, grad_b):
    _BACKENDS[_active].recurrence_backward(a, h, grad_h, grad_a, grad_b)
