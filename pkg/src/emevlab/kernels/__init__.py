"""Kernel backend selection.

The compiled Cython extension is used when it was built; otherwise the
numpy fallback is loaded.  ``use_backend`` switches explicitly (tests and
the benchmark compare both).
"""

import contextlib
import logging

from . import _pykernels

log = logging.getLogger(__name__)

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels

_active = _ckernels if _ckernels is not None else _pykernels


def available_backends():
    return sorted(_BACKENDS)


def backend_name():
    return "cython" if _active is _ckernels and _ckernels is not None else "python"


def set_backend(name):
    global _active
    try:
        _active = _BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} not available; have {available_backends()}")


@contextlib.contextmanager
def use_backend(name):
    previous = backend_name()
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def conv_forward(x, w, b):
    return _active.conv_forward(x, w, b)


def conv_backward(x, w, gout):
    return _active.conv_backward(x, w, gout)


def jacobi_rotate(at, jt, tol, max_sweeps):
    return _active.jacobi_rotate(at, jt, tol, max_sweeps)


def complete_basis(qt, rank):
    return _active.complete_basis(qt, rank)
