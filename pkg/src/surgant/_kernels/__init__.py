"""Hot-loop kernels: compiled Cython when importable, numpy/Python otherwise.

Set ``SURGANT_KERNELS=python`` to force the fallback. ``BACKEND`` names the
implementation in use; ``get_backend(name)`` returns either one explicitly.
"""
import os

import numpy as np

from . import _fallback

try:
    from . import _ckernels as _compiled
except ImportError:  # extension not built
    _compiled = None


def available_backends():
    return ["cython", "python"] if _compiled is not None else ["python"]


def get_backend(name):
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built; run `pip install -e .`")
        return _compiled
    if name == "python":
        return _fallback
    raise ValueError(f"unknown kernel backend {name!r}")


def _select():
    forced = os.environ.get("SURGANT_KERNELS", "").strip().lower()
    if forced in ("python", "fallback"):
        return "python"
    return "cython" if _compiled is not None else "python"


BACKEND = _select()
_impl = get_backend(BACKEND)


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def gru_scan_forward(X, Wz, Wr, Wh, Uz, Ur, Uh, bz, br, bh, reverse=False, backend=None):
    impl = _impl if backend is None else get_backend(backend)
    return impl.gru_scan_forward(*map(_c, (X, Wz, Wr, Wh, Uz, Ur, Uh, bz, br, bh)), bool(reverse))


def gru_scan_backward(dHs, X, Wz, Wr, Wh, Uz, Ur, Uh, Z, R, C, P, reverse=False, backend=None):
    impl = _impl if backend is None else get_backend(backend)
    return impl.gru_scan_backward(*map(_c, (dHs, X, Wz, Wr, Wh, Uz, Ur, Uh, Z, R, C, P)),
                                  bool(reverse))


def lcs_length(a, b, backend=None):
    impl = _impl if backend is None else get_backend(backend)
    if impl is _fallback:
        return _fallback.lcs_length(list(a), list(b))
    return impl.lcs_length(np.ascontiguousarray(a, dtype=np.int64),
                           np.ascontiguousarray(b, dtype=np.int64))
