"""Picks the compiled forward kernel if it was built, else the numpy one.

Set ``NEUROFLOW_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import _fallback

BACKEND = "python"
forward_one = _fallback.forward_one

if os.environ.get("NEUROFLOW_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from ._kernels import forward_one  # noqa: F401,F811
        BACKEND = "cython"
    except ImportError:
        pass

_ORDER = ("Wm", "bm", "Wp", "bp", "E", "Wq", "Wk", "Wv", "W1", "b1", "W2", "b2", "wr", "br", "wc", "bc")


def pack(params) -> tuple:
    """Contiguous float64 copies of the parameter blocks, cached on `params`.

    Params are treated as immutable once packed.
    """
    cached = getattr(params, "_packed", None)
    if cached is not None:
        return cached
    out = []
    for k in _ORDER:
        a = params.arrays[k]
        if k in ("br", "bc"):
            out.append(float(a.reshape(-1)[0]))
        else:
            out.append(np.ascontiguousarray(a, dtype=np.float64))
    packed = tuple(out) + (int(params.d), int(params.h))
    params._packed = packed
    return packed
