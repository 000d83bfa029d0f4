"""Kernel backend selection.

The compiled extension is used when it was built; otherwise (or when
``JAMAICA_PURE_PYTHON=1``) the numpy implementation is loaded instead.
"""

from __future__ import annotations

import importlib
import os

BACKENDS = ("cython", "python")
_MODULES = {"cython": "jamaica.mlengine._lofcore", "python": "jamaica.mlengine._lofcore_py"}


def load(name: str):
    return importlib.import_module(_MODULES[name])


def available() -> list[str]:
    out = []
    for name in BACKENDS:
        try:
            load(name)
        except ImportError:
            continue
        out.append(name)
    return out


def _select():
    if os.environ.get("JAMAICA_PURE_PYTHON", "") not in ("", "0"):
        return "python", load("python")
    try:
        return "cython", load("cython")
    except ImportError:
        return "python", load("python")


BACKEND, _impl = _select()
knn = _impl.knn
fit = _impl.fit
score = _impl.score
