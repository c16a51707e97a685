"""Backend selection for the inner triplet kernel.

``hinge_scatter(D, triplets, margin)`` takes a distance matrix ``D`` (anchor
rows x candidate columns) and an ``(n, 3)`` int64 array of
``(anchor, positive, negative)`` indices into it. It returns

* ``h``: the per-triplet hinge ``max(0, margin + D[a, p] - D[a, n])``,
* ``G``: a matrix shaped like ``D`` holding d(sum h)/dD, i.e. +1 at every
  active ``(a, p)`` and -1 at every active ``(a, n)``; a hinge exactly at
  zero counts as inactive,
* the number of active triplets.

The compiled extension is used when it was built; set ``XMODAL_PURE_PYTHON=1``
to force the NumPy fallback. Both backends return bit-identical results.
"""

import os

import numpy as np

from . import _hinge_py

try:
    from . import _hinge as _hinge_ext
except ImportError:  # extension not built
    _hinge_ext = None

_BACKENDS = {"python": _hinge_py.hinge_scatter}
if _hinge_ext is not None:
    _BACKENDS["cython"] = _hinge_ext.hinge_scatter

if _hinge_ext is not None and os.environ.get("XMODAL_PURE_PYTHON", "") in ("", "0"):
    BACKEND = "cython"
else:
    BACKEND = "python"


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def get_kernel(name: str = None):
    return _BACKENDS[name or BACKEND]


def hinge_scatter(D, triplets, margin: float, backend: str = None):
    D = np.ascontiguousarray(D, dtype=np.float64)
    triplets = np.ascontiguousarray(triplets, dtype=np.int64).reshape(-1, 3)
    return _BACKENDS[backend or BACKEND](D, triplets, float(margin))
