"""Kernel backend selection.

The compiled extension is used when it was built; otherwise (or when
``SCMTSED_PURE_PYTHON=1``) the numpy implementation is used.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("SCMTSED_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py

silhouette_samples = _impl.silhouette_samples
conditional_affinities = _impl.conditional_affinities
tsne_gradient = _impl.tsne_gradient

__all__ = ["BACKEND", "silhouette_samples", "conditional_affinities", "tsne_gradient"]
