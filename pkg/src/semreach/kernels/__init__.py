"""Hot kernels with a numba backend and a pure-numpy fallback.

Set ``SEMREACH_DISABLE_NUMBA=1`` to force the fallback. Both backends return
identical results; ``tests/test_kernels.py`` checks that.
"""
import os

_disabled = os.environ.get("SEMREACH_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

BACKEND = "numpy"
if not _disabled:
    try:
        from ._numba import admissible_mask, astar, bayes_update, cast_rays, dijkstra

        BACKEND = "numba"
    except ImportError:  # numba missing
        pass

if BACKEND == "numpy":
    from ._numpy import admissible_mask, astar, bayes_update, cast_rays, dijkstra  # noqa: F811

__all__ = ["BACKEND", "admissible_mask", "astar", "bayes_update", "cast_rays", "dijkstra"]
