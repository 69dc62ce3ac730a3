"""Order-preserving parallel map used by the batch pipelines.

Results always come back in submission order, so outputs are independent of
the worker count; every unit of work must be a pure function of its inputs.
"""

from __future__ import annotations

from joblib import Parallel, delayed

__all__ = ["parallel_map"]


def parallel_map(fn, items, jobs: int = 1) -> list:
    if jobs is None or jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    return Parallel(n_jobs=jobs)(delayed(fn)(item) for item in items)
