"""Order-preserving worker pool used by sweeps and grids."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def resolve_jobs(jobs: int | None) -> int:
    if jobs is None or jobs == 0:
        return os.cpu_count() or 1
    if jobs < 0:
        raise ValueError("jobs must be >= 0")
    return jobs


def pmap(fn, items, jobs: int | None = 1) -> list:
    """``[fn(x) for x in items]``, in a process pool when ``jobs > 1``.

    ``fn`` and the items must be picklable. Results come back in input
    order, so aggregation does not depend on scheduling.
    """
    items = list(items)
    n = min(resolve_jobs(jobs), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))
