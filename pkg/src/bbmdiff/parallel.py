"""Order-preserving map over realizations.

Every task carries its own stream key, so results do not depend on the
number of workers or on scheduling.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor


def pmap(fn, items, threads: int = 1, chunksize: int = 16) -> list:
    items = list(items)
    if threads <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items, chunksize=chunksize))
