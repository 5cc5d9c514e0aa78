"""Order-preserving thread map capped by the PRECIS_THREADS environment variable.

The numba kernels release the GIL, so threads give real parallelism for the
column fits and Monte-Carlo replicates. Results never depend on scheduling.
"""

import os
from concurrent.futures import ThreadPoolExecutor


def thread_count(threads=None):
    if threads is None:
        env = os.environ.get("PRECIS_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


def pmap(fn, items, threads=None):
    items = list(items)
    k = min(thread_count(threads), len(items))
    if k <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=k) as ex:
        return list(ex.map(fn, items))
