"""Thread-pool map honoring the ``SAMPLECRAFT_THREADS`` cap."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

from .errors import UsageError

ENV_VAR = "SAMPLECRAFT_THREADS"


def thread_count() -> int:
    raw = os.environ.get(ENV_VAR, "0").strip() or "0"
    try:
        value = int(raw)
    except ValueError:
        raise UsageError(f"{ENV_VAR} must be an integer, got {raw!r}") from None
    if value < 0:
        raise UsageError(f"{ENV_VAR} must be >= 0")
    return value if value > 0 else (os.cpu_count() or 1)


def pmap(fn, items) -> list:
    """``[fn(x) for x in items]``, possibly threaded; results keep input order."""
    items = list(items)
    workers = min(thread_count(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
