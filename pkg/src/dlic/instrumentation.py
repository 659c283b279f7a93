"""Global operation counters.

Used by tests and the evaluation harness to prove claims such as "this
code path performed zero gradient steps" or "encoding ran exactly one
analysis pass". Counting is cheap and always on.
"""

from __future__ import annotations

from collections import Counter
from contextlib import contextmanager

_counts: Counter[str] = Counter()


def bump(name: str, n: int = 1) -> None:
    _counts[name] += n


def value(name: str) -> int:
    return _counts[name]


def reset(name: str | None = None) -> None:
    if name is None:
        _counts.clear()
    else:
        _counts.pop(name, None)


def snapshot() -> dict[str, int]:
    return dict(_counts)


@contextmanager
def watch(name: str):
    """Yield a callable returning how much ``name`` grew inside the block."""
    start = _counts[name]
    yield lambda: _counts[name] - start
