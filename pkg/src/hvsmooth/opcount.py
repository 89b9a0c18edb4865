"""Lightweight operation accounting for asymptotic-cost assertions.

Sparse kernels report the number of inner-loop multiply-accumulates they
performed; dense fast paths report the nominal flop count of the BLAS/LAPACK
call they delegate to.  Counts are recorded into whichever :class:`OpCounter`
is active on the stack, so benchmark code can wrap a region in
:func:`count_ops` without threading a counter through every call.

Not thread safe; the counter stack is process global.
"""

from __future__ import annotations

from contextlib import contextmanager


class OpCounter:
    """Accumulates named operation counts."""

    def __init__(self):
        self.counts: dict[str, int] = {}

    def add(self, kind: str, k: int) -> None:
        self.counts[kind] = self.counts.get(kind, 0) + int(k)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def __repr__(self):
        return f"OpCounter(total={self.total}, counts={self.counts})"


_stack: list[OpCounter] = []


def record(kind: str, k: int) -> None:
    """Record ``k`` operations of ``kind`` into the active counter, if any."""
    if _stack:
        _stack[-1].add(kind, k)


@contextmanager
def count_ops():
    """Activate a fresh :class:`OpCounter` for the enclosed region."""
    counter = OpCounter()
    _stack.append(counter)
    try:
        yield counter
    finally:
        _stack.pop()
