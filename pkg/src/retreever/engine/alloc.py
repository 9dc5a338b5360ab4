"""Deterministic allocation accounting for Array buffers.

Counts bytes of every owning ndarray wrapped in an Array while the counter
is active; CPython reference counting frees temporaries promptly, so
``peak_bytes`` tracks the resident working set of the measured region.
Views (reshape/transpose results) are free and not counted.
"""

from __future__ import annotations

from . import array as _array_mod


class AllocationCounter:
    """Context manager accumulating total / live / peak Array bytes."""

    def __init__(self):
        self.total_bytes = 0
        self.live_bytes = 0
        self.peak_bytes = 0

    def __enter__(self) -> "AllocationCounter":
        _array_mod._ALLOC_COUNTERS.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _array_mod._ALLOC_COUNTERS.remove(self)

    def _on_alloc(self, nbytes: int) -> None:
        self.total_bytes += nbytes
        self.live_bytes += nbytes
        if self.live_bytes > self.peak_bytes:
            self.peak_bytes = self.live_bytes

    def _on_free(self, nbytes: int) -> None:
        self.live_bytes -= nbytes
