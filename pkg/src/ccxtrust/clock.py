"""Injectable time sources.

Anything with lifetimes (challenge expiry, token validity, audit stamps)
reads time through one of these instead of calling time.time() directly,
so scenario runs can be replayed deterministically under virtual time
while benchmarks keep wall-clock semantics.
"""

from __future__ import annotations

import time


class SystemClock:
    def now(self) -> float:
        return time.time()


class VirtualClock:
    """Manually advanced clock starting at a fixed epoch."""

    def __init__(self, start: float = 0.0) -> None:
        self._now = float(start)

    def now(self) -> float:
        return self._now

    def advance(self, seconds: float) -> None:
        if seconds < 0:
            raise ValueError("virtual time cannot move backwards")
        self._now += seconds
