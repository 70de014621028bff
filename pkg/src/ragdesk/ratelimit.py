"""Sliding-window request limiter.

A per-key log of accepted-request timestamps; a request is allowed only if
fewer than limit requests were accepted in the trailing window. Rejected
requests are not logged, so the guarantee is exact: never more than limit
accepted requests in any window-sized interval for one key.
"""

from __future__ import annotations

import math
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Callable

CHAT_CLASS_LIMIT = 10
FEEDBACK_CLASS_LIMIT = 20
WINDOW_SECONDS = 60.0


@dataclass(frozen=True)
class RateLimitDecision:
    allowed: bool
    retry_after: int  # whole seconds, 0 when allowed

    @classmethod
    def ok(cls) -> "RateLimitDecision":
        return cls(allowed=True, retry_after=0)


class SlidingWindowLimiter:
    """One request class (one limit) across many keys."""

    GC_EVERY = 1024

    def __init__(
        self,
        limit: int,
        window_seconds: float = WINDOW_SECONDS,
        *,
        clock: Callable[[], float] = time.monotonic,
    ):
        if limit < 1:
            raise ValueError("limit must be positive")
        if window_seconds <= 0:
            raise ValueError("window_seconds must be positive")
        self.limit = limit
        self.window = window_seconds
        self._clock = clock
        self._lock = threading.Lock()
        self._log: dict[str, deque[float]] = {}
        self._checks = 0

    def check(self, key: str) -> RateLimitDecision:
        now = self._clock()
        with self._lock:
            self._checks += 1
            if self._checks % self.GC_EVERY == 0:
                self._collect(now)
            entries = self._log.get(key)
            if entries is None:
                entries = deque()
                self._log[key] = entries
            cutoff = now - self.window
            while entries and entries[0] <= cutoff:
                entries.popleft()
            if len(entries) >= self.limit:
                wait = entries[0] + self.window - now
                return RateLimitDecision(allowed=False, retry_after=max(1, math.ceil(wait)))
            entries.append(now)
            return RateLimitDecision.ok()

    def _collect(self, now: float) -> None:
        cutoff = now - self.window
        dead = [key for key, entries in self._log.items() if not entries or entries[-1] <= cutoff]
        for key in dead:
            del self._log[key]

    def active_keys(self) -> int:
        with self._lock:
            return len(self._log)
