"""Sliding-window rate limiter shared by concurrent backend callers."""
from __future__ import annotations

import threading
import time
from collections import deque
from typing import Callable


class SlidingWindowRateLimiter:
    """At most ``max_requests`` acquisitions within any ``window_ms`` window.

    Token acquisition is serialized through a lock; clock and sleeper are
    injectable for deterministic tests.
    """

    def __init__(
        self,
        max_requests: int,
        window_ms: float,
        clock: Callable[[], float] = time.monotonic,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        if max_requests < 1:
            raise ValueError("max_requests must be >= 1")
        self.max_requests = max_requests
        self.window_s = window_ms / 1000.0
        self._clock = clock
        self._sleep = sleeper
        self._lock = threading.Lock()
        self._stamps: deque[float] = deque()

    def acquire(self) -> None:
        with self._lock:
            while True:
                now = self._clock()
                while self._stamps and now - self._stamps[0] >= self.window_s:
                    self._stamps.popleft()
                if len(self._stamps) < self.max_requests:
                    self._stamps.append(now)
                    return
                self._sleep(self._stamps[0] + self.window_s - now)
