import threading
import time


class TokenBucket:
    """Blocking byte-rate limiter shared by any number of threads.

    ``rate`` is in bytes per second; 0 disables limiting. The bucket holds
    at most ``burst_seconds`` worth of tokens. A caller that asks for more
    than is available goes into debt and sleeps it off outside the lock, so
    requests larger than the bucket are fine and oversleeping is absorbed
    by the next refill instead of lowering the long-run rate.
    """

    def __init__(self, rate: float, burst_seconds: float = 0.1, clock=time.monotonic, sleep=time.sleep):
        if rate < 0:
            raise ValueError("rate must be >= 0")
        self.rate = float(rate)
        self.capacity = self.rate * burst_seconds
        self._tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    @property
    def unlimited(self) -> bool:
        return self.rate == 0

    def _refill(self, now: float) -> None:
        self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
        self._last = now

    def consume(self, n: int) -> float:
        """Take ``n`` tokens, sleeping as needed. Returns the time slept."""
        if self.rate == 0 or n <= 0:
            return 0.0
        with self._lock:
            self._refill(self._clock())
            self._tokens -= n
            deficit = -self._tokens
        if deficit <= 0:
            return 0.0
        wait = deficit / self.rate
        self._sleep(wait)
        return wait

    def drain(self) -> None:
        """Discard any banked burst so the next measurement sees the sustained rate."""
        if self.rate == 0:
            return
        with self._lock:
            self._refill(self._clock())
            self._tokens = min(self._tokens, 0.0)
