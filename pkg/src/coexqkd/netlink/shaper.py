"""Token-bucket throughput shaping for a byte-stream transport."""
from __future__ import annotations

import math
import queue
import threading
import time
from dataclasses import dataclass
from typing import Callable

from .transport import Transport


@dataclass(frozen=True)
class ShaperConfig:
    rate: float = 330e6  # bit/s; math.inf disables shaping
    burst: int = 65536  # bytes
    latency_ms: float = 0.0

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("rate must be > 0")
        if self.burst < 1:
            raise ValueError("burst must be >= 1 byte")
        if self.latency_ms < 0:
            raise ValueError("latency_ms must be >= 0")


class ShapedTransport:
    """Paces send() through a token bucket of `burst` bytes refilled at rate/8 B/s.

    Writes larger than the bucket are split into bucket-sized chunks, so a
    burst smaller than one frame still makes progress. With latency > 0 a
    single delivery thread forwards chunks in FIFO order after the delay.
    """

    def __init__(self, inner: Transport, cfg: ShaperConfig,
                 clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.inner = inner
        self.cfg = cfg
        self._clock = clock
        self._sleep = sleep
        self._tokens = float(cfg.burst)
        self._last = clock()
        self._bytes_per_s = cfg.rate / 8.0
        self._queue: queue.Queue | None = None
        self._worker: threading.Thread | None = None
        self._error: BaseException | None = None
        if cfg.latency_ms > 0:
            self._queue = queue.Queue()
            self._worker = threading.Thread(target=self._deliver, daemon=True)
            self._worker.start()

    def _refill(self) -> None:
        now = self._clock()
        self._tokens = min(self.cfg.burst, self._tokens + (now - self._last) * self._bytes_per_s)
        self._last = now

    def send(self, data: bytes) -> None:
        if self._error is not None:
            raise self._error
        burst = self.cfg.burst
        for start in range(0, len(data), burst):
            chunk = data[start:start + burst]
            self._refill()
            deficit = len(chunk) - self._tokens
            if deficit > 0:
                self._sleep(deficit / self._bytes_per_s)
                self._refill()
            self._tokens -= len(chunk)
            if self._queue is None:
                self.inner.send(chunk)
            else:
                self._queue.put((self._clock() + self.cfg.latency_ms / 1e3, chunk))

    def _deliver(self) -> None:
        while True:
            item = self._queue.get()
            if item is None:
                self._queue.task_done()
                return
            due, chunk = item
            delay = due - self._clock()
            if delay > 0:
                self._sleep(delay)
            try:
                if self._error is None:
                    self.inner.send(chunk)
            except BaseException as exc:  # surfaced on the next send()
                self._error = exc
            self._queue.task_done()

    def flush(self) -> None:
        if self._queue is not None:
            self._queue.join()

    def recv_exact(self, n: int) -> bytes:
        # everything already sent must be on the wire before we block reading
        self.flush()
        return self.inner.recv_exact(n)

    def close(self) -> None:
        if self._queue is not None:
            self._queue.put(None)
            self._worker.join()
        self.inner.close()


def shape_throughput(transport: Transport, shaper: ShaperConfig) -> Transport:
    """Wrap `transport` in a token-bucket shaper; rate = inf passes through."""
    if math.isinf(shaper.rate):
        return transport
    return ShapedTransport(transport, shaper)
