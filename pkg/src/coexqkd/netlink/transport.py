"""Ordered, reliable byte-stream transports: an in-process pipe and TCP."""
from __future__ import annotations

import socket
import threading
import time
from dataclasses import dataclass
from typing import Protocol

from ..errors import TransportError


class Transport(Protocol):
    def send(self, data: bytes) -> None: ...

    def recv_exact(self, n: int) -> bytes: ...

    def close(self) -> None: ...


@dataclass(frozen=True)
class Fault:
    """One in-transit fault on the `message`-th send() of end `direction`.

    kind "flip" inverts bit `position` (mod frame bits); kind "truncate"
    delivers the first `position` bytes (mod frame length) and then closes
    that direction of the stream, like a half-closed TCP connection.
    """

    direction: int
    message: int
    kind: str
    position: int


class _Pipe:
    def __init__(self, fault: Fault | None, timeout: float | None, record: bool):
        self.cond = threading.Condition()
        self.inbox = [bytearray(), bytearray()]
        self.write_closed = [False, False]
        self.waiting: list[int | None] = [None, None]
        self.sends = [0, 0]
        self.fault = fault
        self.fault_applied = False
        self.timeout = timeout
        self.transcript: list[tuple[int, bytes]] | None = [] if record else None


class PipeEnd:
    """One end of an in-process pipe.

    A reader blocked while the other end is also blocked cannot make progress:
    if it holds part of a frame it raises a stall error (the sender is not
    going to finish that frame), and if both inboxes are empty both ends are
    deadlocked. Either way the reader gets TransportError instead of hanging.
    """

    def __init__(self, pipe: _Pipe, idx: int):
        self._p = pipe
        self._i = idx

    @property
    def transcript(self) -> list[tuple[int, bytes]] | None:
        return self._p.transcript

    def send(self, data: bytes) -> None:
        p, i = self._p, self._i
        with p.cond:
            if p.write_closed[i]:
                raise TransportError("send on a closed stream")
            data = bytes(data)
            f = p.fault
            close_after = False
            if f is not None and f.direction == i and f.message == p.sends[i] and data:
                if f.kind == "flip":
                    bit = f.position % (8 * len(data))
                    buf = bytearray(data)
                    buf[bit // 8] ^= 0x80 >> (bit % 8)
                    data = bytes(buf)
                elif f.kind == "truncate":
                    data = data[:f.position % len(data)]
                    close_after = True
                p.fault_applied = True
            p.sends[i] += 1
            p.inbox[1 - i].extend(data)
            if p.transcript is not None:
                p.transcript.append((i, data))
            if close_after:
                p.write_closed[i] = True
            p.cond.notify_all()

    def recv_exact(self, n: int) -> bytes:
        p, i = self._p, self._i
        deadline = None if p.timeout is None else time.monotonic() + p.timeout
        with p.cond:
            p.waiting[i] = n
            p.cond.notify_all()
            try:
                while True:
                    box = p.inbox[i]
                    if len(box) >= n:
                        out = bytes(box[:n])
                        del box[:n]
                        return out
                    if p.write_closed[1 - i]:
                        raise TransportError("peer closed the stream")
                    peer = p.waiting[1 - i]
                    # a peer reading from a closed direction is about to wake and act
                    if peer is not None and len(p.inbox[1 - i]) < peer and not p.write_closed[i]:
                        if box:
                            raise TransportError("stream stalled mid-frame")
                        if not p.inbox[1 - i]:
                            raise TransportError("both ends waiting: deadlock")
                    remaining = None if deadline is None else deadline - time.monotonic()
                    if remaining is not None and remaining <= 0:
                        raise TransportError("receive timed out")
                    p.cond.wait(remaining)
            finally:
                p.waiting[i] = None

    def close(self) -> None:
        with self._p.cond:
            self._p.write_closed[self._i] = True
            self._p.cond.notify_all()


def pipe_pair(fault: Fault | None = None, timeout: float | None = 60.0,
              record: bool = False) -> tuple[PipeEnd, PipeEnd]:
    """Two connected in-process ends; end 0 is conventionally Alice."""
    p = _Pipe(fault, timeout, record)
    return PipeEnd(p, 0), PipeEnd(p, 1)


class SocketTransport:
    def __init__(self, sock: socket.socket, timeout: float | None = 30.0):
        self._sock = sock
        sock.settimeout(timeout)

    def send(self, data: bytes) -> None:
        try:
            self._sock.sendall(data)
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from None

    def recv_exact(self, n: int) -> bytes:
        chunks, got = [], 0
        while got < n:
            try:
                chunk = self._sock.recv(min(n - got, 1 << 20))
            except socket.timeout:
                raise TransportError("receive timed out") from None
            except OSError as exc:
                raise TransportError(f"receive failed: {exc}") from None
            if not chunk:
                raise TransportError("peer closed the stream")
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_WR)
        except OSError:
            pass
        self._sock.close()


def parse_endpoint(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"endpoint must be host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def tcp_connect(host: str, port: int, timeout: float = 10.0,
                io_timeout: float | None = 30.0) -> SocketTransport:
    """Connect, retrying until `timeout` so the peer may start a little later."""
    deadline = time.monotonic() + timeout
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=max(deadline - time.monotonic(), 0.01))
            return SocketTransport(sock, io_timeout)
        except OSError as exc:
            if time.monotonic() >= deadline:
                raise TransportError(f"could not connect to {host}:{port}: {exc}") from None
            time.sleep(0.05)


def tcp_listen(host: str, port: int, timeout: float = 30.0,
               io_timeout: float | None = 30.0) -> SocketTransport:
    """Accept exactly one connection."""
    with socket.create_server((host, port)) as srv:
        srv.settimeout(timeout)
        try:
            conn, _ = srv.accept()
        except socket.timeout:
            raise TransportError(f"no peer connected to {host}:{port} within {timeout} s") from None
    return SocketTransport(conn, io_timeout)
