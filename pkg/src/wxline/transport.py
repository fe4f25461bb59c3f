"""Duplex byte-stream transports between node and collector.

Two bindings of the same small interface:

* :func:`in_process_pair` -- a pair of directly connected endpoints sharing a
  clock; used by tests and by ``local`` stations inside the collect command.
* :class:`TcpTransport` / :class:`TcpDialer` / :class:`TcpListener` -- TCP
  sockets for cross-process runs.

``recv`` blocks until some bytes are available, the (sim-time) deadline
passes (returns ``b""``), or the peer is gone (:class:`TransportClosed`).
"""

from __future__ import annotations

import math
import socket

from .clock import Clock


class TransportClosed(ConnectionError):
    """The byte stream ended or broke mid-conversation."""


class TransportUnavailable(TransportClosed):
    """The peer could not be reached at all (nothing listening)."""


class Transport:
    def send(self, data: bytes) -> None:
        raise NotImplementedError

    def recv(self, deadline: float | None = None) -> bytes:
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError

    def drain(self, clock: Clock) -> None:
        """Discard any bytes already buffered (stale responses)."""
        try:
            while self.recv(deadline=clock.now()):
                pass
        except TransportClosed:
            pass


class _Pipe:
    """One direction of an in-process link.

    Single producer, single consumer.  Mutations are individually atomic
    under the GIL and every mutation is followed by a clock kick, so the
    consumer's wake predicate needs no extra locking.
    """

    __slots__ = ("buf", "closed")

    def __init__(self):
        self.buf = bytearray()
        self.closed = False


class InProcessTransport(Transport):
    def __init__(self, clock: Clock, rx: _Pipe, tx: _Pipe):
        self._clock = clock
        self._rx = rx
        self._tx = tx

    def send(self, data: bytes) -> None:
        if self._tx.closed:
            raise TransportClosed("peer endpoint is closed")
        self._tx.buf.extend(data)
        self._clock.kick()

    def recv(self, deadline: float | None = None) -> bytes:
        rx = self._rx
        if deadline is None:
            deadline = math.inf
        self._clock.wait_until(deadline, wake=lambda: bool(rx.buf) or rx.closed)
        if rx.buf:
            data = bytes(rx.buf)
            del rx.buf[: len(data)]
            return data
        if rx.closed:
            raise TransportClosed("peer endpoint is closed")
        return b""

    def close(self) -> None:
        self._rx.closed = True
        self._tx.closed = True
        self._clock.kick()


def in_process_pair(clock: Clock) -> tuple[InProcessTransport, InProcessTransport]:
    """Two directly connected endpoints; closing either side closes both."""
    a_to_b = _Pipe()
    b_to_a = _Pipe()
    a = InProcessTransport(clock, rx=b_to_a, tx=a_to_b)
    b = InProcessTransport(clock, rx=a_to_b, tx=b_to_a)
    return a, b


class TcpTransport(Transport):
    """A connected TCP socket.  Needs a wall-based clock for timeouts."""

    def __init__(self, sock: socket.socket, clock: Clock):
        self._sock = sock
        self._clock = clock
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def send(self, data: bytes) -> None:
        try:
            self._sock.sendall(data)
        except OSError as err:
            raise TransportClosed(f"send failed: {err}") from err

    def recv(self, deadline: float | None = None) -> bytes:
        if deadline is None:
            self._sock.settimeout(None)
        else:
            remaining = self._clock.wall_timeout(deadline - self._clock.now())
            if remaining <= 0:
                self._sock.settimeout(0.000001)
            else:
                self._sock.settimeout(remaining)
        try:
            data = self._sock.recv(4096)
        except (TimeoutError, socket.timeout):
            return b""
        except BlockingIOError:
            return b""
        except OSError as err:
            raise TransportClosed(f"recv failed: {err}") from err
        if data == b"":
            raise TransportClosed("peer closed the connection")
        return data

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


class TcpDialer(Transport):
    """Collector-side transport: connects lazily, reconnects after failures."""

    def __init__(self, host: str, port: int, clock: Clock, connect_timeout_s: float = 2.0):
        self._host = host
        self._port = port
        self._clock = clock
        self._connect_timeout_s = connect_timeout_s
        self._conn: TcpTransport | None = None

    def _ensure_connected(self) -> TcpTransport:
        if self._conn is None:
            try:
                sock = socket.create_connection(
                    (self._host, self._port), timeout=self._connect_timeout_s
                )
            except OSError as err:
                raise TransportUnavailable(
                    f"cannot reach {self._host}:{self._port}: {err}"
                ) from err
            self._conn = TcpTransport(sock, self._clock)
        return self._conn

    def send(self, data: bytes) -> None:
        try:
            self._ensure_connected().send(data)
        except TransportClosed:
            self._reset()
            raise

    def recv(self, deadline: float | None = None) -> bytes:
        try:
            return self._ensure_connected().recv(deadline)
        except TransportClosed:
            self._reset()
            raise

    def _reset(self) -> None:
        if self._conn is not None:
            self._conn.close()
            self._conn = None

    def close(self) -> None:
        self._reset()


class TcpListener:
    """Node-side listener: accepts one connection at a time."""

    def __init__(self, host: str, port: int, clock: Clock):
        self._clock = clock
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(4)
        self._closed = False

    @property
    def address(self) -> tuple[str, int]:
        return self._sock.getsockname()[:2]

    def accept(self, poll_interval_s: float = 0.5) -> TcpTransport | None:
        """Next connection, or None once the listener is closed."""
        while not self._closed:
            try:
                self._sock.settimeout(poll_interval_s)
                conn, _addr = self._sock.accept()
            except (TimeoutError, socket.timeout):
                continue
            except OSError:
                return None
            return TcpTransport(conn, self._clock)
        return None

    def close(self) -> None:
        self._closed = True
        self._sock.close()
