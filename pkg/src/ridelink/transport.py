"""Duplex peer link built from two simplex TCP connections.

Each endpoint runs a connecting client and an accepting server, mirroring
the vehicle/co-pilot sub-architecture: the local client connects to the
peer's server and *receives* application messages and heartbeats; the
local server accepts the peer's client and *sends* them. The peer is
considered up once both links are established and a heartbeat has been
seen; heartbeat silence longer than the timeout counts as a disconnect
even while TCP stays open.

Heartbeats never reach the application: only PeerConnected /
PeerDisconnected edges and decoded non-heartbeat messages are delivered
on the inbound event queue, in receipt order.
"""

from __future__ import annotations

import logging
import queue
import socket
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Optional, Tuple

from . import codec
from .messages import Envelope, Heartbeat, MessageKind, ProtocolError

log = logging.getLogger(__name__)

Address = Tuple[str, int]

_POLL_S = 0.05
_CONNECT_TIMEOUT_S = 1.0
SEND_BUFFER_LIMIT = 1024

DEFAULT_HEARTBEAT_INTERVAL_MS = 500
DEFAULT_HEARTBEAT_TIMEOUT_MS = 2000
DEFAULT_RECONNECT_DELAY_MS = 1000


class TransportError(Exception):
    """Base class for transport failures."""


class ConfigError(TransportError):
    """Endpoint configuration violates an invariant; rejected before any I/O."""


class BindFailed(TransportError):
    """The local server address could not be bound."""


class QueueFull(TransportError):
    """The bounded outbound buffer is full."""


def parse_address(text: str) -> Address:
    """Parse 'host:port' into an address tuple."""
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise ConfigError(f"address must be host:port, got {text!r}")
    try:
        return host, int(port)
    except ValueError:
        raise ConfigError(f"bad port in address {text!r}") from None


def format_address(addr: Address) -> str:
    return f"{addr[0]}:{addr[1]}"


@dataclass
class EndpointConfig:
    """Addresses and timing for one endpoint.

    peer_server_address is where the local client connects;
    local_bind_address is where the local server accepts.
    """

    peer_server_address: Address
    local_bind_address: Address
    heartbeat_interval_ms: int = DEFAULT_HEARTBEAT_INTERVAL_MS
    heartbeat_timeout_ms: int = DEFAULT_HEARTBEAT_TIMEOUT_MS
    reconnect_delay_ms: int = DEFAULT_RECONNECT_DELAY_MS

    def __post_init__(self) -> None:
        for name in ("heartbeat_interval_ms", "heartbeat_timeout_ms", "reconnect_delay_ms"):
            value = getattr(self, name)
            if not isinstance(value, int) or value <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.heartbeat_timeout_ms <= self.heartbeat_interval_ms:
            raise ConfigError(
                "heartbeat_timeout_ms must exceed heartbeat_interval_ms "
                f"({self.heartbeat_timeout_ms} <= {self.heartbeat_interval_ms})"
            )


@dataclass(frozen=True)
class ConnectionStatus:
    """connected is heartbeat recency: a heartbeat arrived within the timeout."""

    connected: bool
    last_heartbeat_received_ms: Optional[int]


@dataclass(frozen=True)
class MessageReceived:
    message: Envelope


@dataclass(frozen=True)
class PeerConnected:
    pass


@dataclass(frozen=True)
class PeerDisconnected:
    pass


class _SendQueue:
    """Bounded FIFO with front-requeue for frames caught by a dying link."""

    def __init__(self, limit: int):
        self._limit = limit
        self._items: deque = deque()
        self._cond = threading.Condition()

    def put(self, item: bytes) -> None:
        with self._cond:
            if len(self._items) >= self._limit:
                raise QueueFull(f"outbound buffer limit {self._limit} reached")
            self._items.append(item)
            self._cond.notify()

    def get(self, timeout: float) -> Optional[bytes]:
        with self._cond:
            if not self._items:
                self._cond.wait(timeout)
            if not self._items:
                return None
            return self._items.popleft()

    def requeue(self, item: bytes) -> None:
        with self._cond:
            self._items.appendleft(item)
            self._cond.notify()

    def __len__(self) -> int:
        with self._cond:
            return len(self._items)


class _FrameAccumulator:
    """Reassembles length-prefixed frames from arbitrary byte chunks."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> None:
        self._buf += data

    def frames(self):
        while True:
            if len(self._buf) < 4:
                return
            length = int.from_bytes(self._buf[:4], "big")
            if length > codec.MAX_FRAME_BYTES:
                raise codec.FrameTooLarge(f"declared length {length}")
            if len(self._buf) < 4 + length:
                return
            body = bytes(self._buf[4 : 4 + length])
            del self._buf[: 4 + length]
            yield codec.decode(body)


class Endpoint:
    """One side of the dual-link peer connection.

    Inbound events arrive on ``events`` (a Queue); outbound messages go
    through ``send``; ``connection_status`` reads heartbeat recency.
    """

    def __init__(self, config: EndpointConfig):
        self.config = config
        self.events: "queue.Queue" = queue.Queue()
        self._sendq = _SendQueue(SEND_BUFFER_LIMIT)
        self._stop = threading.Event()
        self._lock = threading.Lock()
        self._client_up = False
        self._server_up = False
        self._peer_up = False
        self._last_hb_ms: Optional[int] = None
        self._server_sock: Optional[socket.socket] = None
        self._threads: list = []
        self._epoch = time.monotonic()
        self.bound_address: Optional[Address] = None

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> "Endpoint":
        srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            srv.bind(self.config.local_bind_address)
        except OSError as exc:
            srv.close()
            raise BindFailed(f"cannot bind {format_address(self.config.local_bind_address)}: {exc}")
        srv.listen(1)
        srv.settimeout(_POLL_S)
        self._server_sock = srv
        self.bound_address = srv.getsockname()[:2]
        for target in (self._client_loop, self._server_loop):
            t = threading.Thread(target=target, daemon=True, name=target.__name__)
            t.start()
            self._threads.append(t)
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._server_sock is not None:
            try:
                self._server_sock.close()
            except OSError:
                pass
        for t in self._threads:
            t.join(timeout=2.0)

    # -- public surface ----------------------------------------------------

    def send(self, env: Envelope) -> None:
        """Validate, encode and enqueue one message (FIFO, bounded buffer)."""
        body = codec.encode(env)  # raises InvalidMessage before anything is buffered
        frame = len(body).to_bytes(4, "big") + body
        self._sendq.put(frame)

    def connection_status(self) -> ConnectionStatus:
        with self._lock:
            last = self._last_hb_ms
        if last is None:
            return ConnectionStatus(connected=False, last_heartbeat_received_ms=None)
        fresh = (self._now_ms() - last) <= self.config.heartbeat_timeout_ms
        return ConnectionStatus(connected=fresh, last_heartbeat_received_ms=last)

    def pending_outbound(self) -> int:
        return len(self._sendq)

    # -- internals ---------------------------------------------------------

    def _now_ms(self) -> int:
        return int((time.monotonic() - self._epoch) * 1000)

    def _hb_fresh_locked(self) -> bool:
        if self._last_hb_ms is None:
            return False
        return (self._now_ms() - self._last_hb_ms) <= self.config.heartbeat_timeout_ms

    def _check_edges(self) -> None:
        with self._lock:
            up = self._client_up and self._server_up and self._hb_fresh_locked()
            if up != self._peer_up:
                self._peer_up = up
                self.events.put(PeerConnected() if up else PeerDisconnected())

    def _client_loop(self) -> None:
        while not self._stop.is_set():
            try:
                sock = socket.create_connection(
                    self.config.peer_server_address, timeout=_CONNECT_TIMEOUT_S
                )
            except OSError:
                self._stop.wait(self.config.reconnect_delay_ms / 1000)
                continue
            sock.settimeout(_POLL_S)
            with self._lock:
                self._client_up = True
            self._check_edges()
            acc = _FrameAccumulator()
            try:
                while not self._stop.is_set():
                    try:
                        chunk = sock.recv(65536)
                    except socket.timeout:
                        self._check_edges()
                        continue
                    if not chunk:
                        break
                    acc.feed(chunk)
                    for env in acc.frames():
                        if env.kind == MessageKind.HEARTBEAT:
                            with self._lock:
                                self._last_hb_ms = self._now_ms()
                        else:
                            self.events.put(MessageReceived(env))
                    self._check_edges()
            except ProtocolError as exc:
                log.warning("dropping inbound link after corrupt frame: %s", exc)
            except OSError:
                pass
            finally:
                try:
                    sock.close()
                except OSError:
                    pass
                with self._lock:
                    self._client_up = False
                self._check_edges()
            self._stop.wait(self.config.reconnect_delay_ms / 1000)

    def _server_loop(self) -> None:
        interval_s = self.config.heartbeat_interval_ms / 1000
        srv = self._server_sock
        while not self._stop.is_set():
            try:
                conn, _addr = srv.accept()
            except socket.timeout:
                continue
            except OSError:
                return  # server socket closed during stop()
            conn.settimeout(_CONNECT_TIMEOUT_S)
            with self._lock:
                self._server_up = True
            self._check_edges()
            next_hb = time.monotonic()
            pending: Optional[bytes] = None
            try:
                while not self._stop.is_set():
                    now = time.monotonic()
                    if now >= next_hb:
                        hb = Envelope.of(Heartbeat(timestamp_ms=self._now_ms()))
                        body = codec.encode(hb)
                        conn.sendall(len(body).to_bytes(4, "big") + body)
                        next_hb = now + interval_s
                    wait = min(_POLL_S, max(0.0, next_hb - time.monotonic()))
                    with self._lock:
                        peer_up = self._peer_up
                    if not peer_up:
                        # keep messages buffered until the peer is fully up;
                        # heartbeats above still probe the link
                        self._stop.wait(wait)
                        continue
                    pending = self._sendq.get(timeout=wait)
                    if pending is not None:
                        conn.sendall(pending)
                        pending = None
            except OSError:
                if pending is not None:
                    self._sendq.requeue(pending)
            finally:
                try:
                    conn.close()
                except OSError:
                    pass
                with self._lock:
                    self._server_up = False
                self._check_edges()
