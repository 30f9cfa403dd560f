"""TCP backend: one long-lived connection per (sender process, receiver host).

Frames are streamed back to back. The receiving side serves exactly one
LP (one LP per workstation), so a frame's kind picks its queue: DATA goes
to ``pq-<lp>``, NULL and END go to ``sq-<lp>``. Both queues are filled by
the same reader thread, so per-connection order survives the split.
"""

from __future__ import annotations

import logging
import socket
import threading
import time

from ..errors import AlreadyBound, Closed, MalformedFrame, PeerLost, TransportError, Unreachable
from .address import data_queue, sync_queue
from .frame import DATA, END, Message, encode, read_frame
from .queues import QueueManager

log = logging.getLogger(__name__)


class TcpServer:
    def __init__(self, manager: QueueManager, lp_id: str, host: str = "127.0.0.1", port: int = 0):
        self.manager = manager
        self.lp_id = lp_id
        try:
            self._sock = socket.create_server((host, port))
        except OSError as exc:
            raise AlreadyBound(f"cannot listen on {host}:{port}: {exc}") from None
        self.host, self.port = self._sock.getsockname()[:2]
        self._closing = False
        self._threads: list[threading.Thread] = []
        self._conns: list[socket.socket] = []
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name=f"tcp-accept-{lp_id}", daemon=True)

    def start(self) -> "TcpServer":
        self.manager.queue(data_queue(self.lp_id))
        self.manager.queue(sync_queue(self.lp_id))
        self._accept_thread.start()
        return self

    def _accept_loop(self) -> None:
        while not self._closing:
            try:
                conn, peer = self._sock.accept()
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            self._conns.append(conn)
            t = threading.Thread(target=self._read_loop, args=(conn, peer),
                                 name=f"tcp-read-{self.lp_id}-{peer}", daemon=True)
            self._threads.append(t)
            t.start()

    def _read_loop(self, conn: socket.socket, peer) -> None:
        reader = conn.makefile("rb")
        saw_end = False
        try:
            while True:
                msg = read_frame(reader.read)
                if msg is None:
                    break
                saw_end |= msg.kind == END
                name = data_queue(self.lp_id) if msg.kind == DATA else sync_queue(self.lp_id)
                self.manager.put(name, msg)
        except MalformedFrame as exc:
            self.manager.fail(exc)
            return
        except OSError as exc:
            if not self._closing:
                self.manager.fail(PeerLost(f"connection from {peer} failed: {exc}"))
            return
        finally:
            reader.close()
            conn.close()
        if not saw_end and not self._closing:
            self.manager.fail(PeerLost(f"connection from {peer} closed without END"))

    def close(self) -> None:
        self._closing = True
        try:
            self._sock.close()
        except OSError:
            pass
        for c in self._conns:
            try:
                c.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass


class TcpConnection:
    def __init__(self, host: str, port: int, *, retries: int = 50, retry_delay: float = 0.1):
        last: Exception | None = None
        for _ in range(max(1, retries)):
            try:
                self._sock = socket.create_connection((host, port), timeout=5.0)
                break
            except OSError as exc:
                last = exc
                time.sleep(retry_delay)
        else:
            raise Unreachable(f"cannot connect to {host}:{port}: {last}")
        self._sock.settimeout(None)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._lock = threading.Lock()
        self.closed = False
        self.peer = (host, port)

    def send_frame(self, frame: bytes) -> None:
        with self._lock:
            if self.closed:
                raise Closed(f"connection to {self.peer} is closed")
            try:
                self._sock.sendall(frame)
            except OSError as exc:
                raise Unreachable(f"send to {self.peer} failed: {exc}") from None

    def close(self) -> None:
        with self._lock:
            if self.closed:
                return
            self.closed = True
            try:
                self._sock.shutdown(socket.SHUT_WR)
            except OSError:
                pass
            self._sock.close()


class TcpSendHandle:
    def __init__(self, conn: TcpConnection, queue_name: str):
        self.conn = conn
        self.name = queue_name
        self.closed = False

    def send(self, msg: Message) -> None:
        if self.closed:
            raise Closed(f"send handle for {self.name!r} is closed")
        # the remote side routes by kind, so the kind must agree with the queue
        if self.name.startswith("pq-") and msg.kind != DATA:
            raise TransportError(f"{self.name} only carries DATA messages")
        if self.name.startswith("sq-") and msg.kind == DATA:
            raise TransportError(f"{self.name} does not carry DATA messages")
        self.conn.send_frame(encode(msg))

    def close(self) -> None:
        self.closed = True
