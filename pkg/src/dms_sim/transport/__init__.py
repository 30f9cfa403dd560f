"""Message-queue middleware: named queues, labeled messages, notification."""

from __future__ import annotations

import threading

from ..errors import AlreadyBound
from .address import LOCAL, QueueAddress, data_queue, sync_queue
from .frame import DATA, END, NULL, Message, decode, encode
from .queues import LocalSendHandle, QueueManager, ReceiveHandle, Selector
from .tcp import TcpConnection, TcpSendHandle, TcpServer

__all__ = [
    "DATA", "END", "NULL", "LOCAL", "Message", "Network", "QueueAddress", "QueueManager",
    "ReceiveHandle", "Selector", "TcpServer", "data_queue", "decode", "encode", "sync_queue",
]

SEND, RECEIVE = "send", "receive"


class Network:
    """Resolves queue addresses for one process.

    Addresses on host ``local`` (or on this process's own listen address)
    go straight to the local :class:`QueueManager`; anything else goes over
    a pooled TCP connection, one per remote host:port.
    """

    def __init__(self, manager: QueueManager, listen: tuple[str, int] | None = None,
                 *, retries: int = 50, retry_delay: float = 0.1):
        self.manager = manager
        self.listen = listen
        self.retries = retries
        self.retry_delay = retry_delay
        self._conns: dict[tuple[str, int], TcpConnection] = {}
        self._lock = threading.Lock()

    def _is_local(self, addr: QueueAddress) -> bool:
        if addr.is_local:
            return True
        return self.listen is not None and (addr.host, addr.port) == tuple(self.listen)

    def open_queue(self, address: QueueAddress | str, mode: str):
        if isinstance(address, str):
            address = QueueAddress.parse(address)
        if mode == RECEIVE:
            if not self._is_local(address):
                raise AlreadyBound(f"{address}: receive access is only granted on local queues")
            return self.manager.open_receive(address.queue)
        if mode != SEND:
            raise ValueError(f"mode must be 'send' or 'receive', got {mode!r}")
        if self._is_local(address):
            return self.manager.open_send(address.queue)
        if address.port is None:
            raise ValueError(f"{address}: remote queues need a port")
        key = (address.host, address.port)
        with self._lock:
            conn = self._conns.get(key)
            if conn is None:
                conn = TcpConnection(address.host, address.port,
                                     retries=self.retries, retry_delay=self.retry_delay)
                self._conns[key] = conn
        return TcpSendHandle(conn, address.queue)

    def close(self) -> None:
        with self._lock:
            for conn in self._conns.values():
                conn.close()
            self._conns.clear()
