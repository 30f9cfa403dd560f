"""In-process message queues.

A :class:`QueueManager` owns the named queues of one process. Senders in
the same process put into it directly; the TCP server puts frames read
from remote senders. Each queue has at most one receiver.

Every enqueued message gets an arrival number from a manager-wide counter,
so a receiver reading several queues through a :class:`Selector` sees them
in the order they arrived. The LP's data and sync queues rely on this to
keep one sender's DATA and NULL traffic in send order.
"""

from __future__ import annotations

import threading
import time
from collections import deque
from typing import Callable

from ..errors import AlreadyBound, Closed, SequenceError, TransportError
from .frame import Message


class _Queue:
    __slots__ = ("name", "items", "bound", "last_seq")

    def __init__(self, name: str):
        self.name = name
        self.items: deque[tuple[int, Message]] = deque()
        self.bound = False
        self.last_seq: dict[str, int] = {}


class QueueManager:
    def __init__(self, host: str = "local"):
        self.host = host
        self.cond = threading.Condition()
        self._queues: dict[str, _Queue] = {}
        self._arrivals = 0
        self.errors: list[TransportError] = []

    def queue(self, name: str) -> _Queue:
        q = self._queues.get(name)
        if q is None:
            with self.cond:
                q = self._queues.setdefault(name, _Queue(name))
        return q

    def put(self, name: str, msg: Message) -> None:
        q = self.queue(name)
        with self.cond:
            self._arrivals += 1
            q.items.append((self._arrivals, msg))
            self.cond.notify_all()

    def fail(self, exc: TransportError) -> None:
        """Record a transport failure; blocked receivers wake up and raise it."""
        with self.cond:
            self.errors.append(exc)
            self.cond.notify_all()

    def open_receive(self, name: str) -> "ReceiveHandle":
        q = self.queue(name)
        with self.cond:
            if q.bound:
                raise AlreadyBound(f"queue {name!r} already has a receiver")
            q.bound = True
        return ReceiveHandle(self, q)

    def open_send(self, name: str) -> "LocalSendHandle":
        self.queue(name)
        return LocalSendHandle(self, name)


class LocalSendHandle:
    def __init__(self, manager: QueueManager, name: str):
        self.manager = manager
        self.name = name
        self.closed = False

    def send(self, msg: Message) -> None:
        if self.closed:
            raise Closed(f"send handle for {self.name!r} is closed")
        self.manager.put(self.name, msg)

    def close(self) -> None:
        self.closed = True


class ReceiveHandle:
    """Consumer end of one queue.

    Messages are audited on the way out: for each sender label the sequence
    number must strictly increase, which catches both reordering and
    duplicate delivery.
    """

    def __init__(self, manager: QueueManager, q: _Queue):
        self.manager = manager
        self._q = q
        self.name = q.name
        self.closed = False
        self._callback: Callable[[Message], None] | None = None

    def __len__(self) -> int:
        return len(self._q.items)

    def _pop(self) -> Message:
        _, msg = self._q.items.popleft()
        last = self._q.last_seq.get(msg.label)
        if last is not None and msg.seq <= last:
            raise SequenceError(
                f"queue {self.name}: seq {msg.seq} from {msg.label!r} after {last}")
        self._q.last_seq[msg.label] = msg.seq
        return msg

    def poll(self, timeout: float | None = 0.0) -> Message | None:
        """Return the next message, waiting up to ``timeout`` seconds (None = forever)."""
        return Selector([self]).poll(timeout)

    def notify(self, callback: Callable[[Message], None]) -> None:
        """Arm a callback that receives each message; stays armed after every delivery."""
        if self.closed:
            raise Closed(f"queue {self.name!r} is closed")
        self._callback = callback

    def dispatch(self, timeout: float | None = 0.0) -> int:
        """Deliver queued messages to the armed callback on the calling thread.

        Waits up to ``timeout`` for the first message, then drains whatever
        is queued. Messages arriving while the callback runs are picked up
        after it returns, in arrival order.
        """
        if self._callback is None:
            raise TransportError(f"queue {self.name!r} has no callback armed")
        n = 0
        msg = self.poll(timeout)
        while msg is not None:
            self._callback(msg)
            n += 1
            msg = self.poll(0.0)
        return n

    def close(self) -> None:
        with self.manager.cond:
            self.closed = True
            self._q.bound = False
            self._callback = None
            self.manager.cond.notify_all()


class Selector:
    """Arrival-ordered reader over several receive handles of one manager."""

    def __init__(self, handles: list[ReceiveHandle]):
        if not handles:
            raise ValueError("selector needs at least one handle")
        managers = {id(h.manager) for h in handles}
        if len(managers) != 1:
            raise ValueError("all handles must belong to the same queue manager")
        self.handles = handles
        self.manager = handles[0].manager

    def ready(self) -> bool:
        # deque length reads are atomic; a stale answer only delays a poll
        return any(h._q.items for h in self.handles) or bool(self.manager.errors)

    def _take(self) -> Message | None:
        best = None
        for h in self.handles:
            if h.closed:
                raise Closed(f"queue {h.name!r} is closed")
            items = h._q.items
            if items and (best is None or items[0][0] < best._q.items[0][0]):
                best = h
        return best._pop() if best is not None else None

    def poll(self, timeout: float | None = 0.0) -> Message | None:
        deadline = None if timeout is None else time.monotonic() + timeout
        cond = self.manager.cond
        with cond:
            while True:
                msg = self._take()
                if msg is not None:
                    return msg
                if self.manager.errors:
                    raise self.manager.errors[0]
                if deadline is None:
                    cond.wait()
                    continue
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return None
                cond.wait(remaining)
