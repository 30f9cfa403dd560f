"""Conservative null-message synchronization around one LP's kernel.

Each input link has a channel clock: the largest timestamp seen on it. The
LP may execute a local event only when its time is strictly below the
minimum channel clock (the safe time). A message stamped exactly at the
safe time can still arrive and, being a port release, would have to run
before any other event at that instant, so equality is not safe.

Outgoing promises (NULL messages) are computed from what the LP can still
do. A scheduled event can trigger a send no earlier than its own time plus
the least service time left on the way to a PortSend; an entity waiting
for a resource likewise; an entity that has not arrived yet needs at least
the declared lookahead after the safe time. The smallest of these plus the
link transfer time is the promise.
"""

from __future__ import annotations

import enum
import heapq
import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

from .errors import CausalityViolation, UnknownLabel, UnknownLink
from .kernel import Kernel, LocalReport, PortSend
from .scenario import LpSpec, Scenario
from .transport.frame import DATA, END, NULL, Message

log = logging.getLogger(__name__)

DEFAULT_NULL_QUANTUM = 100


class Horizon(enum.Enum):
    END_OF_LINKS = "end-of-links"   # the LP has no input links at all
    END_OF_TIME = "end-of-time"     # every input link has delivered END


class Status(enum.Enum):
    ADVANCED = "advanced"
    BLOCKED = "blocked"
    FINISHED = "finished"


@dataclass(frozen=True)
class Progress:
    status: Status
    until: float | Horizon | None = None


ADVANCED = Progress(Status.ADVANCED)
FINISHED = Progress(Status.FINISHED)


class MessageRecord(NamedTuple):
    timestamp: float
    source: str
    dest: str
    body: str
    seq: int


@dataclass
class ChannelState:
    source: str
    clock: float = 0.0
    ended: bool = False
    pending: list = field(default_factory=list)
    received: int = 0


@dataclass
class OutLink:
    dest: str
    transfer: float
    last_ts: float | None = None
    data_seq: int = 0
    sync_seq: int = 0
    sent: int = 0
    nulls: int = 0


def _before(t: float, safe) -> bool:
    return isinstance(safe, Horizon) or t < safe


class LogicalProcess:
    """One LP: a kernel plus its input channels and output links.

    ``send(dest, msg)`` is the only way out; the caller wires it to the
    transport. Incoming messages are handed to :meth:`on_receive`.
    """

    def __init__(self, spec: LpSpec, scenario: Scenario, send: Callable[[str, Message], None],
                 *, seed: int | None = None, trace: bool = False,
                 null_quantum: int = DEFAULT_NULL_QUANTUM):
        self.id = spec.id
        self.spec = spec
        self.end_time = scenario.end_time
        self.lookahead = spec.lookahead
        self.null_quantum = null_quantum
        self._send = send
        self.kernel = Kernel([spec], scenario.master_seed if seed is None else seed,
                             scenario.end_time, on_port_send=self._on_port_send, trace=trace)
        self.channels = {k.source: ChannelState(k.source) for k in scenario.in_links(spec.id)}
        self.out = {k.dest: OutLink(k.dest, k.transfer) for k in scenario.out_links(spec.id)}
        self.sent: list[MessageRecord] = []
        self.dropped_after_horizon = 0
        self.end_sent = False
        self.finished = False
        self._since_null = 0
        self._last_exec = 0.0
        self._last_safe: float | Horizon = 0.0 if self.channels else Horizon.END_OF_LINKS

    # -- time -------------------------------------------------------------

    def safe_time(self) -> float | Horizon:
        if not self.channels:
            return Horizon.END_OF_LINKS
        best = None
        for ch in self.channels.values():
            if not ch.ended and (best is None or ch.clock < best):
                best = ch.clock
        return Horizon.END_OF_TIME if best is None else best

    def output_bound(self) -> float | None:
        """Earliest simulation time at which this LP could still fire a PortSend."""
        bound = self.kernel.earliest_send(self.id, self.end_time)
        safe = self.safe_time()
        if not isinstance(safe, Horizon) and safe <= self.end_time:
            later = safe + self.lookahead
            bound = later if bound is None else min(bound, later)
        return bound

    # -- inbound ----------------------------------------------------------

    def on_receive(self, msg: Message) -> None:
        ch = self.channels.get(msg.label)
        if ch is None:
            raise UnknownLink(f"lp {self.id}: no input link from {msg.label!r}")
        if ch.ended:
            raise CausalityViolation(f"lp {self.id}: {msg} arrived after END from {msg.label}")
        if msg.timestamp < ch.clock:
            raise CausalityViolation(
                f"lp {self.id}: {msg} is behind channel clock {ch.clock!r} of {msg.label}")
        ch.clock = msg.timestamp
        if msg.kind == DATA:
            ch.received += 1
            heapq.heappush(ch.pending, (msg.timestamp, msg.seq, msg))
        elif msg.kind == END:
            ch.ended = True

    def resolve_delivery(self, msg: Message) -> str:
        """Route a deliverable DATA message to the CreatePort keyed by its label."""
        port = self.spec.port_for(msg.label)
        if port is None:
            raise UnknownLabel(f"lp {self.id}: no CreatePort for source {msg.label!r}")
        self.kernel.release_port_entity(self.id, port.id, msg.timestamp, msg.label, msg.seq)
        return port.id

    def _deliver(self, safe) -> None:
        for ch in self.channels.values():
            pending = ch.pending
            while pending and _before(pending[0][0], safe):
                ts, _, msg = heapq.heappop(pending)
                if ts <= self.end_time:
                    self.resolve_delivery(msg)
                else:
                    self.dropped_after_horizon += 1

    # -- outbound ---------------------------------------------------------

    def _on_port_send(self, ps: PortSend) -> None:
        self.send_data(ps.dest, ps.entity.units)

    def send_data(self, dest: str, units: int, label: str | None = None) -> Message:
        """Emit the DATA message for one batch leaving through a PortSend.

        The label defaults to this LP's id; receivers pick the CreatePort
        by it.
        """
        link = self.out.get(dest)
        if link is None:
            raise UnknownLink(f"lp {self.id}: no output link to {dest!r}")
        ts = self.kernel.clock + link.transfer
        if link.last_ts is not None and ts < link.last_ts:
            raise CausalityViolation(
                f"lp {self.id}: DATA at t={ts!r} to {dest} breaks earlier promise {link.last_ts!r}")
        link.data_seq += 1
        link.sent += 1
        link.last_ts = ts
        msg = Message(DATA, ts, label or self.id, str(units), link.data_seq)
        self.sent.append(MessageRecord(ts, self.id, dest, msg.body, msg.seq))
        self._send(dest, msg)
        return msg

    def emit_nulls(self) -> int:
        self._since_null = 0
        bound = self.output_bound()
        if bound is None:
            return 0
        n = 0
        for link in self.out.values():
            ts = bound + link.transfer
            if link.last_ts is not None and ts <= link.last_ts:
                continue
            link.sync_seq += 1
            link.nulls += 1
            link.last_ts = ts
            self._send(link.dest, Message(NULL, ts, self.id, "", link.sync_seq))
            n += 1
        return n

    def _emit_end(self) -> None:
        for link in self.out.values():
            ts = self.end_time + link.transfer
            if link.last_ts is not None and link.last_ts > ts:
                ts = link.last_ts
            link.sync_seq += 1
            link.last_ts = ts
            self._send(link.dest, Message(END, ts, self.id, "", link.sync_seq))
        self.end_sent = True

    # -- main step --------------------------------------------------------

    def step(self) -> Progress:
        if self.finished:
            return FINISHED
        safe = self.safe_time()
        if not isinstance(safe, Horizon) and not isinstance(self._last_safe, Horizon):
            assert safe >= self._last_safe, "safe time went backwards"
        self._last_safe = safe
        if self.channels:
            self._deliver(safe)

        t = self.kernel.peek_time()
        if t is not None and t <= self.end_time and _before(t, safe):
            if t < self._last_exec:
                raise CausalityViolation(f"lp {self.id}: t={t!r} after {self._last_exec!r}")
            self._last_exec = t
            self.kernel.step()
            self._since_null += 1
            if self.out and self._since_null >= self.null_quantum:
                self.emit_nulls()
            return ADVANCED

        if (t is None or t > self.end_time) and (isinstance(safe, Horizon) or safe > self.end_time):
            if not self.end_sent:
                self._emit_end()
            if all(ch.ended for ch in self.channels.values()):
                self.finished = True
                return FINISHED
            return Progress(Status.BLOCKED, safe)

        if self.out:
            self.emit_nulls()
        return Progress(Status.BLOCKED, safe)

    # -- results ----------------------------------------------------------

    def report(self) -> LocalReport:
        return self.kernel.stats_report(self.id)

    def received_counts(self) -> dict[str, int]:
        return {src: ch.received for src, ch in self.channels.items()}
