"""Sequential block-based simulation kernel.

One kernel runs inside each logical process. In oracle mode a single kernel
hosts every LP's block network at once; blocks, resources, sequence
counters and random streams are all keyed by LP, so each sub-network sees
exactly the same event order and variates as it would in its own process.

Entities move between blocks instantaneously inside one event. Only three
things ever sit on the calendar: Create arrivals, Process departures and
port releases (entities injected from another LP).
"""

from __future__ import annotations

import csv
import heapq
import io
import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple

from .errors import PastEvent, UnknownBlock, UnknownResource
from .rng import make_stream
from .scenario import Block, LpSpec

log = logging.getLogger(__name__)

# same-time ordering: injected messages, then departures, then new arrivals
PRIO_RELEASE = 0
PRIO_DEPARTURE = 1
PRIO_ARRIVAL = 2


@dataclass(slots=True)
class Entity:
    id: int
    kind: str
    units: int
    created_at: float


class Event(NamedTuple):
    """Calendar entry, ordered by (time, priority, lp, source, seq).

    Local events have ``source == ""`` and take ``seq`` from the owning LP's
    counter. Port releases carry the sending LP and that link's message
    sequence number instead, which makes their order independent of when
    the message happened to be delivered.
    """

    time: float
    priority: int
    lp: str
    source: str
    seq: int
    target: str
    entity: Entity | None


class PortSend(NamedTuple):
    lp: str
    block: str
    dest: str
    entity: Entity
    time: float


class _ResourceState:
    __slots__ = ("id", "capacity", "busy", "queue", "busy_time", "in_service", "max_busy",
                 "min_reach")

    def __init__(self, rid: str, capacity: int):
        self.id = rid
        self.capacity = capacity
        self.busy = 0
        self.max_busy = 0
        self.queue: deque = deque()
        self.busy_time = 0.0
        self.in_service: dict[int, float] = {}
        self.min_reach = math.inf


class _BlockState:
    __slots__ = ("lp", "spec", "id", "kind", "next", "rng", "resource", "count",
                 "held_units", "held_kind", "reach", "units")

    def __init__(self, lp: str, spec: Block, rng, resource):
        self.lp = lp
        self.spec = spec
        self.id = spec.id
        self.kind = spec.kind
        self.next: _BlockState | None = None
        self.rng = rng
        self.resource: _ResourceState | None = resource
        self.count = 0
        self.held_units = 0
        self.held_kind: str | None = None
        self.units = 0
        # least simulated delay from entering this block to reaching a PortSend
        self.reach = math.inf


@dataclass
class LocalReport:
    lp_id: str
    final_clock: float
    elapsed: float
    events: int = 0
    utilization: dict[str, float] = field(default_factory=dict)
    busy_time: dict[str, float] = field(default_factory=dict)
    throughput: dict[str, int] = field(default_factory=dict)
    departures: dict[str, int] = field(default_factory=dict)
    units_out: dict[str, int] = field(default_factory=dict)
    # units leaving each Separate block, i.e. reconstituted batches
    separated: dict[str, int] = field(default_factory=dict)

    def records(self) -> list[tuple[str, str, str, float | int]]:
        rows: list[tuple[str, str, str, float | int]] = [
            (self.lp_id, "", "final_clock", self.final_clock),
            (self.lp_id, "", "elapsed", self.elapsed),
            (self.lp_id, "", "events", self.events),
        ]
        for rid in sorted(self.utilization):
            rows.append((self.lp_id, rid, "utilization", self.utilization[rid]))
            rows.append((self.lp_id, rid, "busy_time", self.busy_time[rid]))
        for bid in sorted(self.throughput):
            rows.append((self.lp_id, bid, "throughput", self.throughput[bid]))
        for kind in sorted(self.departures):
            rows.append((self.lp_id, kind, "departures", self.departures[kind]))
            rows.append((self.lp_id, kind, "units_out", self.units_out[kind]))
        for bid in sorted(self.separated):
            rows.append((self.lp_id, bid, "separated", self.separated[bid]))
        return rows

    def to_text(self) -> str:
        return "".join(f"{lp} {obj or '-'} {metric} {value!r}\n"
                       for lp, obj, metric, value in self.records())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lp_id", "object_id", "metric", "value"])
        w.writerows(self.records())
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "lp_id": self.lp_id, "final_clock": self.final_clock, "elapsed": self.elapsed,
            "events": self.events, "utilization": self.utilization, "busy_time": self.busy_time,
            "throughput": self.throughput, "departures": self.departures,
            "units_out": self.units_out, "separated": self.separated,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LocalReport":
        return cls(**d)

    @classmethod
    def from_records(cls, rows: Iterable[tuple]) -> list["LocalReport"]:
        reports: dict[str, LocalReport] = {}
        for lp, obj, metric, value in rows:
            r = reports.setdefault(lp, cls(lp, 0.0, 0.0))
            if metric in ("final_clock", "elapsed"):
                setattr(r, metric, float(value))
            elif metric == "events":
                r.events = int(value)
            elif metric in ("utilization", "busy_time"):
                getattr(r, metric)[obj] = float(value)
            else:
                getattr(r, metric)[obj] = int(value)
        return list(reports.values())


class Kernel:
    """Event calendar, clock and block network for one or more LPs."""

    def __init__(
        self,
        lps: Iterable[LpSpec],
        master_seed: int,
        end_time: float,
        *,
        on_port_send: Callable[[PortSend], None] | None = None,
        trace: bool = False,
    ):
        self.clock = 0.0
        self.end_time = end_time
        self.master_seed = master_seed
        self.on_port_send = on_port_send or self.port_log_append
        self.port_log: list[PortSend] = []
        self.trace: list[tuple] | None = [] if trace else None

        self._calendar: list[Event] = []
        self._lps: dict[str, LpSpec] = {}
        self._seq: dict[str, int] = {}
        self._entity_ids: dict[str, int] = {}
        self._executed: dict[str, int] = {}
        self._last_time: dict[str, float] = {}
        self._blocks: dict[tuple[str, str], _BlockState] = {}
        self._resources: dict[tuple[str, str], _ResourceState] = {}
        self._departures: dict[str, dict[str, int]] = {}
        self._units_out: dict[str, dict[str, int]] = {}
        self._handlers = {
            "Create": self._fire_create,
            "CreatePort": self._fire_create,
            "Process": self._fire_process,
            "Batch": self._fire_batch,
            "Separate": self._fire_separate,
            "PortSend": self._fire_port_send,
            "Dispose": self._fire_dispose,
        }
        for lp in lps:
            self._load(lp)

    # -- construction -----------------------------------------------------

    def _load(self, lp: LpSpec) -> None:
        lid = lp.id
        self._lps[lid] = lp
        self._seq[lid] = 0
        self._entity_ids[lid] = 0
        self._executed[lid] = 0
        self._last_time[lid] = 0.0
        self._departures[lid] = {}
        self._units_out[lid] = {}
        for r in lp.resources.values():
            if r.capacity < 1:
                raise UnknownResource(f"lp {lid}: resource {r.id} has capacity {r.capacity}")
            self._resources[(lid, r.id)] = _ResourceState(r.id, r.capacity)
        for b in lp.blocks.values():
            if b.kind not in self._handlers:
                raise UnknownBlock(f"lp {lid}: block {b.id} has unknown kind {b.kind!r}")
            res = None
            if b.kind == "Process":
                res = self._resources.get((lid, b.resource))
                if res is None:
                    raise UnknownResource(f"lp {lid}: block {b.id} uses undeclared resource {b.resource!r}")
            rng = make_stream(self.master_seed, lid, b.id) if b.dist is not None else None
            self._blocks[(lid, b.id)] = _BlockState(lid, b, rng, res)
        for b in lp.blocks.values():
            if b.next is not None:
                succ = self._blocks.get((lid, b.next))
                if succ is None:
                    raise UnknownBlock(f"lp {lid}: block {b.id} has unknown successor {b.next!r}")
                self._blocks[(lid, b.id)].next = succ
        self._compute_reach(lid)
        for b in lp.blocks.values():
            if b.kind == "Create":
                self._schedule_local(lid, b.first, PRIO_ARRIVAL, b.id, None)

    def _compute_reach(self, lid: str) -> None:
        done: set[str] = set()

        def reach(st: _BlockState) -> float:
            if st.id in done:
                return st.reach
            done.add(st.id)  # block graphs are acyclic, this only guards recursion
            if st.kind == "PortSend":
                st.reach = 0.0
            elif st.kind == "Dispose" or st.next is None:
                st.reach = math.inf
            else:
                st.reach = reach(st.next)
                if st.kind == "Process":
                    st.reach += st.spec.dist.lower_bound
            return st.reach

        for (owner, _), st in self._blocks.items():
            if owner == lid:
                reach(st)
                if st.kind == "Process":
                    st.resource.min_reach = min(st.resource.min_reach, st.reach)

    def block(self, lp: str, block_id: str) -> Block:
        try:
            return self._blocks[(lp, block_id)].spec
        except KeyError:
            raise UnknownBlock(f"lp {lp}: no block {block_id!r}") from None

    # -- calendar ---------------------------------------------------------

    def schedule(self, event: Event) -> None:
        if event.time < self.clock:
            raise PastEvent(f"event at t={event.time!r} scheduled with clock at {self.clock!r}")
        heapq.heappush(self._calendar, event)

    def _schedule_local(self, lp: str, time: float, priority: int, target: str,
                        entity: Entity | None) -> None:
        self._seq[lp] += 1
        self.schedule(Event(time, priority, lp, "", self._seq[lp], target, entity))

    def release_port_entity(self, lp: str, port: str, release_time: float,
                            source: str, link_seq: int) -> None:
        """Schedule a CreatePort firing that injects one unit-entity at ``release_time``."""
        st = self._blocks.get((lp, port))
        if st is None or st.kind != "CreatePort":
            raise UnknownBlock(f"lp {lp}: {port!r} is not a CreatePort block")
        self.schedule(Event(release_time, PRIO_RELEASE, lp, source, link_seq, port, None))

    def peek_time(self) -> float | None:
        return self._calendar[0].time if self._calendar else None

    def earliest_send(self, lp: str, horizon: float | None = None) -> float | None:
        """Lower bound on the time any PortSend of ``lp`` can fire from the
        current state, ignoring entities that have not arrived yet. A
        queued entity cannot start before some departure frees its resource,
        so it is accounted for at that departure.

        Events after ``horizon`` are left out since they never execute.
        """
        best = math.inf
        blocks = self._blocks
        for ev in self._calendar:
            if ev.lp != lp or (horizon is not None and ev.time > horizon):
                continue
            st = blocks[(lp, ev.target)]
            if st.kind == "Process":
                # the departing entity moves on; a queued one may take its place
                r = st.next.reach
                if st.resource.queue and st.resource.min_reach < r:
                    r = st.resource.min_reach
            else:
                r = st.reach
            if ev.time + r < best:
                best = ev.time + r
        return None if best == math.inf else best

    def pending(self) -> int:
        return len(self._calendar)

    def advance(self) -> Event | None:
        if not self._calendar:
            return None
        ev = heapq.heappop(self._calendar)
        if ev.time < self.clock:
            raise PastEvent(f"calendar produced t={ev.time!r} behind clock {self.clock!r}")
        self.clock = ev.time
        return ev

    def step(self) -> Event | None:
        """Pop and execute the next event."""
        ev = self.advance()
        if ev is None:
            return None
        lp = ev.lp
        if ev.time < self._last_time[lp]:
            raise PastEvent(f"lp {lp}: executed t={ev.time!r} after {self._last_time[lp]!r}")
        self._last_time[lp] = ev.time
        self._executed[lp] += 1
        st = self._blocks[(lp, ev.target)]
        if st.kind == "Process":
            entity = self._depart(st, ev.entity)
        else:
            entity = self._new_entity(st)
            if st.kind == "Create":
                self._schedule_local(lp, self.clock + st.spec.dist.sample(st.rng),
                                     PRIO_ARRIVAL, st.id, None)
        if self.trace is not None:
            self.trace.append((ev.time, lp, st.id, entity.kind, entity.units, self._executed[lp]))
        if st.kind == "Process":
            self._forward(st, entity)
        else:
            self.fire_block(lp, st.id, entity)
        return ev

    def run(self, until: float | None = None) -> int:
        """Execute every event with time <= ``until`` (default: end_time)."""
        until = self.end_time if until is None else until
        n = 0
        cal = self._calendar
        while cal and cal[0].time <= until:
            self.step()
            n += 1
        return n

    # -- blocks -----------------------------------------------------------

    def fire_block(self, lp: str, block_id: str, entity: Entity) -> None:
        st = self._blocks.get((lp, block_id))
        if st is None:
            raise UnknownBlock(f"lp {lp}: no block {block_id!r}")
        st.count += 1
        self._handlers[st.kind](st, entity)

    def _forward(self, st: _BlockState, entity: Entity) -> None:
        nxt = st.next
        nxt.count += 1
        self._handlers[nxt.kind](nxt, entity)

    def _new_entity(self, st: _BlockState) -> Entity:
        self._entity_ids[st.lp] += 1
        units = st.spec.units if st.kind == "Create" else 1
        return Entity(self._entity_ids[st.lp], st.spec.entity_kind, units, self.clock)

    def _fire_create(self, st: _BlockState, entity: Entity) -> None:
        self._forward(st, entity)

    def _fire_process(self, st: _BlockState, entity: Entity) -> None:
        res = st.resource
        if res.busy < res.capacity:
            self._start_service(st, entity)
        else:
            res.queue.append((st, entity))

    def _start_service(self, st: _BlockState, entity: Entity) -> None:
        res = st.resource
        res.busy += 1
        if res.busy > res.max_busy:
            res.max_busy = res.busy
        assert res.busy <= res.capacity
        res.in_service[entity.id] = self.clock
        self._schedule_local(st.lp, self.clock + st.spec.dist.sample(st.rng),
                             PRIO_DEPARTURE, st.id, entity)

    def _depart(self, st: _BlockState, entity: Entity) -> Entity:
        res = st.resource
        res.busy -= 1
        res.busy_time += self.clock - res.in_service.pop(entity.id)
        if res.queue:
            nst, nent = res.queue.popleft()
            self._start_service(nst, nent)
        if st.spec.relabel:
            entity.kind = st.spec.relabel
        return entity

    def _fire_batch(self, st: _BlockState, entity: Entity) -> None:
        if st.held_kind is None:
            st.held_kind = entity.kind
        st.held_units += entity.units
        if st.held_units >= st.spec.size:
            self._entity_ids[st.lp] += 1
            batch = Entity(self._entity_ids[st.lp], st.held_kind, st.held_units, self.clock)
            st.held_units = 0
            st.held_kind = None
            self._forward(st, batch)

    def _fire_separate(self, st: _BlockState, entity: Entity) -> None:
        entity.units += st.spec.add
        st.units += entity.units
        self._forward(st, entity)

    def _fire_port_send(self, st: _BlockState, entity: Entity) -> None:
        self.on_port_send(PortSend(st.lp, st.id, st.spec.dest, entity, self.clock))

    def port_log_append(self, send: PortSend) -> None:
        self.port_log.append(send)

    def _fire_dispose(self, st: _BlockState, entity: Entity) -> None:
        deps = self._departures[st.lp]
        deps[entity.kind] = deps.get(entity.kind, 0) + 1
        units = self._units_out[st.lp]
        units[entity.kind] = units.get(entity.kind, 0) + entity.units

    # -- reporting --------------------------------------------------------

    def resource_state(self, lp: str, rid: str) -> _ResourceState:
        try:
            return self._resources[(lp, rid)]
        except KeyError:
            raise UnknownResource(f"lp {lp}: no resource {rid!r}") from None

    def executed(self, lp: str) -> int:
        return self._executed[lp]

    def stats_report(self, lp: str, elapsed: float | None = None) -> LocalReport:
        elapsed = self.end_time if elapsed is None else elapsed
        spec = self._lps[lp]
        rep = LocalReport(lp, self._last_time[lp], elapsed, self._executed[lp])
        for rid in spec.resources:
            res = self._resources[(lp, rid)]
            busy = res.busy_time
            for eid in sorted(res.in_service):
                busy += max(0.0, elapsed - res.in_service[eid])
            rep.busy_time[rid] = busy
            rep.utilization[rid] = busy / (res.capacity * elapsed) if elapsed > 0 else 0.0
        for bid in spec.blocks:
            rep.throughput[bid] = self._blocks[(lp, bid)].count
        rep.departures = dict(sorted(self._departures[lp].items()))
        rep.units_out = dict(sorted(self._units_out[lp].items()))
        rep.separated = {bid: self._blocks[(lp, bid)].units
                         for bid, b in spec.blocks.items() if b.kind == "Separate"}
        return rep

    def trace_lines(self, lp: str | None = None) -> list[str]:
        if self.trace is None:
            return []
        return [format_trace(row) for row in self.trace if lp is None or row[1] == lp]


def format_trace(row: tuple) -> str:
    t, lp, block, kind, units, seq = row
    return f"t={t:.17g} lp={lp} block={block} entity_kind={kind} units={units} seq={seq}"


def dump_report_json(reports: list[LocalReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True)
