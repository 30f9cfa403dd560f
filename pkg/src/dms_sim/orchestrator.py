"""Run scenarios sequentially or distributed, and compare the results.

Sequential mode flattens every LP into one kernel and replaces each link
by an internal delay; it is the reference the distributed modes must
reproduce exactly.
"""

from __future__ import annotations

import enum
import json
import logging
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DmsError, Deadlock, SimulationError
from .kernel import Kernel, LocalReport, PortSend, format_trace
from .scenario import Scenario, check
from .sync import LogicalProcess, MessageRecord, Status
from .transport import Network, QueueAddress, QueueManager, Selector, data_queue, sync_queue
from .transport.frame import DATA

log = logging.getLogger(__name__)

DEFAULT_WATCHDOG = 30.0


class RunMode(str, enum.Enum):
    SEQUENTIAL = "seq"
    LOCAL = "local"
    REMOTE = "remote"


def link_key(source: str, dest: str) -> str:
    return f"{source}->{dest}"


@dataclass
class GlobalReport:
    scenario: str
    mode: str
    seed: int
    end_time: float
    local: dict[str, LocalReport]
    messages: list[MessageRecord]
    sent: dict[str, int]
    received: dict[str, int]
    status: dict[str, str]
    wall_seconds: float = 0.0
    trace: list[str] | None = None
    extra: dict = field(default_factory=dict)

    def data_multiset(self) -> list[tuple[float, str, str, str]]:
        return sorted((m.timestamp, m.source, m.dest, m.body) for m in self.messages)

    def departures(self) -> dict[str, dict[str, int]]:
        return {lp: dict(r.departures) for lp, r in sorted(self.local.items())}

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario, "mode": self.mode, "seed": self.seed,
            "end_time": self.end_time,
            "local": {lp: r.to_dict() for lp, r in self.local.items()},
            "messages": [list(m) for m in self.messages],
            "sent": self.sent, "received": self.received, "status": self.status,
            "wall_seconds": self.wall_seconds, "extra": self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "GlobalReport":
        return cls(
            scenario=d["scenario"], mode=d["mode"], seed=d["seed"], end_time=d["end_time"],
            local={lp: LocalReport.from_dict(r) for lp, r in d["local"].items()},
            messages=[MessageRecord(*m) for m in d["messages"]],
            sent=d["sent"], received=d["received"], status=d["status"],
            wall_seconds=d.get("wall_seconds", 0.0), extra=d.get("extra", {}),
        )

    def summary(self) -> str:
        lines = [f"{self.scenario} [{self.mode}] seed={self.seed} end_time={self.end_time!r} "
                 f"wall={self.wall_seconds:.2f}s"]
        for lp in sorted(self.local):
            r = self.local[lp]
            util = ", ".join(f"{k}={v:.3f}" for k, v in sorted(r.utilization.items()))
            deps = ", ".join(f"{k}={v}" for k, v in r.departures.items()) or "none"
            lines.append(f"  lp {lp}: {self.status.get(lp, '?')} events={r.events} "
                         f"departures[{deps}] utilization[{util}]")
        for key in sorted(set(self.sent) | set(self.received)):
            lines.append(f"  link {key}: sent={self.sent.get(key, 0)} "
                         f"received={self.received.get(key, 0)}")
        return "\n".join(lines)


# -- sequential oracle ----------------------------------------------------

class FlatModel:
    """All LPs in one kernel; links become internal delays."""

    def __init__(self, scenario: Scenario, seed: int | None = None, trace: bool = False):
        self.scenario = scenario
        self.links = {(k.source, k.dest): k for k in scenario.links}
        self.link_seq = {key: 0 for key in self.links}
        self.messages: list[MessageRecord] = []
        self.kernel = Kernel(scenario.lps, scenario.master_seed if seed is None else seed,
                             scenario.end_time, on_port_send=self._on_port_send, trace=trace)

    def _on_port_send(self, ps: PortSend) -> None:
        key = (ps.lp, ps.dest)
        link = self.links[key]
        self.link_seq[key] += 1
        seq = self.link_seq[key]
        ts = ps.time + link.transfer
        self.messages.append(MessageRecord(ts, ps.lp, ps.dest, str(ps.entity.units), seq))
        port = self.scenario.lp(ps.dest).port_for(ps.lp)
        self.kernel.release_port_entity(ps.dest, port.id, ts, ps.lp, seq)

    def run(self) -> int:
        return self.kernel.run(self.scenario.end_time)


def flatten(scenario: Scenario, seed: int | None = None, trace: bool = False) -> FlatModel:
    return FlatModel(scenario, seed, trace)


def _run_sequential(scenario: Scenario, seed: int, trace: bool) -> GlobalReport:
    flat = flatten(scenario, seed, trace)
    flat.run()
    counts = {link_key(*key): n for key, n in flat.link_seq.items()}
    trace_lines = None
    if trace:
        rows = sorted(flat.kernel.trace, key=lambda r: (r[0], r[1], r[5]))
        trace_lines = [format_trace(r) for r in rows]
    return GlobalReport(
        scenario=scenario.name, mode=RunMode.SEQUENTIAL.value, seed=seed,
        end_time=scenario.end_time,
        local={lp.id: flat.kernel.stats_report(lp.id) for lp in scenario.lps},
        messages=flat.messages, sent=counts, received=dict(counts),
        status={lp.id: "finished" for lp in scenario.lps}, trace=trace_lines,
    )


# -- distributed, one thread per LP ---------------------------------------

class Aborted(DmsError):
    pass


def drive(lp: LogicalProcess, selector: Selector, *, stop: threading.Event | None = None,
          poll_interval: float = 0.05, heartbeat=None) -> None:
    """Run one LP to completion, feeding it messages from ``selector``."""
    ready = selector.ready
    poll = selector.poll
    receive = lp.on_receive
    step = lp.step
    beat_every = 512
    n = 0
    while True:
        if ready():
            msg = poll(0.0)
            while msg is not None:
                receive(msg)
                msg = poll(0.0)
        p = step()
        if p.status is Status.ADVANCED:
            n += 1
            if heartbeat is not None and n % beat_every == 0:
                heartbeat()
            continue
        if p.status is Status.FINISHED:
            return
        msg = poll(poll_interval)
        if msg is not None:
            receive(msg)
        if heartbeat is not None:
            heartbeat()
        if stop is not None and stop.is_set():
            raise Aborted(f"lp {lp.id} stopped by orchestrator")


def wire_lp(spec_id: str, scenario: Scenario, net: Network, address_of, *, seed: int,
            trace: bool, null_quantum: int):
    """Open an LP's receive queues and send handles and build its LogicalProcess."""
    local_host = QueueAddress("local", data_queue(spec_id))
    pq = net.open_queue(local_host, "receive")
    sq = net.open_queue(QueueAddress("local", sync_queue(spec_id)), "receive")
    handles = {}
    for link in scenario.out_links(spec_id):
        handles[link.dest] = (
            net.open_queue(address_of(link.dest, data_queue(link.dest)), "send"),
            net.open_queue(address_of(link.dest, sync_queue(link.dest)), "send"),
        )

    def send(dest, msg):
        data_h, sync_h = handles[dest]
        (data_h if msg.kind == DATA else sync_h).send(msg)

    lp = LogicalProcess(scenario.lp(spec_id), scenario, send, seed=seed, trace=trace,
                        null_quantum=null_quantum)
    return lp, Selector([pq, sq])


def _run_local(scenario: Scenario, seed: int, trace: bool, watchdog: float,
               null_quantum: int) -> GlobalReport:
    manager = QueueManager()
    net = Network(manager)
    for lp in scenario.lps:
        manager.queue(data_queue(lp.id))
        manager.queue(sync_queue(lp.id))
    procs = {}
    for spec in scenario.lps:
        procs[spec.id] = wire_lp(spec.id, scenario, net, lambda lp, q: QueueAddress("local", q),
                                 seed=seed, trace=trace, null_quantum=null_quantum)

    stop = threading.Event()
    errors: dict[str, BaseException] = {}

    def body(lp_id):
        lp, selector = procs[lp_id]
        try:
            drive(lp, selector, stop=stop)
        except Aborted:
            pass
        except BaseException as exc:  # surfaced to the caller below
            errors[lp_id] = exc
            stop.set()

    threads = [threading.Thread(target=body, args=(lp_id,), name=f"lp-{lp_id}", daemon=True)
               for lp_id in procs]
    start = time.perf_counter()
    for t in threads:
        t.start()

    def progress():
        return sum(lp.kernel.executed(lp.id) + len(lp.sent) for lp, _ in procs.values())

    last, last_change = progress(), time.monotonic()
    while any(t.is_alive() for t in threads):
        for t in threads:
            t.join(timeout=0.05)
        if stop.is_set():
            break
        now = progress()
        if now != last:
            last, last_change = now, time.monotonic()
        elif time.monotonic() - last_change > watchdog:
            stop.set()
            for t in threads:
                t.join(timeout=1.0)
            snapshot = {lp_id: _snap(lp) for lp_id, (lp, _) in procs.items()}
            raise Deadlock(f"no LP advanced for {watchdog} s", snapshot)
    for t in threads:
        t.join()
    wall = time.perf_counter() - start
    if errors:
        raise next(iter(errors.values()))
    return _collect(scenario, RunMode.LOCAL.value, seed, {k: v[0] for k, v in procs.items()},
                    wall, trace)


def _snap(lp: LogicalProcess) -> dict:
    safe = lp.safe_time()
    return {"safe_time": safe if isinstance(safe, float) else safe.value,
            "clock": lp.kernel.clock, "finished": lp.finished}


def _collect(scenario: Scenario, mode: str, seed: int, lps: dict[str, LogicalProcess],
             wall: float, trace: bool) -> GlobalReport:
    results = {lp_id: lp_result(lp) for lp_id, lp in lps.items()}
    return assemble(scenario, mode, seed, results, wall, trace)


def lp_result(lp: LogicalProcess) -> dict:
    """Everything the orchestrator needs from one finished LP, as plain data."""
    return {
        "report": lp.report().to_dict(),
        "sent": [list(m) for m in lp.sent],
        "received": lp.received_counts(),
        "status": "finished" if lp.finished else "incomplete",
        "trace": list(lp.kernel.trace) if lp.kernel.trace is not None else None,
        "nulls": {dest: link.nulls for dest, link in lp.out.items()},
    }


def assemble(scenario: Scenario, mode: str, seed: int, results: dict[str, dict], wall: float,
             trace: bool) -> GlobalReport:
    messages, sent, received, nulls = [], {}, {}, {}
    for lp_id, res in results.items():
        for m in res["sent"]:
            messages.append(MessageRecord(*m))
        for k in scenario.out_links(lp_id):
            sent[link_key(lp_id, k.dest)] = sum(1 for m in res["sent"] if m[2] == k.dest)
            nulls[link_key(lp_id, k.dest)] = res["nulls"].get(k.dest, 0)
        for src, n in res["received"].items():
            received[link_key(src, lp_id)] = n
    messages.sort(key=lambda m: (m.source, m.dest, m.seq))
    trace_lines = None
    if trace:
        rows = [tuple(r) for res in results.values() for r in (res["trace"] or [])]
        rows.sort(key=lambda r: (r[0], r[1], r[5]))
        trace_lines = [format_trace(r) for r in rows]
    return GlobalReport(
        scenario=scenario.name, mode=mode, seed=seed, end_time=scenario.end_time,
        local={lp: LocalReport.from_dict(res["report"]) for lp, res in sorted(results.items())},
        messages=messages, sent=sent, received=received,
        status={lp: res["status"] for lp, res in results.items()},
        wall_seconds=wall, trace=trace_lines, extra={"nulls": nulls},
    )


# -- public entry points --------------------------------------------------

def run(scenario: Scenario, mode: RunMode | str = RunMode.SEQUENTIAL, seed: int | None = None,
        *, trace: bool = False, watchdog: float = DEFAULT_WATCHDOG, hosts: dict | None = None,
        null_quantum: int = 100) -> GlobalReport:
    """Execute one replication of ``scenario`` and aggregate the reports.

    ``hosts`` maps LP ids to ``host:port`` for remote mode; without it every
    worker listens on an ephemeral localhost port.
    """
    check(scenario)
    mode = RunMode(mode)
    seed = scenario.master_seed if seed is None else seed
    start = time.perf_counter()
    if mode is RunMode.SEQUENTIAL:
        report = _run_sequential(scenario, seed, trace)
        report.wall_seconds = time.perf_counter() - start
        return report
    if mode is RunMode.LOCAL:
        return _run_local(scenario, seed, trace, watchdog, null_quantum)
    from .worker import run_remote
    return run_remote(scenario, seed, trace=trace, watchdog=watchdog, hosts=hosts,
                      null_quantum=null_quantum)


def run_replications(scenario: Scenario, mode: RunMode | str = RunMode.SEQUENTIAL,
                     **kwargs) -> list[GlobalReport]:
    base = scenario.master_seed
    return [run(scenario, mode, seed=base + r, **kwargs) for r in range(scenario.replications)]


def trace_diff(a: GlobalReport, b: GlobalReport, context: int = 2) -> list[str]:
    """Empty iff DATA-message multisets and per-LP departure counts match exactly."""
    out: list[str] = []
    ma, mb = a.data_multiset(), b.data_multiset()
    if ma != mb:
        i = next((i for i, (x, y) in enumerate(zip(ma, mb)) if x != y), min(len(ma), len(mb)))
        out.append(f"DATA messages diverge at #{i} ({len(ma)} vs {len(mb)} messages)")
        lo = max(0, i - context)
        for j in range(lo, i + context + 1):
            x = _fmt_msg(ma[j]) if j < len(ma) else "<none>"
            y = _fmt_msg(mb[j]) if j < len(mb) else "<none>"
            mark = "!" if x != y else " "
            out.append(f"{mark} {j}: {x} | {y}")
    da, db = a.departures(), b.departures()
    for lp in sorted(set(da) | set(db)):
        if da.get(lp) != db.get(lp):
            out.append(f"lp {lp} departures differ: {da.get(lp)} | {db.get(lp)}")
    return out


def _fmt_msg(m) -> str:
    t, src, dst, body = m
    return f"t={t:.17g} {src}->{dst} body={body}"


def diff_trace_lines(a: list[str], b: list[str], context: int = 2) -> list[str]:
    if a == b:
        return []
    i = next((i for i, (x, y) in enumerate(zip(a, b)) if x != y), min(len(a), len(b)))
    out = [f"traces diverge at line {i + 1} ({len(a)} vs {len(b)} lines)"]
    for j in range(max(0, i - context), i + context + 1):
        x = a[j] if j < len(a) else "<none>"
        y = b[j] if j < len(b) else "<none>"
        out.append(f"{'!' if x != y else ' '} {j + 1}: {x} | {y}")
    return out


def write_report(report: GlobalReport, path: str | Path) -> None:
    """JSON for ``.json`` paths; otherwise the lp_id,object_id,metric,value CSV."""
    path = Path(path)
    if path.suffix == ".json":
        path.write_text(report.to_json(), encoding="utf-8")
        return
    parts = []
    for i, lp in enumerate(sorted(report.local)):
        csv_text = report.local[lp].to_csv()
        parts.append(csv_text if i == 0 else csv_text.split("\n", 1)[1])
    path.write_text("".join(parts), encoding="utf-8")


def read_report(path: str | Path) -> GlobalReport:
    return GlobalReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, DmsError):
        return exc.exit_code
    return 1


__all__ = [
    "DEFAULT_WATCHDOG", "FlatModel", "GlobalReport", "RunMode", "SimulationError", "diff_trace_lines",
    "drive", "flatten", "read_report", "run", "run_replications", "trace_diff", "write_report",
]
