"""One LP per process, talking to its peers over TCP.

``run_remote`` spawns a worker process per LP on this machine, collects
the ports they bind, broadcasts the resulting host map and then watches
their heartbeats. ``serve_lp`` is the same worker body for manual runs on
separate machines.
"""

from __future__ import annotations

import logging
import multiprocessing as mp
import time
from multiprocessing.connection import wait

from . import errors
from .errors import Deadlock, DmsError
from .orchestrator import RunMode, assemble, drive, lp_result, wire_lp
from .scenario import Scenario
from .transport import Network, QueueAddress, QueueManager, TcpServer

log = logging.getLogger(__name__)

BEAT_INTERVAL = 0.2
STARTUP_TIMEOUT = 30.0


def parse_host(text: str) -> tuple[str, int]:
    host, _, port = text.strip().rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"expected host:port, got {text!r}")
    return host, int(port)


def load_host_map(text: str) -> dict[str, tuple[str, int]]:
    """Parse ``<lp> <host>:<port>`` lines (``map lp -> host:port`` also accepted)."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace("->", " ").split()
        if parts[0] == "map":
            parts = parts[1:]
        if len(parts) != 2:
            raise errors.ParseError(n, f"expected '<lp> <host>:<port>', got {raw.strip()!r}")
        try:
            out[parts[0]] = parse_host(parts[1])
        except ValueError as exc:
            raise errors.ParseError(n, str(exc)) from None
    return out


def serve_lp(scenario: Scenario, lp_id: str, listen: tuple[str, int],
             hosts: dict[str, tuple[str, int]] | None = None, *, seed: int | None = None,
             trace: bool = False, null_quantum: int = 100, on_bound=None, heartbeat=None,
             server: TcpServer | None = None) -> dict:
    """Run LP ``lp_id`` to completion and return its plain-data result.

    ``hosts`` may be supplied late through ``on_bound``, which receives the
    bound port and returns the full host map.
    """
    manager = QueueManager(listen[0])
    if server is None:
        server = TcpServer(manager, lp_id, listen[0], listen[1]).start()
    bound = (server.host, server.port)
    if on_bound is not None:
        hosts = on_bound(bound)
    missing = [k.dest for k in scenario.out_links(lp_id) if k.dest not in hosts]
    if missing:
        raise errors.NotEnoughHosts(f"no address for LP(s) {', '.join(missing)}")
    net = Network(manager, listen=bound)

    def address_of(dest, queue):
        host, port = hosts[dest]
        return QueueAddress(host, queue, port)

    seed = scenario.master_seed if seed is None else seed
    try:
        lp, selector = wire_lp(lp_id, scenario, net, address_of, seed=seed, trace=trace,
                               null_quantum=null_quantum)
        drive(lp, selector, heartbeat=(lambda: heartbeat(lp)) if heartbeat else None)
        return lp_result(lp)
    finally:
        net.close()
        server.close()


# -- spawned worker -------------------------------------------------------

def _worker_main(conn, scenario: Scenario, lp_id: str, seed: int, trace: bool,
                 null_quantum: int, listen: tuple[str, int]) -> None:
    logging.basicConfig(level=logging.WARNING)
    last = [0.0]

    def on_bound(addr):
        conn.send(("bound", lp_id, addr))
        kind, hosts = conn.recv()
        if kind != "hosts":
            raise SystemExit(1)
        return hosts

    def heartbeat(lp):
        now = time.monotonic()
        if now - last[0] >= BEAT_INTERVAL:
            last[0] = now
            safe = lp.safe_time()
            conn.send(("beat", lp_id, lp.kernel.executed(lp_id) + len(lp.sent),
                       safe if isinstance(safe, float) else safe.value, lp.kernel.clock))
            if conn.poll():
                if conn.recv()[0] == "stop":
                    raise SystemExit(0)

    try:
        result = serve_lp(scenario, lp_id, listen, seed=seed, trace=trace,
                          null_quantum=null_quantum, on_bound=on_bound, heartbeat=heartbeat)
    except DmsError as exc:
        conn.send(("error", lp_id, type(exc).__name__, str(exc)))
        return
    except SystemExit:
        return
    except BaseException as exc:
        conn.send(("error", lp_id, "DmsError", f"{type(exc).__name__}: {exc}"))
        return
    conn.send(("done", lp_id, result))


def _rebuild_error(name: str, text: str) -> DmsError:
    cls = getattr(errors, name, DmsError)
    exc = DmsError.__new__(cls)
    Exception.__init__(exc, text)
    return exc


def run_remote(scenario: Scenario, seed: int, *, trace: bool = False, watchdog: float = 30.0,
               hosts: dict[str, tuple[str, int]] | None = None, null_quantum: int = 100):
    """Run every LP in its own process; LPs exchange messages only over TCP."""
    ctx = mp.get_context("spawn")
    hosts = dict(hosts or {})
    procs, pipes = {}, {}
    start = time.perf_counter()
    for spec in scenario.lps:
        listen = hosts.get(spec.id, ("127.0.0.1", 0))
        parent, child = ctx.Pipe()
        p = ctx.Process(target=_worker_main, name=f"dms-lp-{spec.id}",
                        args=(child, scenario, spec.id, seed, trace, null_quantum, listen),
                        daemon=True)
        p.start()
        child.close()
        procs[spec.id], pipes[spec.id] = p, parent

    def kill_all():
        for lp_id, p in procs.items():
            try:
                pipes[lp_id].send(("stop",))
            except OSError:
                pass
        for p in procs.values():
            p.join(timeout=1.0)
            if p.is_alive():
                p.terminate()

    try:
        bound = {}
        deadline = time.monotonic() + STARTUP_TIMEOUT
        while len(bound) < len(procs):
            ready = wait(list(pipes.values()), timeout=max(0.0, deadline - time.monotonic()))
            if not ready:
                raise errors.Unreachable("workers did not report their listen ports in time")
            for c in ready:
                msg = c.recv()
                if msg[0] == "error":
                    raise _rebuild_error(msg[2], msg[3])
                bound[msg[1]] = msg[2]
        for c in pipes.values():
            c.send(("hosts", bound))

        results: dict[str, dict] = {}
        snapshot = {lp_id: {} for lp_id in procs}
        progress = {lp_id: 0 for lp_id in procs}
        last_change = time.monotonic()
        open_pipes = dict(pipes)
        while len(results) < len(procs):
            ready = wait(list(open_pipes.values()), timeout=0.25)
            for c in ready:
                lp_id = next(k for k, v in open_pipes.items() if v is c)
                try:
                    msg = c.recv()
                except EOFError:
                    raise errors.PeerLost(f"worker for lp {lp_id} exited without a result")
                if msg[0] == "beat":
                    _, _, n, safe, clock = msg
                    snapshot[lp_id] = {"safe_time": safe, "clock": clock}
                    if n != progress[lp_id]:
                        progress[lp_id] = n
                        last_change = time.monotonic()
                elif msg[0] == "done":
                    results[lp_id] = msg[2]
                    del open_pipes[lp_id]
                    last_change = time.monotonic()
                elif msg[0] == "error":
                    raise _rebuild_error(msg[2], msg[3])
            if time.monotonic() - last_change > watchdog:
                raise Deadlock(f"no LP advanced for {watchdog} s", snapshot)
        wall = time.perf_counter() - start
    finally:
        kill_all()
    report = assemble(scenario, RunMode.REMOTE.value, seed, results, wall, trace)
    report.extra["hosts"] = {k: f"{h}:{p}" for k, (h, p) in bound.items()}
    return report
