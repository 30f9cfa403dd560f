"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the summary lines
appear at the end of the pytest output.
"""

import contextlib
import itertools
import random
import socket
import sys
import threading
import time

import pytest

from conftest import ACCEPTANCE_LINES
from dms_sim.activity import ActivityNode, Arc, ModelGraph, partition, validate_partition
from dms_sim.case_study import BATCH_SIZE, SEPARATE_ADD, TRANSFER_HOURS, build_case_study, case_study_graph
from dms_sim.errors import Deadlock
from dms_sim.orchestrator import run, trace_diff
from dms_sim.rng import Constant, Exponential, Triangular, Uniform
from dms_sim.scenario import random_scenario
from dms_sim.transport import (
    DATA, END, NULL, Message, Network, QueueAddress, QueueManager, Selector, TcpServer, decode,
    encode,
)
from dms_sim.transport.frame import MAX_LABEL


@contextlib.contextmanager
def criterion(name):
    try:
        yield
    except BaseException as exc:
        ACCEPTANCE_LINES.append(f"FAIL  {name}: {type(exc).__name__}: {exc}")
        print(ACCEPTANCE_LINES[-1])
        raise
    ACCEPTANCE_LINES.append(f"PASS  {name}")
    print(ACCEPTANCE_LINES[-1])


@pytest.fixture(scope="module")
def case_seq():
    return run(build_case_study(), "seq")


def test_oracle_equivalence_local(case_seq):
    with criterion("oracle equivalence: local == sequential on the case study, < 10 s"):
        sc = build_case_study()
        assert sc.end_time == 5000.0
        start = time.perf_counter()
        rep = run(sc, "local")
        elapsed = time.perf_counter() - start
        assert trace_diff(case_seq, rep) == []
        assert rep.data_multiset() == case_seq.data_multiset()
        assert rep.departures() == case_seq.departures()
        assert elapsed < 10.0, f"took {elapsed:.2f} s"


def test_remote_equivalence(case_seq):
    with criterion("remote equivalence: TCP workers == sequential on the case study, < 30 s"):
        start = time.perf_counter()
        rep = run(build_case_study(), "remote")
        elapsed = time.perf_counter() - start
        assert trace_diff(case_seq, rep) == []
        assert rep.data_multiset() == case_seq.data_multiset()
        assert rep.departures() == case_seq.departures()
        assert elapsed < 30.0, f"took {elapsed:.2f} s"


def _per_lp_times(trace):
    times = {}
    for line in trace:
        f = dict(x.split("=", 1) for x in line.split())
        times.setdefault(f["lp"], []).append((float(f["t"]), int(f["seq"])))
    return times


def test_causality():
    with criterion("causality: >= 1e5 events, executed timestamps never decrease per LP"):
        total = 0
        for sc in (build_case_study(), random_scenario(5, 5, cyclic=True, end_time=2000.0)):
            # LogicalProcess.step raises CausalityViolation on any backwards event
            rep = run(sc, "local", trace=True)
            times = _per_lp_times(rep.trace)
            for lp, rows in times.items():
                rows.sort(key=lambda r: r[1])          # executed order
                ts = [t for t, _ in rows]
                assert all(a <= b for a, b in zip(ts, ts[1:])), f"lp {lp} went backwards"
                assert len(rows) == rep.local[lp].events
                total += len(rows)
        assert total >= 100_000, f"only {total} events"


def test_conservation():
    with criterion("conservation: sends == receives, units == messages x 1000 on every link"):
        assert (BATCH_SIZE, SEPARATE_ADD, TRANSFER_HOURS) == (1000, 999, 10.0)
        sc = build_case_study()
        rep = run(sc, "local")
        ports = {(lp.id, b.source): b.next for lp in sc.lps for b in lp.blocks.values()
                 if b.kind == "CreatePort"}
        for link in sc.links:
            key = f"{link.source}->{link.dest}"
            assert rep.sent[key] == rep.received[key] > 0, key
            msgs = [m for m in rep.messages if (m.source, m.dest) == (link.source, link.dest)]
            assert len(msgs) == rep.sent[key]
            assert sum(int(m.body) for m in msgs) == len(msgs) * 1000
            sep = ports[(link.dest, link.source)]
            delivered = sum(1 for m in msgs if m.timestamp <= sc.end_time)
            assert rep.local[link.dest].separated[sep] == delivered * 1000, key


def test_progress():
    with criterion("progress: 100 random acyclic/cyclic 2-5 LP runs finish, no watchdog"):
        failures = []
        for trial in range(100):
            n = 2 + trial % 4
            sc = random_scenario(1000 + trial, n, cyclic=trial % 2 == 1)
            try:
                rep = run(sc, "local", watchdog=30.0)
            except Deadlock as exc:
                failures.append(f"trial {trial}: {exc} {exc.snapshot}")
                continue
            if set(rep.status.values()) != {"finished"}:
                failures.append(f"trial {trial}: {rep.status}")
            if rep.sent != rep.received:
                failures.append(f"trial {trial}: lost messages")
        assert not failures, failures[:3]


def _random_connected(rnd, n):
    leaves = [f"v{i}" for i in range(n)]
    nodes = [ActivityNode("root", "root")] + [ActivityNode(v, v, "root") for v in leaves]
    arcs = []
    for j in range(1, n):
        i = rnd.randrange(j)
        arcs.append(Arc(leaves[i], leaves[j]) if rnd.random() < 0.5 else Arc(leaves[j], leaves[i]))
    for _ in range(rnd.randint(0, 2 * n)):
        a, b = rnd.sample(leaves, 2)
        arcs.append(Arc(a, b, rnd.choice(["input", "control", "output", "mechanism"])))
    return ModelGraph(nodes, arcs)


def _brute_force(graph, k):
    best = None
    for labels in itertools.product(range(k), repeat=len(graph.leaves)):
        if len(set(labels)) < k:
            continue
        where = dict(zip(graph.leaves, labels))
        cut = sum(1 for a in graph.arcs if where[a.source] != where[a.target])
        best = cut if best is None else min(best, cut)
    return best


def test_partitioner_optimality():
    with criterion("partitioner: cut == brute-force minimum (>= 200 graphs), case study 3-way cut 3"):
        rnd = random.Random(2003)
        checked = 0
        for _ in range(120):
            n = rnd.randint(3, 8)
            g = _random_connected(rnd, n)
            for k in (2, 3):
                p = partition(g, k)
                assert validate_partition(g, p).valid
                assert p.cut_weight == _brute_force(g, k)
                checked += 1
        assert checked >= 200
        p = partition(case_study_graph(), 3)
        assert p.blocks == [("A",), ("B",), ("C",)] and p.cut_weight == 3
        assert partition(case_study_graph(), 2).cut_weight == _brute_force(case_study_graph(), 2)


def test_transport():
    with criterion("transport: 1e4 round trips incl. 0/max fields, TCP seq audit, DIRECT alias"):
        rnd = random.Random(77)
        max_label = "x" * MAX_LABEL
        for i in range(10_000):
            kind = (DATA, NULL, END)[i % 3]
            label = (max_label, "", "".join(rnd.choices("ABCé", k=rnd.randint(1, 9))))[i % 7 % 3]
            body = ""
            if kind == DATA and i % 5:
                body = "".join(rnd.choices("0123456789", k=rnd.choice([1, 4, 300, 70_000])))
            m = Message(kind, rnd.choice([0.0, rnd.uniform(0, 1e6)]), label, body,
                        rnd.choice([0, rnd.randrange(2**64), 2**64 - 1]))
            assert decode(encode(m)) == m
        big = Message(DATA, 1.0, max_label, "7" * (32 << 20), 2**64 - 1)
        assert decode(encode(big)) == big

        qm = QueueManager()
        server = TcpServer(qm, "B").start()
        sel = Selector([qm.open_receive("pq-B"), qm.open_receive("sq-B")])
        sent = {}

        def sender(label, n):
            net = Network(QueueManager())
            data = net.open_queue(f"127.0.0.1:{server.port}/pq-B", "send")
            sync = net.open_queue(f"127.0.0.1:{server.port}/sq-B", "send")
            sent[label] = [Message(DATA, float(i), label, "1000", i) for i in range(1, n + 1)]
            for i, m in enumerate(sent[label], 1):
                data.send(m)
                if i % 100 == 0:
                    sync.send(Message(NULL, float(i), label, "", i // 100))
            sync.send(Message(END, float(n), label, "", n // 100 + 1))
            net.close()

        threads = [threading.Thread(target=sender, args=(lab, 2500)) for lab in "ACDE"]
        for t in threads:
            t.start()
        got, ends = {}, 0
        while ends < len(threads):
            m = sel.poll(10.0)     # raises SequenceError on reorder or duplicate
            assert m is not None
            if m.kind == END:
                ends += 1
            elif m.kind == DATA:
                got.setdefault(m.label, []).append(m)
        for t in threads:
            t.join()
        server.close()
        assert got == sent and sum(map(len, got.values())) == 10_000
        assert not qm.errors

        alias = QueueAddress.parse(r"DIRECT=OS:ENG-4130-10\private$\pq-B")
        assert alias == QueueAddress("ENG-4130-10", "pq-B")
        assert str(alias) == "ENG-4130-10/pq-B"


@pytest.mark.parametrize("dist, analytic", [
    (Constant(7.5), 7.5),
    (Uniform(8.0, 12.0), (8.0 + 12.0) / 2),
    (Exponential(0.2), 0.2),
    (Triangular(20.0, 30.0, 45.0), (20.0 + 30.0 + 45.0) / 3),
])
def test_sampler_means(dist, analytic):
    with criterion(f"samplers: mean of 1e6 draws within 1% for {dist}"):
        rng = random.Random(31)
        n = 1_000_000
        sample = dist.sample
        mean = sum(sample(rng) for _ in range(n)) / n
        assert abs(mean - analytic) <= 0.01 * analytic, f"mean {mean!r} vs {analytic!r}"


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
