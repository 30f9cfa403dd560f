"""Declarative run description: logical processes, block networks, links.

Scenarios live in ``.dms`` files, a line-oriented keyword format::

    scenario case_study
    seed 20031
    end_time 5000
    replications 1

    link A -> B transfer=10.0

    lp A lookahead=1.0
      resource mill_x capacity=1
      block create_x Create kind=X interarrival=Exponential(0.2) next=proc_x
      block proc_x Process resource=mill_x service=Uniform(0.1,0.18) next=batch_x
      block batch_x Batch size=1000 next=send_b
      block send_b PortSend to=B

``resource`` and ``block`` lines belong to the most recent ``lp`` line.
Indentation is cosmetic and ``#`` starts a comment.
"""

from __future__ import annotations

import math
import random
import shlex
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParseError, ValidationError
from .rng import Distribution, Exponential, Triangular, Uniform

BLOCK_KINDS = ("Create", "CreatePort", "Process", "Batch", "Separate", "PortSend", "Dispose")

# block kind -> (file key, Block attribute, converter); order is the save order
_BLOCK_KEYS = {
    "Create": [("kind", "entity_kind", str), ("interarrival", "dist", Distribution.parse),
               ("first", "first", float), ("units", "units", int)],
    "CreatePort": [("from", "source", str), ("kind", "entity_kind", str)],
    "Process": [("resource", "resource", str), ("service", "dist", Distribution.parse),
                ("relabel", "relabel", str)],
    "Batch": [("size", "size", int)],
    "Separate": [("add", "add", int)],
    "PortSend": [("to", "dest", str)],
    "Dispose": [],
}
_REQUIRED = {
    "Create": ("entity_kind", "dist"),
    "CreatePort": ("source", "entity_kind"),
    "Process": ("resource", "dist"),
    "Batch": ("size",),
    "Separate": ("add",),
    "PortSend": ("dest",),
    "Dispose": (),
}
_TERMINAL = ("PortSend", "Dispose")


@dataclass
class Block:
    id: str
    kind: str
    next: str | None = None
    entity_kind: str | None = None
    dist: Distribution | None = None
    first: float = 0.0
    units: int = 1
    resource: str | None = None
    relabel: str | None = None
    size: int | None = None
    add: int | None = None
    dest: str | None = None
    source: str | None = None


@dataclass
class Resource:
    id: str
    capacity: int = 1


@dataclass
class LpSpec:
    id: str
    lookahead: float
    resources: dict[str, Resource] = field(default_factory=dict)
    blocks: dict[str, Block] = field(default_factory=dict)

    def add_resource(self, rid: str, capacity: int = 1) -> Resource:
        self.resources[rid] = Resource(rid, capacity)
        return self.resources[rid]

    def add_block(self, block: Block) -> Block:
        self.blocks[block.id] = block
        return block

    def port_for(self, source: str) -> Block | None:
        for b in self.blocks.values():
            if b.kind == "CreatePort" and b.source == source:
                return b
        return None


@dataclass(frozen=True)
class Link:
    source: str
    dest: str
    transfer: float


@dataclass
class Scenario:
    name: str
    lps: list[LpSpec]
    links: list[Link]
    master_seed: int = 1
    end_time: float = 5000.0
    replications: int = 1

    def lp(self, lp_id: str) -> LpSpec:
        for lp in self.lps:
            if lp.id == lp_id:
                return lp
        raise KeyError(lp_id)

    def in_links(self, lp_id: str) -> list[Link]:
        return [k for k in self.links if k.dest == lp_id]

    def out_links(self, lp_id: str) -> list[Link]:
        return [k for k in self.links if k.source == lp_id]

    def link(self, source: str, dest: str) -> Link:
        for k in self.links:
            if k.source == source and k.dest == dest:
                return k
        raise KeyError((source, dest))


# -- validation -----------------------------------------------------------

def validate(scenario: Scenario) -> list[str]:
    """Return every problem found; an empty list means the scenario is runnable."""
    problems: list[str] = []
    if not (math.isfinite(scenario.end_time) and scenario.end_time > 0):
        problems.append(f"end_time must be positive, got {scenario.end_time}")
    if scenario.replications < 1:
        problems.append("replications must be >= 1")
    if not 0 <= scenario.master_seed < 2**64:
        problems.append("seed must fit in 64 unsigned bits")

    ids = [lp.id for lp in scenario.lps]
    for dup in sorted({i for i in ids if ids.count(i) > 1}):
        problems.append(f"duplicate lp {dup!r}")
    known = set(ids)

    seen_links = set()
    for k in scenario.links:
        tag = f"link {k.source} -> {k.dest}"
        for end in (k.source, k.dest):
            if end not in known:
                problems.append(f"{tag}: unknown lp {end!r}")
        if k.source == k.dest:
            problems.append(f"{tag}: self-link")
        if (k.source, k.dest) in seen_links:
            problems.append(f"{tag}: duplicate link")
        seen_links.add((k.source, k.dest))
        if not (math.isfinite(k.transfer) and k.transfer >= 0):
            problems.append(f"{tag}: transfer time must be >= 0")

    for lp in scenario.lps:
        problems.extend(_validate_lp(lp, scenario))
    return problems


def _validate_lp(lp: LpSpec, scenario: Scenario) -> list[str]:
    out = []
    where = f"lp {lp.id}"
    if lp.lookahead is None or not (math.isfinite(lp.lookahead) and lp.lookahead > 0):
        out.append(f"{where}: lookahead must be positive, got {lp.lookahead}")
    for r in lp.resources.values():
        if r.capacity < 1:
            out.append(f"{where}: resource {r.id} capacity must be >= 1")

    for b in lp.blocks.values():
        bw = f"{where} block {b.id}"
        if b.kind not in BLOCK_KINDS:
            out.append(f"{bw}: unknown kind {b.kind!r}")
            continue
        for attr in _REQUIRED[b.kind]:
            if getattr(b, attr) is None:
                out.append(f"{bw}: missing {attr}")
        if b.kind in _TERMINAL:
            if b.next is not None:
                out.append(f"{bw}: {b.kind} cannot have a successor")
        elif b.next is None:
            out.append(f"{bw}: missing successor")
        elif b.next not in lp.blocks:
            out.append(f"{bw}: unknown successor {b.next!r}")
        if b.kind == "Process" and b.resource is not None and b.resource not in lp.resources:
            out.append(f"{bw}: undeclared resource {b.resource!r}")
        if b.kind == "Batch" and b.size is not None and b.size < 1:
            out.append(f"{bw}: batch size must be >= 1")
        if b.kind == "Separate" and b.add is not None and b.add < 0:
            out.append(f"{bw}: added units must be >= 0")
        if b.kind == "Create":
            if b.units < 1:
                out.append(f"{bw}: units must be >= 1")
            if not (math.isfinite(b.first) and b.first >= 0):
                out.append(f"{bw}: first arrival must be >= 0")

    cycle = _find_cycle(lp)
    if cycle:
        out.append(f"{where}: block cycle {' -> '.join(cycle)}")

    sends = [b.dest for b in lp.blocks.values() if b.kind == "PortSend"]
    ports = [b.source for b in lp.blocks.values() if b.kind == "CreatePort"]
    outs = sorted(k.dest for k in scenario.out_links(lp.id))
    ins = sorted(k.source for k in scenario.in_links(lp.id))
    if sorted(x for x in sends if x is not None) != outs:
        out.append(f"{where}: PortSend destinations {sorted(map(str, sends))} do not match out-links {outs}")
    if sorted(x for x in ports if x is not None) != ins:
        out.append(f"{where}: CreatePort sources {sorted(map(str, ports))} do not match in-links {ins}")
    return out


def _find_cycle(lp: LpSpec) -> list[str] | None:
    state: dict[str, int] = {}
    for start in lp.blocks:
        path = []
        cur: str | None = start
        while cur is not None and cur in lp.blocks and state.get(cur) is None:
            state[cur] = 1
            path.append(cur)
            cur = lp.blocks[cur].next
        if cur is not None and state.get(cur) == 1 and cur in path:
            return path[path.index(cur):] + [cur]
        for p in path:
            state[p] = 2
    return None


def check(scenario: Scenario) -> Scenario:
    problems = validate(scenario)
    if problems:
        raise ValidationError(problems)
    return scenario


def effective_lookahead_check(scenario: Scenario) -> list[str]:
    """Warn where a declared lookahead exceeds the minimum input-to-output delay.

    Each CreatePort starts a chain (blocks have one successor, so chains never
    fork); chains ending in a PortSend are the input-to-output paths. The
    bound of a path is the sum of its Process service lower bounds.
    """
    warnings = []
    for lp in scenario.lps:
        for port in lp.blocks.values():
            if port.kind != "CreatePort":
                continue
            bound, unbounded, path = _path_bound(lp, port.id)
            if path is None:
                continue
            if lp.lookahead > bound:
                tag = " (unbounded-below path)" if unbounded else ""
                warnings.append(
                    f"lp {lp.id}: lookahead {lp.lookahead!r} exceeds minimum processing "
                    f"time {bound!r} on {' -> '.join(path)}{tag}"
                )
    return warnings


def _path_bound(lp: LpSpec, start: str):
    bound = 0.0
    unbounded = False
    path = []
    cur: str | None = start
    seen = set()
    while cur is not None and cur not in seen:
        seen.add(cur)
        b = lp.blocks[cur]
        path.append(cur)
        if b.kind == "Process" and b.dist is not None:
            bound += b.dist.lower_bound
            unbounded |= not b.dist.bounded_below
        if b.kind == "PortSend":
            return bound, unbounded, path
        cur = b.next
    return bound, unbounded, None


# -- file format ----------------------------------------------------------

def loads(text: str, path: str | None = None) -> Scenario:
    sc = Scenario(name="scenario", lps=[], links=[])
    current: LpSpec | None = None
    header_seen = set()

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            words = shlex.split(line)
        except ValueError as exc:
            raise ParseError(lineno, str(exc), path) from None
        head, rest = words[0], words[1:]

        def fail(reason: str):
            raise ParseError(lineno, reason, path)

        try:
            if head in ("scenario", "seed", "end_time", "replications"):
                if head in header_seen:
                    fail(f"duplicate {head!r}")
                header_seen.add(head)
                if len(rest) != 1:
                    fail(f"{head} takes one value")
                if head == "scenario":
                    sc.name = rest[0]
                elif head == "seed":
                    sc.master_seed = int(rest[0])
                elif head == "end_time":
                    sc.end_time = float(rest[0])
                else:
                    sc.replications = int(rest[0])
            elif head == "link":
                if len(rest) < 3 or rest[1] != "->":
                    fail("expected: link <from> -> <to> transfer=<hours>")
                kv = _kv(rest[3:], fail)
                if set(kv) != {"transfer"}:
                    fail("link takes exactly transfer=<hours>")
                sc.links.append(Link(rest[0], rest[2], float(kv["transfer"])))
            elif head == "lp":
                if not rest:
                    fail("expected: lp <id> lookahead=<hours>")
                kv = _kv(rest[1:], fail)
                if set(kv) != {"lookahead"}:
                    fail("lp takes exactly lookahead=<hours>")
                if any(lp.id == rest[0] for lp in sc.lps):
                    fail(f"duplicate lp {rest[0]!r}")
                current = LpSpec(rest[0], float(kv["lookahead"]))
                sc.lps.append(current)
            elif head == "resource":
                if current is None:
                    fail("resource outside an lp section")
                if not rest:
                    fail("expected: resource <id> capacity=<n>")
                kv = _kv(rest[1:], fail)
                if not set(kv) <= {"capacity"}:
                    fail("resource takes only capacity=<n>")
                if rest[0] in current.resources:
                    fail(f"duplicate resource {rest[0]!r}")
                current.add_resource(rest[0], int(kv.get("capacity", "1")))
            elif head == "block":
                if current is None:
                    fail("block outside an lp section")
                if len(rest) < 2:
                    fail("expected: block <id> <Kind> key=value ...")
                bid, kind = rest[0], rest[1]
                if kind not in BLOCK_KINDS:
                    fail(f"unknown block kind {kind!r}")
                if bid in current.blocks:
                    fail(f"duplicate block {bid!r}")
                kv = _kv(rest[2:], fail)
                block = Block(bid, kind)
                allowed = {key: (attr, conv) for key, attr, conv in _BLOCK_KEYS[kind]}
                if kind not in _TERMINAL:
                    allowed["next"] = ("next", str)
                for key, value in kv.items():
                    if key not in allowed:
                        fail(f"{kind} does not take {key}=")
                    if value == "?":
                        fail(f"unfilled placeholder for {key}=")
                    attr, conv = allowed[key]
                    setattr(block, attr, conv(value))
                current.add_block(block)
            else:
                fail(f"unknown keyword {head!r}")
        except ValueError as exc:
            raise ParseError(lineno, str(exc), path) from None
    return sc


def _kv(words, fail) -> dict[str, str]:
    out = {}
    for w in words:
        key, sep, value = w.partition("=")
        if not sep or not key:
            fail(f"expected key=value, got {w!r}")
        if key in out:
            fail(f"duplicate key {key!r}")
        out[key] = value
    return out


def load(path: str | Path) -> Scenario:
    path = Path(path)
    sc = loads(path.read_text(encoding="utf-8"), str(path))
    return check(sc)


def dumps(scenario: Scenario) -> str:
    lines = [
        f"scenario {scenario.name}",
        f"seed {scenario.master_seed}",
        f"end_time {scenario.end_time!r}",
        f"replications {scenario.replications}",
        "",
    ]
    for k in scenario.links:
        lines.append(f"link {k.source} -> {k.dest} transfer={k.transfer!r}")
    for lp in scenario.lps:
        lines.append("")
        lines.extend(format_lp(lp))
    return "\n".join(lines) + "\n"


def format_lp(lp: LpSpec) -> list[str]:
    """Render one lp section; unset required parameters print as ``?``."""
    lookahead = "?" if lp.lookahead is None else repr(lp.lookahead)
    lines = [f"lp {lp.id} lookahead={lookahead}"]
    for r in lp.resources.values():
        lines.append(f"  resource {r.id} capacity={r.capacity}")
    for b in lp.blocks.values():
        parts = [f"  block {b.id} {b.kind}"]
        for key, attr, _ in _BLOCK_KEYS[b.kind]:
            value = getattr(b, attr)
            if attr == "first" and value == 0.0:
                continue
            if attr == "units" and value == 1:
                continue
            if value is None:
                if attr in _REQUIRED[b.kind]:
                    parts.append(f"{key}=?")
                continue
            parts.append(f"{key}={value!r}" if isinstance(value, float) else f"{key}={value}")
        if b.next is not None:
            parts.append(f"next={b.next}")
        elif b.kind not in _TERMINAL:
            parts.append("next=?")
        lines.append(" ".join(parts))
    return lines


def save(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(dumps(scenario), encoding="utf-8")


# -- randomized scenarios (tests and stress runs) -------------------------

def random_scenario(seed: int, n_lps: int, cyclic: bool = False,
                    end_time: float = 200.0) -> Scenario:
    """Build a valid random scenario with ``n_lps`` LPs.

    Every input path runs through a Process whose service time is bounded
    below by the LP's declared lookahead, so the lookahead check passes.
    With ``cyclic`` set, back edges are added so some links form cycles.
    """
    rnd = random.Random(seed)
    ids = [f"L{i}" for i in range(n_lps)]
    edges = set()
    for j in range(1, n_lps):
        edges.add((ids[rnd.randrange(j)], ids[j]))
    for i in range(n_lps):
        for j in range(i + 1, n_lps):
            if rnd.random() < 0.3:
                edges.add((ids[i], ids[j]))
    if cyclic and n_lps >= 2:
        for _ in range(rnd.randint(1, n_lps)):
            j = rnd.randrange(1, n_lps)
            i = rnd.randrange(j)
            edges.add((ids[j], ids[i]))
    links = [Link(a, b, rnd.choice([0.0, 0.5, 2.0, 10.0])) for a, b in sorted(edges)]

    sc = Scenario(f"random-{seed}", [], links, master_seed=rnd.randrange(2**63), end_time=end_time)
    for lid in ids:
        lookahead = round(rnd.uniform(0.2, 1.0), 3)
        lp = LpSpec(lid, lookahead)
        batch = rnd.choice([1, 2, 5])
        lp.add_resource("own", 1)
        lp.add_resource("cell", rnd.choice([1, 2]))
        lp.add_block(Block("create_own", "Create", next="proc_own", entity_kind=f"P{lid}",
                           dist=Exponential(rnd.uniform(0.5, 3.0))))
        lp.add_block(Block("proc_own", "Process", next="out_own", resource="own",
                           dist=Uniform(0.1, rnd.uniform(0.2, 1.5))))
        lp.add_block(Block("out_own", "Dispose"))

        outs = [k for k in links if k.source == lid]
        ins = [k for k in links if k.dest == lid]
        for k in outs:
            lp.add_block(Block(f"create_{k.dest}", "Create", next=f"proc_{k.dest}",
                               entity_kind=f"{lid}>{k.dest}",
                               dist=Exponential(rnd.uniform(0.3, 2.0))))
            lp.add_block(Block(f"proc_{k.dest}", "Process", next=f"batch_{k.dest}", resource="cell",
                               dist=Uniform(0.05, rnd.uniform(0.1, 0.8))))
            lp.add_block(Block(f"batch_{k.dest}", "Batch", next=f"send_{k.dest}", size=batch))
            lp.add_block(Block(f"send_{k.dest}", "PortSend", dest=k.dest))
        for n, k in enumerate(ins):
            low = lookahead + round(rnd.uniform(0.0, 0.5), 3)
            if outs and rnd.random() < 0.7:
                target = f"batch_{rnd.choice(outs).dest}"
            else:
                target = f"dispose_{k.source}"
                lp.add_block(Block(target, "Dispose"))
            lp.add_block(Block(f"port_{k.source}", "CreatePort", next=f"sep_{k.source}",
                               source=k.source, entity_kind=f"{k.source}>{lid}"))
            lp.add_block(Block(f"sep_{k.source}", "Separate", next=f"work_{k.source}",
                               add=rnd.choice([0, 1, 4])))
            lp.add_block(Block(f"work_{k.source}", "Process", next=target, resource="cell",
                               dist=Triangular(low, low + 0.3, low + 1.0)))
        sc.lps.append(lp)
    return check(sc)
