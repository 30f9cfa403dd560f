"""Hierarchical activity models and their partitioning into logical processes.

A model is a tree of activities (the root is the whole enterprise) with
directed arcs between leaf activities. Leaves are grouped into LPs so that
as few arcs as possible cross LP boundaries; every crossing arc later
becomes a message flow between LPs.

Model files are line oriented::

    activity E enterprise
    activity A "Firm A" parent=E
    arc A -> B role=output label=X

Partitions and workstation mappings use ``lp <id>: <leaf,...>`` and
``map <lp> -> <host:port>`` lines.
"""

from __future__ import annotations

import math
import shlex
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (ConfigError, Infeasible, InvalidPartition, NotEnoughHosts, ParseError,
                     UnknownNode)
from .scenario import Block, LpSpec

ROLES = ("input", "control", "output", "mechanism")
EXACT_LIMIT = 12


@dataclass(frozen=True)
class ActivityNode:
    id: str
    name: str
    parent: str | None = None


@dataclass(frozen=True)
class Arc:
    source: str
    target: str
    role: str = "output"
    label: str = ""


class ModelGraph:
    def __init__(self, nodes: list[ActivityNode], arcs: list[Arc]):
        self.nodes: dict[str, ActivityNode] = {}
        for n in nodes:
            if n.id in self.nodes:
                raise ConfigError(f"duplicate activity {n.id!r}")
            self.nodes[n.id] = n
        self.children: dict[str, list[str]] = {nid: [] for nid in self.nodes}
        roots = []
        for n in nodes:
            if n.parent is None:
                roots.append(n.id)
            elif n.parent not in self.nodes:
                raise UnknownNode(f"activity {n.id!r} has unknown parent {n.parent!r}")
            else:
                self.children[n.parent].append(n.id)
        if len(roots) != 1:
            raise ConfigError(f"model needs exactly one root activity, found {roots}")
        self.root = roots[0]
        reached = self._walk(self.root)
        if len(reached) != len(self.nodes):
            raise ConfigError("activity parents form a cycle")
        self.leaves = [nid for nid in self.nodes if not self.children[nid]]
        leaf_set = set(self.leaves)

        self.arcs = list(arcs)
        self._pairs: Counter = Counter()
        for a in self.arcs:
            for end in (a.source, a.target):
                if end not in self.nodes:
                    raise UnknownNode(f"arc references unknown activity {end!r}")
                if end not in leaf_set:
                    raise ConfigError(f"arc endpoint {end!r} is not a leaf activity")
            if a.source == a.target:
                raise ConfigError(f"arc {a.source} -> {a.target} connects a box to itself")
            if a.role not in ROLES:
                raise ConfigError(f"arc role must be one of {ROLES}, got {a.role!r}")
            self._pairs[_pair(a.source, a.target)] += 1

    def _walk(self, root: str) -> list[str]:
        out, stack = [], [root]
        while stack:
            nid = stack.pop()
            out.append(nid)
            if len(out) > len(self.nodes):
                break
            stack.extend(reversed(self.children[nid]))
        return out

    def is_leaf(self, nid: str) -> bool:
        return nid in self.nodes and not self.children[nid]

    def pair_count(self, a: str, b: str) -> int:
        return self._pairs.get(_pair(a, b), 0)


def _pair(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


def interaction_count(graph: ModelGraph, a: str, b: str) -> int:
    """Number of arcs between leaves ``a`` and ``b`` in either direction."""
    for x in (a, b):
        if not graph.is_leaf(x):
            raise UnknownNode(f"{x!r} is not a leaf activity of the model")
    if a == b:
        return 0
    return graph.pair_count(a, b)


def cut_weight(graph: ModelGraph, blocks) -> int:
    where = {leaf: i for i, block in enumerate(blocks) for leaf in block}
    return sum(1 for a in graph.arcs
               if a.source in where and a.target in where and where[a.source] != where[a.target])


@dataclass
class Partition:
    blocks: list[tuple[str, ...]]
    cut_weight: int

    @property
    def lp_ids(self) -> list[str]:
        return ["+".join(b) for b in self.blocks]

    def lp_of(self, leaf: str) -> str:
        for lp, block in zip(self.lp_ids, self.blocks):
            if leaf in block:
                return lp
        raise UnknownNode(f"leaf {leaf!r} is not in the partition")


# -- partitioning ---------------------------------------------------------

def partition(graph: ModelGraph, k: int, locked: dict[str, int] | None = None) -> Partition:
    """Split the leaves into exactly ``k`` non-empty LPs with minimum cut.

    Up to 12 leaves the search is exhaustive (branch and bound over
    canonical labelings, so the lexicographically first optimum wins).
    Larger models use greedy merging followed by move/swap local search.
    ``locked`` pins leaves to block indices.
    """
    leaves = sorted(graph.leaves)
    n = len(leaves)
    if k < 1 or k > n:
        raise Infeasible(f"cannot split {n} leaves into {k} blocks")
    pins: dict[int, int] = {}
    index = {leaf: i for i, leaf in enumerate(leaves)}
    for leaf, lab in (locked or {}).items():
        if leaf not in index:
            raise Infeasible(f"pinned activity {leaf!r} is not a leaf")
        if not 0 <= lab < k:
            raise Infeasible(f"pin {leaf!r} -> {lab} is outside 0..{k - 1}")
        pins[index[leaf]] = lab
    w = [[graph.pair_count(a, b) if a != b else 0 for b in leaves] for a in leaves]

    if n <= EXACT_LIMIT:
        labels = _exact(w, k, pins)
    else:
        labels = _heuristic(w, k, pins)
    if labels is None:
        raise Infeasible(f"no {k}-way partition satisfies the pins {locked}")
    blocks = [tuple(leaves[i] for i in range(n) if labels[i] == lab) for lab in range(k)]
    return Partition(blocks, cut_weight(graph, blocks))


def _exact(w: list[list[int]], k: int, pins: dict[int, int]) -> list[int] | None:
    n = len(w)
    pinned = sorted(set(pins.values()))
    free = [lab for lab in range(k) if lab not in pinned]
    assign = [-1] * n
    sizes = [0] * k
    best: list = [None, math.inf]

    def rec(i: int, cut: int, used_free: int) -> None:
        if cut >= best[1]:
            return
        if sum(1 for s in sizes if s == 0) > n - i:
            return
        if i == n:
            best[0], best[1] = assign.copy(), cut
            return
        if i in pins:
            options = [pins[i]]
        else:
            options = sorted(pinned + free[:used_free + 1])
        for lab in options:
            extra = 0
            row = w[i]
            for j in range(i):
                if assign[j] != lab:
                    extra += row[j]
            assign[i] = lab
            sizes[lab] += 1
            grew = 1 if used_free < len(free) and lab == free[used_free] else 0
            rec(i + 1, cut + extra, used_free + grew)
            sizes[lab] -= 1
            assign[i] = -1

    rec(0, 0, 0)
    return best[0]


def _cut(w, labels) -> int:
    n = len(w)
    return sum(w[i][j] for i in range(n) for j in range(i + 1, n) if labels[i] != labels[j])


def _heuristic(w: list[list[int]], k: int, pins: dict[int, int]) -> list[int] | None:
    n = len(w)
    # greedy agglomeration: merge the most strongly connected pair of groups
    groups = [[i] for i in range(n)]
    group_pin = [pins.get(i) for i in range(n)]
    while len(groups) > k:
        best = None
        for a in range(len(groups)):
            for b in range(a + 1, len(groups)):
                pa, pb = group_pin[a], group_pin[b]
                if pa is not None and pb is not None and pa != pb:
                    continue
                weight = sum(w[i][j] for i in groups[a] for j in groups[b])
                if best is None or weight > best[0]:
                    best = (weight, a, b)
        if best is None:
            return None
        _, a, b = best
        groups[a] = sorted(groups[a] + groups[b])
        group_pin[a] = group_pin[a] if group_pin[a] is not None else group_pin[b]
        del groups[b], group_pin[b]

    labels = [-1] * n
    taken = {p for p in group_pin if p is not None}
    spare = iter(lab for lab in range(k) if lab not in taken)
    for g, p in sorted(zip(groups, group_pin), key=lambda gp: gp[0][0]):
        lab = p if p is not None else next(spare)
        for i in g:
            labels[i] = lab

    # local search: best single move, then best swap, until neither improves
    cut = _cut(w, labels)
    while True:
        sizes = Counter(labels)
        best_move = None
        for i in range(n):
            if i in pins or sizes[labels[i]] == 1:
                continue
            here = sum(w[i][j] for j in range(n) if labels[j] == labels[i])
            for lab in range(k):
                if lab == labels[i]:
                    continue
                there = sum(w[i][j] for j in range(n) if labels[j] == lab)
                gain = there - here
                if gain > 0 and (best_move is None or gain > best_move[0]):
                    best_move = (gain, i, lab)
        if best_move is not None:
            _, i, lab = best_move
            labels[i] = lab
            cut -= best_move[0]
            continue
        best_swap = None
        for i in range(n):
            for j in range(i + 1, n):
                if i in pins or j in pins or labels[i] == labels[j]:
                    continue
                trial = labels.copy()
                trial[i], trial[j] = labels[j], labels[i]
                c = _cut(w, trial)
                if c < cut and (best_swap is None or c < best_swap[0]):
                    best_swap = (c, i, j)
        if best_swap is None:
            break
        cut, i, j = best_swap
        labels[i], labels[j] = labels[j], labels[i]

    if not pins:
        # canonical labels: blocks ordered by smallest member
        order = {}
        for lab in labels:
            order.setdefault(lab, len(order))
        labels = [order[lab] for lab in labels]
    return labels


# -- validation and mapping -----------------------------------------------

@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations

    def kinds(self) -> list[str]:
        return [v.kind for v in self.violations]


def validate_partition(graph: ModelGraph, part: Partition) -> ValidationReport:
    rep = ValidationReport()
    seen: Counter = Counter()
    for i, block in enumerate(part.blocks):
        if not block:
            rep.violations.append(Violation("empty block", f"block {i} has no leaves"))
        for leaf in block:
            if not graph.is_leaf(leaf):
                rep.violations.append(Violation("unknown leaf", f"{leaf!r} in block {i}"))
            seen[leaf] += 1
    for leaf in sorted(seen):
        if seen[leaf] > 1:
            rep.violations.append(Violation("duplicated leaf", f"{leaf!r} appears {seen[leaf]} times"))
    for leaf in graph.leaves:
        if leaf not in seen:
            rep.violations.append(Violation("uncovered leaf", f"{leaf!r} is in no block"))
    actual = cut_weight(graph, part.blocks)
    if actual != part.cut_weight:
        rep.violations.append(
            Violation("cut mismatch", f"recorded {part.cut_weight}, recomputed {actual}"))
    return rep


@dataclass
class Mapping:
    assignment: dict[str, str]


def map_to_workstations(part: Partition, hosts: list[str]) -> Mapping:
    """Assign LP i to host i; one LP per workstation."""
    if len(hosts) < len(part.blocks):
        raise NotEnoughHosts(f"{len(part.blocks)} LPs need {len(part.blocks)} hosts, got {len(hosts)}")
    if len(set(hosts[:len(part.blocks)])) < len(part.blocks):
        raise NotEnoughHosts("host list repeats a workstation")
    return Mapping(dict(zip(part.lp_ids, hosts)))


# -- simulation skeletons -------------------------------------------------

def emit_skeleton(graph: ModelGraph, part: Partition, index: int) -> LpSpec:
    """Turn one LP of a partition into a parameter-less block network.

    Each leaf gets a resource and a Process placeholder. Its first outgoing
    arc decides where the Process sends entities; every further outgoing
    arc gets its own Create -> Process line on the same resource. Incoming
    cut arcs become CreatePort + Separate pairs, outgoing cut arcs PortSend
    blocks. Distributions, batch sizes and the lookahead are left unset.
    """
    report = validate_partition(graph, part)
    if not report.valid:
        raise InvalidPartition("; ".join(f"{v.kind}: {v.detail}" for v in report.violations))
    if not 0 <= index < len(part.blocks):
        raise InvalidPartition(f"block index {index} out of range")
    members = set(part.blocks[index])
    lp = LpSpec(part.lp_ids[index], None)
    used: set[str] = set()

    def name(base: str) -> str:
        cand, n = base, 1
        while cand in used:
            n += 1
            cand = f"{base}_{n}"
        used.add(cand)
        return cand

    ordered = [leaf for leaf in graph.leaves if leaf in members]
    procs = {leaf: name(f"proc_{leaf}") for leaf in ordered}
    fed = set()
    pending_blocks: list[Block] = []

    for leaf in ordered:
        lp.add_resource(f"res_{leaf}", 1)
        outgoing = [a for a in graph.arcs if a.source == leaf]
        targets = []
        for arc in outgoing:
            if arc.target in members:
                targets.append(procs[arc.target])
                fed.add(arc.target)
            else:
                dest = part.lp_of(arc.target)
                send = name(f"send_{arc.target}_{arc.label}" if arc.label else f"send_{arc.target}")
                pending_blocks.append(Block(send, "PortSend", dest=dest))
                targets.append(send)
        main_next = targets[0] if targets else name(f"dispose_{leaf}")
        if not targets:
            pending_blocks.append(Block(main_next, "Dispose"))
        pending_blocks.append(Block(procs[leaf], "Process", next=main_next, resource=f"res_{leaf}"))
        for arc, target in list(zip(outgoing, targets))[1:]:
            kind = arc.label or leaf
            proc = name(f"proc_{leaf}__{kind}")
            pending_blocks.append(Block(name(f"create_{leaf}__{kind}"), "Create", next=proc,
                                        entity_kind=kind))
            pending_blocks.append(Block(proc, "Process", next=target, resource=f"res_{leaf}"))

        for arc in graph.arcs:
            if arc.target == leaf and arc.source not in members:
                fed.add(leaf)
                src = part.lp_of(arc.source)
                tag = f"{arc.source}_{arc.label}" if arc.label else arc.source
                sep = name(f"sep_{tag}")
                pending_blocks.append(Block(name(f"port_{tag}"), "CreatePort", next=sep,
                                            source=src, entity_kind=arc.label or arc.source))
                pending_blocks.append(Block(sep, "Separate", next=procs[leaf]))

    for leaf in ordered:
        if leaf not in fed:
            first_out = next((a.label for a in graph.arcs if a.source == leaf and a.label), leaf)
            pending_blocks.append(Block(name(f"create_{leaf}"), "Create", next=procs[leaf],
                                        entity_kind=first_out))

    for b in pending_blocks:
        lp.add_block(b)
    return lp


# -- text formats ---------------------------------------------------------

def loads_model(text: str, path: str | None = None) -> ModelGraph:
    nodes, arcs = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            words = shlex.split(line)
        except ValueError as exc:
            raise ParseError(lineno, str(exc), path) from None
        head, rest = words[0], words[1:]
        if head == "activity":
            if len(rest) < 2:
                raise ParseError(lineno, "expected: activity <id> <name> [parent=<id>]", path)
            parent = None
            for extra in rest[2:]:
                key, _, value = extra.partition("=")
                if key != "parent" or not value:
                    raise ParseError(lineno, f"unexpected {extra!r}", path)
                parent = value
            nodes.append(ActivityNode(rest[0], rest[1], parent))
        elif head == "arc":
            if len(rest) < 3 or rest[1] != "->":
                raise ParseError(lineno, "expected: arc <from> -> <to> role=<r> label=<flow>", path)
            opts = {}
            for extra in rest[3:]:
                key, sep, value = extra.partition("=")
                if not sep or key not in ("role", "label"):
                    raise ParseError(lineno, f"unexpected {extra!r}", path)
                opts[key] = value
            arcs.append(Arc(rest[0], rest[2], opts.get("role", "output"), opts.get("label", "")))
        else:
            raise ParseError(lineno, f"unknown keyword {head!r}", path)
    return ModelGraph(nodes, arcs)


def load_model(path: str | Path) -> ModelGraph:
    path = Path(path)
    return loads_model(path.read_text(encoding="utf-8"), str(path))


def dumps_model(graph: ModelGraph) -> str:
    lines = []
    for n in graph.nodes.values():
        parent = f" parent={n.parent}" if n.parent else ""
        lines.append(f"activity {n.id} {shlex.quote(n.name)}{parent}")
    for a in graph.arcs:
        label = f" label={shlex.quote(a.label)}" if a.label else ""
        lines.append(f"arc {a.source} -> {a.target} role={a.role}{label}")
    return "\n".join(lines) + "\n"


def dumps_partition(part: Partition, mapping: Mapping | None = None) -> str:
    lines = [f"# cut_weight {part.cut_weight}"]
    for lp, block in zip(part.lp_ids, part.blocks):
        lines.append(f"lp {lp}: {','.join(block)}")
    if mapping is not None:
        for lp, host in mapping.assignment.items():
            lines.append(f"map {lp} -> {host}")
    return "\n".join(lines) + "\n"


def loads_mapping(text: str) -> Mapping:
    """Read ``map <lp> -> <host:port>`` lines, ignoring everything else."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line.startswith("map "):
            continue
        words = line.split()
        if len(words) != 4 or words[2] != "->":
            raise ParseError(lineno, "expected: map <lp> -> <host:port>")
        if words[1] in out:
            raise ParseError(lineno, f"lp {words[1]!r} mapped twice")
        out[words[1]] = words[3]
    if len(set(out.values())) != len(out):
        raise NotEnoughHosts("mapping assigns two LPs to one workstation")
    return Mapping(out)


def loads_partition(text: str, graph: ModelGraph | None = None) -> Partition:
    blocks = []
    cut = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("# cut_weight"):
            cut = int(line.split()[2])
            continue
        line = line.split("#", 1)[0].strip()
        if not line.startswith("lp "):
            continue
        head, sep, members = line[3:].partition(":")
        if not sep:
            raise ParseError(lineno, "expected: lp <id>: <leaf,...>")
        blocks.append(tuple(m.strip() for m in members.split(",") if m.strip()))
    if cut is None:
        cut = cut_weight(graph, blocks) if graph is not None else 0
    return Partition(blocks, cut)
