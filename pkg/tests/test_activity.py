import itertools
import random

import pytest

from dms_sim.activity import (
    ActivityNode, Arc, ModelGraph, Partition, _heuristic, cut_weight, dumps_model,
    dumps_partition, emit_skeleton, interaction_count, loads_mapping, loads_model,
    loads_partition, map_to_workstations, partition, validate_partition,
)
from dms_sim.case_study import case_study_graph, load_case_study_graph
from dms_sim.errors import (
    ConfigError, Infeasible, InvalidPartition, NotEnoughHosts, ParseError, UnknownNode,
)
from dms_sim.scenario import format_lp

ROLES = ["input", "control", "output", "mechanism"]


def random_graph(rnd, n_leaves, extra=None, connected=True):
    leaves = [f"a{i}" for i in range(n_leaves)]
    nodes = [ActivityNode("root", "enterprise")]
    # a two-level tree so not every leaf hangs off the root
    mid = [f"g{i}" for i in range(rnd.randint(0, 2))]
    nodes += [ActivityNode(m, m, "root") for m in mid]
    for leaf in leaves:
        nodes.append(ActivityNode(leaf, leaf, rnd.choice(["root"] + mid)))
    # a middle node with no children would itself be a leaf
    used = {n.parent for n in nodes}
    nodes = [n for n in nodes if n.id not in mid or n.id in used]
    arcs = []
    if connected:
        for j in range(1, n_leaves):
            i = rnd.randrange(j)
            a, b = (leaves[i], leaves[j]) if rnd.random() < 0.5 else (leaves[j], leaves[i])
            arcs.append(Arc(a, b, rnd.choice(ROLES), f"f{len(arcs)}"))
    n_extra = rnd.randint(0, 2 * n_leaves) if extra is None else extra
    for _ in range(n_extra if n_leaves > 1 else 0):
        a, b = rnd.sample(leaves, 2)
        arcs.append(Arc(a, b, rnd.choice(ROLES), f"f{len(arcs)}"))
    rnd.shuffle(nodes[1:])
    return ModelGraph(nodes, arcs)


def brute_min_cut(graph, k):
    leaves = graph.leaves
    best = None
    for labels in itertools.product(range(k), repeat=len(leaves)):
        if len(set(labels)) != k:
            continue
        where = dict(zip(leaves, labels))
        cut = sum(1 for a in graph.arcs if where[a.source] != where[a.target])
        best = cut if best is None else min(best, cut)
    return best


def test_interaction_counts_case_study():
    g = case_study_graph()
    assert interaction_count(g, "A", "B") == 1
    assert interaction_count(g, "A", "C") == 1
    assert interaction_count(g, "B", "C") == 1
    assert interaction_count(g, "C", "B") == 1


def test_interaction_count_errors_and_empty():
    g = ModelGraph([ActivityNode("r", "r"), ActivityNode("a", "a", "r"),
                    ActivityNode("b", "b", "r")], [])
    assert interaction_count(g, "a", "b") == 0
    with pytest.raises(UnknownNode):
        interaction_count(g, "a", "zzz")
    with pytest.raises(UnknownNode):
        interaction_count(g, "r", "a")


def test_interaction_count_matches_scan():
    rnd = random.Random(1)
    for _ in range(30):
        g = random_graph(rnd, rnd.randint(2, 9))
        for a, b in itertools.combinations(g.leaves, 2):
            scan = sum(1 for arc in g.arcs if {arc.source, arc.target} == {a, b})
            assert interaction_count(g, a, b) == scan


def test_shipped_model_matches_builder():
    g = load_case_study_graph()
    assert g.leaves == ["A", "B", "C"]
    assert g.arcs == case_study_graph().arcs


def test_case_study_three_way():
    p = partition(case_study_graph(), 3)
    assert p.blocks == [("A",), ("B",), ("C",)]
    assert p.cut_weight == 3
    assert validate_partition(case_study_graph(), p).valid


def test_k_equals_leaves_gives_singletons():
    g = random_graph(random.Random(4), 6)
    p = partition(g, 6)
    assert sorted(p.blocks) == [(leaf,) for leaf in sorted(g.leaves)]
    assert p.cut_weight == len(g.arcs)


@pytest.mark.parametrize("k", [2, 3])
def test_exact_matches_brute_force(k):
    rnd = random.Random(100 + k)
    for _ in range(60):
        g = random_graph(rnd, rnd.randint(k, 8))
        p = partition(g, k)
        assert p.cut_weight == brute_min_cut(g, k)
        assert len(p.blocks) == k and all(p.blocks)
        assert validate_partition(g, p).valid


def test_deterministic_and_order_invariant():
    rnd = random.Random(7)
    for _ in range(20):
        g = random_graph(rnd, 7)
        nodes = list(g.nodes.values())
        root, rest = nodes[0], nodes[1:]
        rnd.shuffle(rest)
        arcs = list(g.arcs)
        rnd.shuffle(arcs)
        h = ModelGraph([root] + rest, arcs)
        for k in (2, 3):
            p, q = partition(g, k), partition(h, k)
            assert p == partition(g, k)
            assert sorted(map(sorted, p.blocks)) == sorted(map(sorted, q.blocks))
            # canonical form: blocks ordered by smallest member
            firsts = [min(b) for b in p.blocks]
            assert firsts == sorted(firsts)


def test_lexicographic_tie_break():
    # a path a0-a1-a2-a3: cutting any one edge is optimal for k=2
    nodes = [ActivityNode("r", "r")] + [ActivityNode(f"a{i}", "x", "r") for i in range(4)]
    arcs = [Arc(f"a{i}", f"a{i + 1}") for i in range(3)]
    p = partition(ModelGraph(nodes, arcs), 2)
    assert p.cut_weight == 1
    assert p.blocks == [("a0", "a1", "a2"), ("a3",)]


def test_pins():
    g = case_study_graph()
    p = partition(g, 2, {"A": 0, "C": 1})
    assert "A" in p.blocks[0] and "C" in p.blocks[1]
    assert p.cut_weight == brute_min_cut_pinned(g, 2, {"A": 0, "C": 1})
    with pytest.raises(Infeasible):
        partition(g, 2, {"A": 5})
    with pytest.raises(Infeasible):
        partition(g, 4)
    with pytest.raises(Infeasible):
        partition(g, 2, {"E": 0})


def brute_min_cut_pinned(graph, k, pins):
    best = None
    for labels in itertools.product(range(k), repeat=len(graph.leaves)):
        where = dict(zip(graph.leaves, labels))
        if len(set(labels)) != k or any(where[x] != v for x, v in pins.items()):
            continue
        cut = sum(1 for a in graph.arcs if where[a.source] != where[a.target])
        best = cut if best is None else min(best, cut)
    return best


def test_heuristic_large_graphs_locally_optimal():
    rnd = random.Random(99)
    for _ in range(5):
        g = random_graph(rnd, rnd.randint(13, 20))
        k = rnd.randint(2, 4)
        p = partition(g, k)
        assert validate_partition(g, p).valid and len(p.blocks) == k
        where = {leaf: i for i, b in enumerate(p.blocks) for leaf in b}
        for leaf in g.leaves:
            if len(p.blocks[where[leaf]]) == 1:
                continue
            for lab in range(k):
                trial = dict(where, **{leaf: lab})
                cut = sum(1 for a in g.arcs if trial[a.source] != trial[a.target])
                assert cut >= p.cut_weight


def test_heuristic_close_to_exact_on_small_graphs():
    rnd = random.Random(5)
    for _ in range(20):
        g = random_graph(rnd, 8)
        leaves = sorted(g.leaves)
        w = [[g.pair_count(a, b) if a != b else 0 for b in leaves] for a in leaves]
        labels = _heuristic(w, 2, {})
        blocks = [tuple(l for l, lab in zip(leaves, labels) if lab == i) for i in range(2)]
        assert all(blocks)
        assert cut_weight(g, blocks) >= brute_min_cut(g, 2)


def test_validate_partition_violations():
    g = case_study_graph()
    assert validate_partition(g, Partition([("A",), ("B",)], 1)).kinds() == ["uncovered leaf"]
    assert "duplicated leaf" in validate_partition(
        g, Partition([("A", "B"), ("B", "C")], 2)).kinds()
    assert "empty block" in validate_partition(g, Partition([("A", "B", "C"), ()], 0)).kinds()
    assert "unknown leaf" in validate_partition(
        g, Partition([("A", "B", "C", "Q")], 0)).kinds()
    rep = validate_partition(g, Partition([("A",), ("B",), ("C",)], 1))
    assert rep.kinds() == ["cut mismatch"]
    assert "recomputed 3" in rep.violations[0].detail


def test_mapping():
    p = partition(case_study_graph(), 3)
    m = map_to_workstations(p, ["h1:1", "h2:2", "h3:3"])
    assert m.assignment == {"A": "h1:1", "B": "h2:2", "C": "h3:3"}
    one = partition(case_study_graph(), 1)
    assert map_to_workstations(one, [f"h{i}:1" for i in range(5)]).assignment == {
        "A+B+C": "h0:1"}
    with pytest.raises(NotEnoughHosts):
        map_to_workstations(p, ["h1:1", "h2:2"])
    with pytest.raises(NotEnoughHosts):
        map_to_workstations(p, ["h1:1", "h1:1", "h2:2"])


def test_skeleton_for_b():
    g = case_study_graph()
    p = partition(g, 3)
    sk = emit_skeleton(g, p, 1)
    kinds = sorted(b.kind for b in sk.blocks.values())
    assert kinds == ["CreatePort", "PortSend", "Process", "Separate"]
    port = next(b for b in sk.blocks.values() if b.kind == "CreatePort")
    send = next(b for b in sk.blocks.values() if b.kind == "PortSend")
    assert port.source == "A" and send.dest == "C"
    # port -> separate -> process -> send
    sep = sk.blocks[port.next]
    assert sep.kind == "Separate" and sk.blocks[sep.next].kind == "Process"
    assert sk.blocks[sk.blocks[sep.next].next] is send
    assert sk.lookahead is None
    assert any("?" in line for line in format_lp(sk))


def test_single_leaf_skeleton_has_no_ports():
    g = ModelGraph([ActivityNode("r", "r"), ActivityNode("a", "a", "r")], [])
    sk = emit_skeleton(g, partition(g, 1), 0)
    assert not [b for b in sk.blocks.values() if b.kind in ("CreatePort", "PortSend")]
    assert {b.kind for b in sk.blocks.values()} == {"Create", "Process", "Dispose"}


def test_skeleton_ports_equal_cut_degree():
    rnd = random.Random(3)
    for _ in range(60):
        g = random_graph(rnd, rnd.randint(2, 9))
        k = rnd.randint(1, min(4, len(g.leaves)))
        p = partition(g, k)
        for i, lp_id in enumerate(p.lp_ids):
            members = set(p.blocks[i])
            sk = emit_skeleton(g, p, i)
            ins = sorted(p.lp_of(a.source) for a in g.arcs
                         if a.target in members and a.source not in members)
            outs = sorted(p.lp_of(a.target) for a in g.arcs
                          if a.source in members and a.target not in members)
            assert sorted(b.source for b in sk.blocks.values() if b.kind == "CreatePort") == ins
            assert sorted(b.dest for b in sk.blocks.values() if b.kind == "PortSend") == outs
            procs = [b for b in sk.blocks.values() if b.kind == "Process"]
            assert len({b.resource for b in procs}) == len(members)
            for b in sk.blocks.values():
                if b.next is not None:
                    assert b.next in sk.blocks


def test_skeleton_rejects_invalid_partition():
    g = case_study_graph()
    with pytest.raises(InvalidPartition):
        emit_skeleton(g, Partition([("A",), ("B",)], 2), 0)
    with pytest.raises(InvalidPartition):
        emit_skeleton(g, partition(g, 3), 5)


def test_model_graph_rules():
    r = ActivityNode("r", "r")
    a, b = ActivityNode("a", "a", "r"), ActivityNode("b", "b", "r")
    with pytest.raises(ConfigError):
        ModelGraph([r, a, b], [Arc("a", "a")])
    with pytest.raises(ConfigError):
        ModelGraph([r, a, b], [Arc("a", "b", role="sideways")])
    with pytest.raises(ConfigError):
        ModelGraph([r, a, b], [Arc("r", "b")])
    with pytest.raises(UnknownNode):
        ModelGraph([r, a, b], [Arc("a", "zz")])
    with pytest.raises(ConfigError):
        ModelGraph([r, ActivityNode("x", "x")], [])


def test_model_text_round_trip():
    rnd = random.Random(8)
    for _ in range(20):
        g = random_graph(rnd, rnd.randint(1, 8))
        h = loads_model(dumps_model(g))
        assert h.leaves == g.leaves and h.arcs == g.arcs and h.nodes == g.nodes


def test_model_parse_errors():
    with pytest.raises(ParseError) as err:
        loads_model("activity r root\nwidget a\n")
    assert err.value.line == 2
    with pytest.raises(ParseError):
        loads_model("activity r root\nactivity a A parent=r\narc a b\n")


def test_partition_and_mapping_text():
    g = case_study_graph()
    p = partition(g, 2)
    m = map_to_workstations(p, ["ws1:7000", "ws2:7000"])
    text = dumps_partition(p, m)
    assert loads_partition(text) == p
    assert loads_mapping(text) == m
    with pytest.raises(NotEnoughHosts):
        loads_mapping("map A -> h:1\nmap B -> h:1\n")
