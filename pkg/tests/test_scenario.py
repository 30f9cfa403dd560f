import pytest
from hypothesis import given, settings, strategies as st

from dms_sim.case_study import (
    BATCH_SIZE, CASE_STUDY_DMS, SEPARATE_ADD, TRANSFER_HOURS, build_case_study, data_path,
)
from dms_sim.errors import ParseError, ValidationError
from dms_sim.rng import Constant, Exponential
from dms_sim.scenario import (
    Block, Link, LpSpec, Scenario, check, dumps, effective_lookahead_check, load, loads,
    random_scenario, save, validate,
)

SMALL = """
scenario tiny
seed 5
end_time 100
link A -> B transfer=2.5

lp A lookahead=1
  resource m capacity=1
  block c Create kind=X interarrival=Constant(1.0) next=p
  block p Process resource=m service=Constant(0.5) next=s
  block s PortSend to=B

lp B lookahead=1
  resource m
  block port CreatePort from=A kind=X next=p
  block p Process resource=m service=Constant(0.5) next=d
  block d Dispose
"""


def test_loads_small_file():
    sc = check(loads(SMALL))
    assert sc.name == "tiny" and sc.master_seed == 5 and sc.end_time == 100.0
    assert sc.links == [Link("A", "B", 2.5)]
    assert sc.lp("B").port_for("A").id == "port"
    assert sc.lp("B").resources["m"].capacity == 1


def test_shipped_case_study_file():
    sc = load(data_path(CASE_STUDY_DMS))
    assert len(sc.lps) == 3 and len(sc.links) == 3
    assert {k.transfer for k in sc.links} == {TRANSFER_HOURS} == {10.0}
    batches = [b for lp in sc.lps for b in lp.blocks.values() if b.kind == "Batch"]
    assert {b.size for b in batches} == {BATCH_SIZE} == {1000}
    seps = [b for lp in sc.lps for b in lp.blocks.values() if b.kind == "Separate"]
    assert {b.add for b in seps} == {SEPARATE_ADD} == {999}


def test_shipped_file_equals_builder():
    assert load(data_path(CASE_STUDY_DMS)) == build_case_study()


def test_case_study_routing(case_study):
    sends = {(lp.id, b.dest)
             for lp in case_study.lps for b in lp.blocks.values() if b.kind == "PortSend"}
    assert sends == {("A", "B"), ("A", "C"), ("B", "C")}
    ports = {(lp.id, b.source): b.entity_kind
             for lp in case_study.lps for b in lp.blocks.values() if b.kind == "CreatePort"}
    assert ports == {("B", "A"): "X", ("C", "A"): "Z", ("C", "B"): "XY"}
    c_ports = sorted(b.source for b in case_study.lp("C").blocks.values() if b.kind == "CreatePort")
    assert c_ports == ["A", "B"]


def _feeder(lp, target):
    return next(b.id for b in lp.blocks.values() if b.next == target)


def _kind_into(lp, target):
    # walk back to the Create that starts the chain, honouring relabels
    relabel = None
    cur = target
    while True:
        prev = lp.blocks[_feeder(lp, cur)]
        if prev.kind == "Process" and prev.relabel and relabel is None:
            relabel = prev.relabel
        if prev.kind in ("Create", "CreatePort"):
            return relabel or prev.entity_kind
        cur = prev.id


def test_case_study_lines_carry_expected_parts(case_study):
    assert _kind_into(case_study.lp("A"), "send_b") == "X"
    assert _kind_into(case_study.lp("A"), "send_c") == "Z"
    assert _kind_into(case_study.lp("B"), "send_c") == "XY"
    assert case_study.lp("C").blocks["assemble_xyz"].relabel == "XYZ"


def test_case_study_passes_checks(case_study):
    assert validate(case_study) == []
    assert effective_lookahead_check(case_study) == []


def test_zero_lookahead_rejected():
    with pytest.raises(ValidationError) as err:
        check(loads(SMALL.replace("lp A lookahead=1", "lp A lookahead=0")))
    assert any("lookahead must be positive" in p for p in err.value.problems)


def test_undeclared_resource_rejected():
    with pytest.raises(ValidationError) as err:
        check(loads(SMALL.replace("resource=m service=Constant(0.5) next=d",
                                  "resource=q service=Constant(0.5) next=d")))
    assert any("undeclared resource" in p for p in err.value.problems)


def test_ports_must_match_links():
    text = SMALL.replace("link A -> B transfer=2.5", "")
    problems = validate(loads(text))
    assert any("PortSend destinations" in p for p in problems)
    assert any("CreatePort sources" in p for p in problems)


@pytest.mark.parametrize("edit, reason", [
    (lambda s: s + "bogus line\n", "unknown keyword"),
    (lambda s: s.replace("transfer=2.5", "transfer=abc"), "could not convert"),
    (lambda s: s.replace("size", "size") + "block x Wheel\n", "unknown block kind"),
    (lambda s: "resource r\n" + s, "outside an lp"),
    (lambda s: s.replace("Constant(1.0)", "Poisson(1.0)"), "unknown distribution"),
])
def test_parse_errors_carry_line(edit, reason):
    with pytest.raises(ParseError) as err:
        loads(edit(SMALL))
    assert reason in err.value.reason
    assert err.value.line >= 1


def test_parse_error_line_number():
    lines = SMALL.splitlines()
    idx = next(i for i, l in enumerate(lines) if l.startswith("link"))
    lines[idx] = "link A B"
    with pytest.raises(ParseError) as err:
        loads("\n".join(lines))
    assert err.value.line == idx + 1


def test_block_cycle_detected():
    lp = LpSpec("A", 1.0)
    lp.add_resource("m")
    lp.add_block(Block("c", "Create", next="p", entity_kind="X", dist=Constant(1)))
    lp.add_block(Block("p", "Process", next="q", resource="m", dist=Constant(1)))
    lp.add_block(Block("q", "Separate", next="p", add=0))
    assert any("block cycle" in p for p in validate(Scenario("s", [lp], [])))


def _chain(lookahead, *dists):
    up = LpSpec("U", 1.0)
    up.add_block(Block("c", "Create", next="s", entity_kind="X", dist=Constant(1)))
    up.add_block(Block("s", "PortSend", dest="D"))
    lp = LpSpec("D", lookahead)
    lp.add_resource("m")
    lp.add_block(Block("port", "CreatePort", next="p0", source="U", entity_kind="X"))
    for i, d in enumerate(dists):
        nxt = f"p{i + 1}" if i + 1 < len(dists) else "send"
        lp.add_block(Block(f"p{i}", "Process", next=nxt, resource="m", dist=d))
    lp.add_block(Block("send", "PortSend", dest="E"))
    sink = LpSpec("E", 1.0)
    sink.add_block(Block("port", "CreatePort", next="d", source="D", entity_kind="X"))
    sink.add_block(Block("d", "Dispose"))
    return check(Scenario("chain", [up, lp, sink],
                          [Link("U", "D", 0.0), Link("D", "E", 0.0)]))


def test_lookahead_check_examples():
    assert effective_lookahead_check(_chain(2.0, Constant(5), Constant(3))) == []
    warn = effective_lookahead_check(_chain(9.0, Constant(5), Constant(3)))
    assert len(warn) == 1 and "8.0" in warn[0]
    warn = effective_lookahead_check(_chain(1.0, Exponential(4.0)))
    assert len(warn) == 1 and "unbounded-below path" in warn[0]


def test_save_load_round_trip(tmp_path, case_study):
    path = tmp_path / "cs.dms"
    save(case_study, path)
    assert load(path) == case_study


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6), st.booleans())
def test_random_scenarios_round_trip(seed, n, cyclic):
    sc = random_scenario(seed, n, cyclic=cyclic)
    assert validate(sc) == []
    assert effective_lookahead_check(sc) == []
    assert check(loads(dumps(sc))) == sc
