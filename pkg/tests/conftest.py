import pytest

from dms_sim.case_study import build_case_study
from dms_sim.scenario import Block, LpSpec


def line_lp(lp_id="L", service=None, capacity=1, lookahead=1.0, port_source="S"):
    """CreatePort -> Process -> Dispose, the smallest useful network."""
    from dms_sim.rng import Constant
    lp = LpSpec(lp_id, lookahead)
    lp.add_resource("r", capacity)
    lp.add_block(Block("port", "CreatePort", next="proc", source=port_source, entity_kind="P"))
    lp.add_block(Block("proc", "Process", next="out", resource="r", dist=service or Constant(5.0)))
    lp.add_block(Block("out", "Dispose"))
    return lp


@pytest.fixture(scope="session")
def case_study():
    return build_case_study()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
