"""Three-firm enterprise: A supplies B and C, B supplies C.

Firm A makes parts X and Z, shipping X to B and Z to C. Firm B runs X
through its expensive unit, makes part Y and assembles component XY for C.
Firm C finishes Z and XY into product XYZ. Each firm also runs one
product line of its own.

Fixed by the setting: three firms and their routes, batches of 1000,
Separate adding 999 units at the receiver, a 10-hour transfer on every
link, and CreatePorts keyed by the sender labels "A" and "B". Every rate
and service time below is an illustrative choice, not measured data.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .activity import ActivityNode, Arc, ModelGraph, loads_model
from .rng import Exponential, Triangular, Uniform
from .scenario import Block, Link, LpSpec, Scenario, check

BATCH_SIZE = 1000
SEPARATE_ADD = BATCH_SIZE - 1
TRANSFER_HOURS = 10.0
END_TIME = 5000.0
MASTER_SEED = 2003

# illustrative: inter-arrival and service times in hours
A_X_INTERARRIVAL = Exponential(0.2)
A_X_MACHINING = Uniform(0.1, 0.18)
A_Z_INTERARRIVAL = Exponential(0.25)
A_Z_MACHINING = Uniform(0.12, 0.2)
A_OWN_INTERARRIVAL = Exponential(1.0)
A_OWN_SERVICE = Triangular(0.4, 0.6, 0.9)

B_EXPENSIVE_UNIT = Triangular(20.0, 30.0, 45.0)
B_XY_ASSEMBLY = Uniform(8.0, 12.0)
B_Y_INTERARRIVAL = Exponential(0.2)
B_Y_MACHINING = Uniform(0.1, 0.16)
B_OWN_INTERARRIVAL = Exponential(1.5)
B_OWN_SERVICE = Uniform(0.5, 1.2)

C_PREP = Uniform(6.0, 10.0)
C_XYZ_ASSEMBLY = Triangular(12.0, 16.0, 24.0)
C_OWN_INTERARRIVAL = Exponential(2.0)
C_OWN_SERVICE = Uniform(1.0, 1.8)

# B's only input-to-output path is expensive unit + assembly, at least 28 h
LOOKAHEAD = {"A": 1.0, "B": 20.0, "C": 1.0}


def _firm_a() -> LpSpec:
    lp = LpSpec("A", LOOKAHEAD["A"])
    lp.add_resource("mill_x")
    lp.add_resource("mill_z")
    lp.add_resource("own_a")
    for b in (
        Block("create_x", "Create", next="proc_x", entity_kind="X", dist=A_X_INTERARRIVAL),
        Block("proc_x", "Process", next="batch_x", resource="mill_x", dist=A_X_MACHINING),
        Block("batch_x", "Batch", next="send_b", size=BATCH_SIZE),
        Block("send_b", "PortSend", dest="B"),
        Block("create_z", "Create", next="proc_z", entity_kind="Z", dist=A_Z_INTERARRIVAL),
        Block("proc_z", "Process", next="batch_z", resource="mill_z", dist=A_Z_MACHINING),
        Block("batch_z", "Batch", next="send_c", size=BATCH_SIZE),
        Block("send_c", "PortSend", dest="C"),
        Block("create_own", "Create", next="proc_own", entity_kind="PA", dist=A_OWN_INTERARRIVAL),
        Block("proc_own", "Process", next="ship_own", resource="own_a", dist=A_OWN_SERVICE),
        Block("ship_own", "Dispose"),
    ):
        lp.add_block(b)
    return lp


def _firm_b() -> LpSpec:
    lp = LpSpec("B", LOOKAHEAD["B"])
    lp.add_resource("expensive_unit")
    lp.add_resource("assembly")
    lp.add_resource("mill_y")
    lp.add_resource("own_b")
    for b in (
        Block("port_a", "CreatePort", next="sep_a", source="A", entity_kind="X"),
        Block("sep_a", "Separate", next="proc_x", add=SEPARATE_ADD),
        Block("proc_x", "Process", next="assemble_xy", resource="expensive_unit",
              dist=B_EXPENSIVE_UNIT),
        Block("assemble_xy", "Process", next="send_c", resource="assembly",
              dist=B_XY_ASSEMBLY, relabel="XY"),
        Block("send_c", "PortSend", dest="C"),
        Block("create_y", "Create", next="proc_y", entity_kind="Y", dist=B_Y_INTERARRIVAL),
        Block("proc_y", "Process", next="batch_y", resource="mill_y", dist=B_Y_MACHINING),
        Block("batch_y", "Batch", next="kit_y", size=BATCH_SIZE),
        Block("kit_y", "Dispose"),
        Block("create_own", "Create", next="proc_own", entity_kind="PB", dist=B_OWN_INTERARRIVAL),
        Block("proc_own", "Process", next="ship_own", resource="own_b", dist=B_OWN_SERVICE),
        Block("ship_own", "Dispose"),
    ):
        lp.add_block(b)
    return lp


def _firm_c() -> LpSpec:
    lp = LpSpec("C", LOOKAHEAD["C"])
    lp.add_resource("prep")
    lp.add_resource("final_assembly")
    lp.add_resource("own_c")
    for b in (
        Block("port_a", "CreatePort", next="sep_a", source="A", entity_kind="Z"),
        Block("sep_a", "Separate", next="prep_z", add=SEPARATE_ADD),
        Block("prep_z", "Process", next="kit_z", resource="prep", dist=C_PREP),
        Block("kit_z", "Dispose"),
        Block("port_b", "CreatePort", next="sep_b", source="B", entity_kind="XY"),
        Block("sep_b", "Separate", next="prep_xy", add=SEPARATE_ADD),
        Block("prep_xy", "Process", next="assemble_xyz", resource="prep", dist=C_PREP),
        Block("assemble_xyz", "Process", next="ship_xyz", resource="final_assembly",
              dist=C_XYZ_ASSEMBLY, relabel="XYZ"),
        Block("ship_xyz", "Dispose"),
        Block("create_own", "Create", next="proc_own", entity_kind="PC", dist=C_OWN_INTERARRIVAL),
        Block("proc_own", "Process", next="ship_own", resource="own_c", dist=C_OWN_SERVICE),
        Block("ship_own", "Dispose"),
    ):
        lp.add_block(b)
    return lp


def build_case_study(end_time: float = END_TIME, seed: int = MASTER_SEED) -> Scenario:
    sc = Scenario(
        name="case_study",
        lps=[_firm_a(), _firm_b(), _firm_c()],
        links=[
            Link("A", "B", TRANSFER_HOURS),
            Link("A", "C", TRANSFER_HOURS),
            Link("B", "C", TRANSFER_HOURS),
        ],
        master_seed=seed,
        end_time=end_time,
    )
    return check(sc)


def case_study_graph() -> ModelGraph:
    return ModelGraph(
        [
            ActivityNode("E", "enterprise"),
            ActivityNode("A", "Firm A", "E"),
            ActivityNode("B", "Firm B", "E"),
            ActivityNode("C", "Firm C", "E"),
        ],
        [
            Arc("A", "B", "output", "X"),
            Arc("A", "C", "output", "Z"),
            Arc("B", "C", "output", "XY"),
        ],
    )


def data_path(name: str) -> Path:
    return Path(str(resources.files("dms_sim") / "data" / name))


CASE_STUDY_DMS = "case_study.dms"
CASE_STUDY_MODEL = "case_study.idef"


def load_case_study_graph() -> ModelGraph:
    return loads_model(data_path(CASE_STUDY_MODEL).read_text(encoding="utf-8"))
