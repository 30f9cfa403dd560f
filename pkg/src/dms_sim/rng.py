"""Random variate streams and the distribution menu used by blocks.

Every (LP, block) pair draws from its own stream derived from the master
seed by hashing, so moving a block into a different logical process (or
flattening the whole model into one kernel) never changes its variates.
"""

from __future__ import annotations

import hashlib
import math
import random
import re
from dataclasses import dataclass


def stream_seed(master_seed: int, lp: str, block: str) -> int:
    key = f"{master_seed}\x1f{lp}\x1f{block}".encode("utf-8")
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "big")


def make_stream(master_seed: int, lp: str, block: str) -> random.Random:
    return random.Random(stream_seed(master_seed, lp, block))


@dataclass(frozen=True)
class Distribution:
    """A non-negative service or inter-arrival time distribution.

    ``kind`` is one of Constant, Uniform, Exponential, Triangular. Parameters
    follow the usual textbook order: Uniform(a, b), Exponential(mean),
    Triangular(a, m, b).
    """

    kind: str
    params: tuple[float, ...]

    def __post_init__(self):
        arity = _ARITY.get(self.kind)
        if arity is None:
            raise ValueError(f"unknown distribution {self.kind!r}")
        if len(self.params) != arity:
            raise ValueError(f"{self.kind} takes {arity} parameter(s), got {len(self.params)}")
        p = self.params
        if any(not math.isfinite(x) for x in p):
            raise ValueError(f"{self}: parameters must be finite")
        if self.kind == "Constant" and p[0] < 0:
            raise ValueError(f"{self}: value must be >= 0")
        if self.kind == "Uniform" and not 0 <= p[0] <= p[1]:
            raise ValueError(f"{self}: need 0 <= a <= b")
        if self.kind == "Exponential" and p[0] <= 0:
            raise ValueError(f"{self}: mean must be > 0")
        if self.kind == "Triangular" and not 0 <= p[0] <= p[1] <= p[2]:
            raise ValueError(f"{self}: need 0 <= a <= m <= b")

    def sample(self, rng: random.Random) -> float:
        p = self.params
        if self.kind == "Constant":
            return p[0]
        if self.kind == "Uniform":
            return rng.uniform(p[0], p[1])
        if self.kind == "Exponential":
            return rng.expovariate(1.0 / p[0])
        # stdlib argument order is (low, high, mode)
        return rng.triangular(p[0], p[2], p[1])

    @property
    def mean(self) -> float:
        p = self.params
        if self.kind in ("Constant", "Exponential"):
            return p[0]
        if self.kind == "Uniform":
            return (p[0] + p[1]) / 2
        return (p[0] + p[1] + p[2]) / 3

    @property
    def lower_bound(self) -> float:
        """Smallest value the distribution can produce (0 for Exponential)."""
        if self.kind == "Exponential":
            return 0.0
        return self.params[0]

    @property
    def bounded_below(self) -> bool:
        return self.kind != "Exponential"

    def __str__(self) -> str:
        return f"{self.kind}({','.join(_fmt(x) for x in self.params)})"

    @classmethod
    def parse(cls, text: str) -> "Distribution":
        m = _DIST_RE.fullmatch(text.strip())
        if not m:
            raise ValueError(f"cannot parse distribution {text!r}")
        kind = m.group(1)
        args = [a.strip() for a in m.group(2).split(",")] if m.group(2).strip() else []
        try:
            params = tuple(float(a) for a in args)
        except ValueError:
            raise ValueError(f"non-numeric parameter in {text!r}") from None
        return cls(kind, params)


def Constant(value: float) -> Distribution:
    return Distribution("Constant", (float(value),))


def Uniform(a: float, b: float) -> Distribution:
    return Distribution("Uniform", (float(a), float(b)))


def Exponential(mean: float) -> Distribution:
    return Distribution("Exponential", (float(mean),))


def Triangular(a: float, m: float, b: float) -> Distribution:
    return Distribution("Triangular", (float(a), float(m), float(b)))


_ARITY = {"Constant": 1, "Uniform": 2, "Exponential": 1, "Triangular": 3}
_DIST_RE = re.compile(r"([A-Za-z]+)\((.*)\)")


def _fmt(x: float) -> str:
    # repr() round-trips binary64 exactly, which save/load relies on
    return repr(float(x))
