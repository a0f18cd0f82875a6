"""Named constraint templates used as parser/encoder fixtures.

These mirror the constraint patterns of the symbol-sequence grammar task
(adjacent digit/operator sums) and the superclass-mass task (each
superclass probability pinned to 0 or 1), at desk scale.
"""
from __future__ import annotations

from dataclasses import dataclass

from ..formula import CNFTemplate, compile_source


@dataclass(frozen=True)
class Fixture:
    name: str
    source: str
    template: CNFTemplate


def _sum_term(slot: str, indices: range) -> str:
    return " + ".join(f"{slot}.p[{i}]" for i in indices)


def hwf_adjacency_source(k: int = 4, n_digits: int = 10, n_ops: int = 4) -> str:
    """For each adjacent symbol pair: both digits (digit mass sums to 2) or
    exactly one operator (operator mass sums to 1)."""
    pairs = []
    for i in range(1, k):
        a, b = f"s{i}", f"s{i + 1}"
        digits = f"{_sum_term(a, range(n_digits))} + {_sum_term(b, range(n_digits))} == 2"
        ops_rng = range(n_digits, n_digits + n_ops)
        ops = f"{_sum_term(a, ops_rng)} + {_sum_term(b, ops_rng)} == 1"
        pairs.append(f"(({digits}) | ({ops}))")
    return " & ".join(pairs)


def superclass_source(groups: tuple[tuple[int, ...], ...] = ((0, 1), (2, 3))) -> str:
    """Each superclass mass is pushed to either zero or full."""
    clauses = []
    for members in groups:
        s = " + ".join(f"x.p[{i}]" for i in members)
        clauses.append(f"({s} <= 0 | {s} >= 1)")
    return " & ".join(clauses)


def confidence_band_source() -> str:
    """The rewritten digit-rotation rule in softened disjunction form."""
    return "rx.p[9] <= 0.05 | x.p[6] >= 0.95"


def fixture_constraints() -> dict[str, Fixture]:
    sources = {
        "hwf_adjacency": hwf_adjacency_source(),
        "superclass_sums": superclass_source(),
        "confidence_band": confidence_band_source(),
    }
    return {name: Fixture(name, src, compile_source(src)) for name, src in sources.items()}
