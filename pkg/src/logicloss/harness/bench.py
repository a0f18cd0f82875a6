"""Scalar-variable encoder comparisons.

Two small minimize-only problems contrast the dual-variable encoder with
plain min/max fuzzy evaluation and with DL2-style sum/product composition.
Each works on a single decision variable ``v`` optimized by (projected)
gradient steps; no neural model is involved.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import encoder
from ..encoder import CostMatrix, DualState, EncoderKind
from ..formula import compile_source, ground


# ---------------------------------------------------------------------------
# Example 1: (v^2 <= -1) or (3v >= 2)
# ---------------------------------------------------------------------------

def _ex1_costs(v: float) -> np.ndarray:
    return np.array([v * v + 1.0, max(2.0 - 3.0 * v, 0.0)])


def _ex1_grads(v: float) -> np.ndarray:
    return np.array([2.0 * v, -3.0 if 2.0 - 3.0 * v > 0 else 0.0])


def ex1_closed_form(v: float) -> float:
    return float(_ex1_costs(v).min())


@dataclass(frozen=True)
class Ex1Result:
    dual_costs: np.ndarray  # closed-form cost per iterate
    dual_v: float
    fuzzy_grad0: float
    fuzzy_v: np.ndarray  # iterates under the min/max encoder


def run_example1(v0: float = 0.0, steps: int = 2000,
                 eta_v: float = 0.05, eta_nu: float = 0.05) -> Ex1Result:
    """Dual encoder escapes the fuzzy min/max encoder's stall at v0 = 0."""
    v = v0
    nu = np.array([0.5, 0.5])
    costs = np.empty(steps)
    for t in range(steps):
        s, g = _ex1_costs(v), _ex1_grads(v)
        v -= eta_v * float(nu @ g)
        nu = encoder.project_simplex(nu - eta_nu * s)
        costs[t] = ex1_closed_form(v)

    # fuzzy: gradient of min(S1, S2) flows through the smaller cost only
    fv = v0
    fuzzy_iters = np.empty(steps + 1)
    fuzzy_iters[0] = fv
    s0, g0 = _ex1_costs(v0), _ex1_grads(v0)
    fuzzy_grad0 = float(g0[int(np.argmin(s0))])
    for t in range(steps):
        s, g = _ex1_costs(fv), _ex1_grads(fv)
        fv -= eta_v * float(g[int(np.argmin(s))])
        fuzzy_iters[t + 1] = fv
    return Ex1Result(costs, v, fuzzy_grad0, fuzzy_iters)


# ---------------------------------------------------------------------------
# Example 2: (v = 1) or (v = 2) or (v = 3)
# ---------------------------------------------------------------------------

EX2_SOURCE = "v.out[0] == 1 | v.out[0] == 2 | v.out[0] == 3"
EX2_TEMPLATE = compile_source(EX2_SOURCE)


def ex2_cost_matrix(v: float) -> CostMatrix:
    g = ground(EX2_TEMPLATE, {"v": np.array([v])})
    return CostMatrix.from_grounding(EX2_TEMPLATE, g)


def ex2_closed_form(v: float) -> float:
    """Chebyshev distance from v to the satisfying set {1, 2, 3}."""
    return encoder.closed_form_cost(ex2_cost_matrix(v)).value


def dl2_product_cost(v: float, bounds=(1.0, 2.0, 3.0)) -> float:
    """DL2 disjunction product over the canonical one-sided atom costs."""
    return float(np.prod([max(v - c, 0.0) for c in bounds]))


def dl2_product_grad(v: float, bounds=(1.0, 2.0, 3.0)) -> float:
    s = np.array([max(v - c, 0.0) for c in bounds])
    act = np.array([1.0 if v > c else 0.0 for c in bounds])
    return float(sum(act[j] * np.prod(np.delete(s, j)) for j in range(len(bounds))))


@dataclass(frozen=True)
class Ex2Result:
    dl2_grad_15: float
    dl2_grad_25: float
    dual_best_cost: float
    dual_final_v: float


def run_example2(v0: float = 1.5, steps: int = 2000, eta_v0: float = 0.1,
                 eta_decay: float = 0.99, eta_dual: float = 0.1) -> Ex2Result:
    """Dual encoder leaves the DL2 product's flat region at v0 = 1.5.

    The step size on v decays geometrically so the iterate can settle onto a
    satisfying point; the dual problem itself is convex-concave.
    """
    v = v0
    duals: DualState | None = None
    best = np.inf
    eta = eta_v0
    for _ in range(steps):
        m = ex2_cost_matrix(v)
        if duals is None:
            duals = DualState.uniform(m.clause_sizes())
        best = min(best, encoder.closed_form_cost(m).value)
        grads = encoder.grad_outputs(m, duals)
        v -= eta * float(grads["v"][0])
        gmu, gnu = encoder.grad_duals(m, duals)
        duals.conj = encoder.project_simplex(duals.conj + eta_dual * gmu)
        duals.disj = tuple(encoder.project_simplex(nu - eta_dual * g)
                           for nu, g in zip(duals.disj, gnu))
        eta *= eta_decay
    best = min(best, ex2_closed_form(v))
    return Ex2Result(dl2_product_grad(1.5), dl2_product_grad(2.5), float(best), v)
