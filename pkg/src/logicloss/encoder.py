"""Dual-variable cost encoding of grounded CNF constraints.

A grounded constraint becomes a ragged matrix of hinge costs
``S_ij = max(v_ij - c_ij, 0)``.  Simplex-constrained weights are attached to
every clause (ascended) and to every literal within a clause (descended);
at the saddle the weighted cost equals ``max_i min_j S_ij``, which is zero
exactly when the constraint holds.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .formula import CNFTemplate, Grounding


class NonFiniteError(ValueError):
    pass


class ShapeMismatchError(ValueError):
    pass


class EmptyClauseError(ValueError):
    pass


class EncoderKind(enum.Enum):
    DUAL_VARIABLE = "dual"
    FUZZY_MIN_MAX = "fuzzy"
    DL2_BASELINE = "dl2"


def atom_cost(v: float, c: float) -> float:
    """Hinge cost of a single atom ``v <= c``; zero iff the atom holds."""
    if not (math.isfinite(v) and math.isfinite(c)):
        raise NonFiniteError(f"non-finite atom state v={v}, c={c}")
    return max(v - c, 0.0)


@dataclass(frozen=True)
class CostMatrix:
    """Per-clause literal costs with optional linear gradient rows.

    ``active[i][j]`` is True where the hinge is strictly active
    (``v_ij > c_ij``); the subgradient at the kink is taken as zero, so a
    satisfied literal is gradient-silent.
    """

    costs: tuple[np.ndarray, ...]
    active: tuple[np.ndarray, ...]
    rows: tuple[tuple[tuple[tuple[str, int, float], ...], ...], ...] | None = None
    slot_arity: dict[str, int] | None = None

    @staticmethod
    def from_raw(costs) -> "CostMatrix":
        cs = tuple(np.asarray(c, dtype=float) for c in costs)
        for c in cs:
            if c.size == 0:
                raise EmptyClauseError("clause with no literals")
            if not np.all(np.isfinite(c)) or np.any(c < 0):
                raise NonFiniteError("costs must be finite and nonnegative")
        return CostMatrix(cs, tuple(c > 0 for c in cs))

    @staticmethod
    def from_grounding(template: CNFTemplate, grounding: Grounding) -> "CostMatrix":
        costs, active, rows = [], [], []
        k = 0
        for clause in template.clauses:
            vals = grounding.values[k : k + len(clause)]
            bounds = np.array([a.bound for a in clause])
            costs.append(np.maximum(vals - bounds, 0.0))
            active.append(vals > bounds)
            rows.append(tuple(grounding.rows[k + j] for j in range(len(clause))))
            k += len(clause)
        return CostMatrix(tuple(costs), tuple(active), tuple(rows), dict(grounding.slot_arity))

    @property
    def n_clauses(self) -> int:
        return len(self.costs)

    def clause_sizes(self) -> tuple[int, ...]:
        return tuple(c.shape[0] for c in self.costs)


@dataclass
class DualState:
    """Simplex weights: ``conj`` over clauses, one ``disj`` vector per clause.

    ``owner`` is None for a globally shared state or the owning sample id in
    per-sample mode.
    """

    conj: np.ndarray
    disj: tuple[np.ndarray, ...]
    owner: int | None = None

    @staticmethod
    def uniform(clause_sizes: tuple[int, ...], owner: int | None = None) -> "DualState":
        k = len(clause_sizes)
        conj = np.full(k, 1.0 / k) if k else np.zeros(0)
        disj = tuple(np.full(n, 1.0 / n) for n in clause_sizes)
        return DualState(conj, disj, owner)

    def validate(self, atol: float = 1e-12) -> None:
        vecs = [self.conj, *self.disj]
        for v in vecs:
            if np.any(v < -atol) or abs(v.sum() - 1.0) > atol:
                raise ShapeMismatchError(f"dual vector off the simplex: {v}")

    def entropy(self) -> float:
        """Mean Shannon entropy over the conjunction and disjunction vectors."""
        def h(p: np.ndarray) -> float:
            q = p[p > 0]
            return float(-(q * np.log(q)).sum())
        vecs = [self.conj, *self.disj] if self.conj.size else list(self.disj)
        return float(np.mean([h(v) for v in vecs])) if vecs else 0.0

    def copy(self) -> "DualState":
        return DualState(self.conj.copy(), tuple(v.copy() for v in self.disj), self.owner)


def _check_shapes(m: CostMatrix, d: DualState) -> None:
    if d.conj.shape[0] != m.n_clauses or len(d.disj) != m.n_clauses:
        raise ShapeMismatchError("dual state does not match cost matrix")
    for nu, c in zip(d.disj, m.costs):
        if nu.shape != c.shape:
            raise ShapeMismatchError("disjunction weights do not match clause")


def cnf_cost(m: CostMatrix, d: DualState) -> float:
    """Dual-weighted cost: sum_i mu_i sum_j nu_ij S_ij."""
    _check_shapes(m, d)
    return float(sum(mu * float(nu @ c) for mu, nu, c in zip(d.conj, d.disj, m.costs)))


def clause_costs(m: CostMatrix, d: DualState) -> np.ndarray:
    """Per-clause dual-weighted costs mu_i * <nu_i, S_i>."""
    _check_shapes(m, d)
    return np.array([mu * float(nu @ c) for mu, nu, c in zip(d.conj, d.disj, m.costs)])


@dataclass(frozen=True)
class ClosedForm:
    value: float
    argmax_clauses: frozenset[int]
    argmin_literals: tuple[frozenset[int], ...]


def closed_form_cost(m: CostMatrix) -> ClosedForm:
    """max over clauses of min over literals, with exhaustive tie sets."""
    if m.n_clauses == 0:
        raise EmptyClauseError("empty cost matrix")
    mins = np.array([c.min() for c in m.costs])
    value = float(mins.max())
    argmax = frozenset(int(i) for i in np.flatnonzero(mins == value))
    argmins = tuple(frozenset(int(j) for j in np.flatnonzero(c == c.min())) for c in m.costs)
    return ClosedForm(value, argmax, argmins)


def optimal_duals(m: CostMatrix, owner: int | None = None) -> DualState:
    """Saddle-point duals: uniform over argmax clauses / argmin literals."""
    cf = closed_form_cost(m)
    conj = np.zeros(m.n_clauses)
    for i in cf.argmax_clauses:
        conj[i] = 1.0 / len(cf.argmax_clauses)
    disj = []
    for c, ties in zip(m.costs, cf.argmin_literals):
        nu = np.zeros_like(c)
        for j in ties:
            nu[j] = 1.0 / len(ties)
        disj.append(nu)
    return DualState(conj, tuple(disj), owner)


def grad_duals(m: CostMatrix, d: DualState) -> tuple[np.ndarray, tuple[np.ndarray, ...]]:
    """Bilinear gradients: d/dmu_i = <nu_i, S_i>, d/dnu_ij = mu_i S_ij."""
    _check_shapes(m, d)
    gmu = np.array([float(nu @ c) for nu, c in zip(d.disj, m.costs)])
    gnu = tuple(mu * c for mu, c in zip(d.conj, m.costs))
    return gmu, gnu


def grad_outputs(m: CostMatrix, d: DualState,
                 clause_scale: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Gradient of the dual-weighted cost w.r.t. each slot's output vector.

    ``clause_scale`` optionally rescales each clause's contribution (used to
    chain through an outer loss acting on per-group costs).
    """
    _check_shapes(m, d)
    if m.rows is None or m.slot_arity is None:
        raise ShapeMismatchError("cost matrix carries no gradient rows")
    grads = {slot: np.zeros(n) for slot, n in m.slot_arity.items()}
    for i in range(m.n_clauses):
        scale = d.conj[i] * (1.0 if clause_scale is None else clause_scale[i])
        if scale == 0.0:
            continue
        for j in range(m.costs[i].shape[0]):
            if not m.active[i][j]:
                continue
            w = scale * d.disj[i][j]
            if w == 0.0:
                continue
            for slot, idx, coeff in m.rows[i][j]:
                grads[slot][idx] += w * coeff
    return grads


def project_simplex(x: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-and-threshold)."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("cannot project non-finite vector")
    u = np.sort(x)[::-1]
    css = np.cumsum(u)
    j = np.arange(1, x.shape[0] + 1)
    rho = int(np.nonzero(u * j > (css - 1.0))[0][-1])
    theta = (css[rho] - 1.0) / (rho + 1.0)
    return np.maximum(x - theta, 0.0)


def baseline_cost(m: CostMatrix, kind: EncoderKind) -> float:
    """Comparison encoders: DL2 sum-of-products, or plain max-min fuzzy."""
    if m.n_clauses == 0:
        raise EmptyClauseError("empty cost matrix")
    if kind == EncoderKind.DL2_BASELINE:
        return float(sum(np.prod(c) for c in m.costs))
    if kind == EncoderKind.FUZZY_MIN_MAX:
        return closed_form_cost(m).value
    raise ValueError(f"baseline_cost does not apply to {kind}")


def baseline_grad_outputs(m: CostMatrix, kind: EncoderKind) -> dict[str, np.ndarray]:
    """Subgradients of the baseline encoders w.r.t. slot outputs."""
    if m.rows is None or m.slot_arity is None:
        raise ShapeMismatchError("cost matrix carries no gradient rows")
    grads = {slot: np.zeros(n) for slot, n in m.slot_arity.items()}
    if kind == EncoderKind.DL2_BASELINE:
        for i in range(m.n_clauses):
            c = m.costs[i]
            for j in range(c.shape[0]):
                if not m.active[i][j]:
                    continue
                partial = float(np.prod(np.delete(c, j)))
                if partial == 0.0:
                    continue
                for slot, idx, coeff in m.rows[i][j]:
                    grads[slot][idx] += partial * coeff
        return grads
    if kind == EncoderKind.FUZZY_MIN_MAX:
        # gradient flows through the first argmax clause's first argmin literal
        cf = closed_form_cost(m)
        i = min(cf.argmax_clauses)
        j = min(cf.argmin_literals[i])
        if m.active[i][j]:
            for slot, idx, coeff in m.rows[i][j]:
                grads[slot][idx] += coeff
        return grads
    raise ValueError(f"baseline_grad_outputs does not apply to {kind}")


def dual_gda(m: CostMatrix, steps: int, eta_conj: float = 1.0, eta_disj: float = 1.0,
             init: DualState | None = None, stop_tol: float | None = None) -> tuple[DualState, float]:
    """Projected gradient ascent-descent on the duals of a frozen cost matrix.

    Returns the final duals and the dual-weighted cost, which converges to
    the max-min closed form (the dual problem is convex-concave; with frozen
    costs it is bilinear, so large projected steps are stable).  With
    ``stop_tol`` the loop exits once the cost is that close to closed form.
    """
    d = init.copy() if init is not None else DualState.uniform(m.clause_sizes())
    target = closed_form_cost(m).value if stop_tol is not None else None
    for _ in range(steps):
        gmu, gnu = grad_duals(m, d)
        d.conj = project_simplex(d.conj + eta_conj * gmu)
        d.disj = tuple(project_simplex(nu - eta_disj * g) for nu, g in zip(d.disj, gnu))
        if target is not None and abs(cnf_cost(m, d) - target) <= stop_tol:
            break
    return d, cnf_cost(m, d)
