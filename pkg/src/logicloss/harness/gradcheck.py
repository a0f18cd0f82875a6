"""Finite-difference gradient suites.

Three routes are checked against central differences (h = 1e-5) at random
non-kink points: the encoder's output gradients, the variational loss
gradients, and the end-to-end parameter gradients of the composite loss
(cross-entropy plus the distributional logic loss through grounding and
forward).
"""
from __future__ import annotations

import numpy as np

from .. import encoder, model, variational
from ..encoder import CostMatrix, DualState
from ..formula import Atom, CNFTemplate, TermExpr, ground
from ..model import Head, MLPSpec
from ..variational import DeltaState

FD_H = 1e-5
KINK_GAP = 1e-3  # atom states are resampled until clear of hinge kinks


def _random_template(rng: np.random.Generator, n_slots=2, arity=3,
                     max_clauses=3, max_lits=3) -> CNFTemplate:
    slots = [f"s{k}" for k in range(n_slots)]
    clauses = []
    for _ in range(rng.integers(1, max_clauses + 1)):
        lits = []
        for _ in range(rng.integers(1, max_lits + 1)):
            n_refs = rng.integers(1, 3)
            refs = tuple((slots[rng.integers(n_slots)], int(rng.integers(arity)),
                          float(rng.uniform(-2, 2))) for _ in range(n_refs))
            lits.append(Atom(TermExpr(refs), float(rng.uniform(-1, 1))))
        clauses.append(tuple(lits))
    return CNFTemplate.from_clauses(tuple(clauses))


def _non_kink_bindings(template: CNFTemplate, rng: np.random.Generator, arity=3):
    slots = sorted(template.slot_names)
    for _ in range(200):
        bindings = {s: rng.uniform(-1, 1, arity) for s in slots}
        g = ground(template, bindings)
        bounds = np.array([a.bound for _, _, a in template.atoms()])
        if np.all(np.abs(g.values - bounds) > KINK_GAP):
            return bindings, g
    raise RuntimeError("could not sample a non-kink state")


def check_encoder_grad_outputs(points: int, seed: int) -> float:
    """grad_outputs of the dual-weighted cost vs central differences."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    done = 0
    while done < points:
        template = _random_template(rng)
        try:
            bindings, g = _non_kink_bindings(template, rng)
        except RuntimeError:
            continue
        m = CostMatrix.from_grounding(template, g)
        d = DualState.uniform(m.clause_sizes())
        d.conj = encoder.project_simplex(rng.uniform(0, 1, m.n_clauses))
        d.disj = tuple(encoder.project_simplex(rng.uniform(0, 1, n)) for n in m.clause_sizes())
        ana = encoder.grad_outputs(m, d)

        def cost_at(bnd):
            mm = CostMatrix.from_grounding(template, ground(template, bnd))
            return encoder.cnf_cost(mm, d)

        for slot in sorted(bindings):
            for k in range(bindings[slot].shape[0]):
                bp = {s: v.copy() for s, v in bindings.items()}
                bm = {s: v.copy() for s, v in bindings.items()}
                bp[slot][k] += FD_H
                bm[slot][k] -= FD_H
                num = (cost_at(bp) - cost_at(bm)) / (2 * FD_H)
                denom = max(abs(num), 1e-6)
                worst = max(worst, abs(ana[slot][k] - num) / denom)
        done += 1
    return worst


def check_logic_loss_grad(points: int, seed: int) -> float:
    """Analytic loss gradients vs central differences on a (mu, delta) grid."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(points):
        m = int(rng.integers(1, 5))
        mu = rng.uniform(0.05, 5.0, m)  # stay off the mu=0 boundary
        delta = rng.uniform(0.5, 2.0, m)
        d = DeltaState(delta)
        dmu, ddelta = variational.logic_loss_grad(mu, d)
        for k in range(m):
            for which, ana in (("mu", dmu[k]), ("delta", ddelta[k])):
                hp, hm = mu.copy(), mu.copy()
                dp, dm_ = delta.copy(), delta.copy()
                if which == "mu":
                    hp[k] += FD_H
                    hm[k] -= FD_H
                else:
                    dp[k] += FD_H
                    dm_[k] -= FD_H
                up = variational.logic_loss(hp, DeltaState(dp)).total
                dn = variational.logic_loss(hm, DeltaState(dm_)).total
                num = (up - dn) / (2 * FD_H)
                worst = max(worst, abs(ana - num) / max(abs(num), 1e-6))
    return worst


def _composite_loss(params, x_slots, template, duals, delta, target):
    outs = {}
    for slot, x in x_slots.items():
        out, _ = model.forward(params, x)
        outs[slot] = out
    ce, _ = model.cross_entropy(outs["s0"], target)
    m = CostMatrix.from_grounding(template, ground(template, outs))
    z = np.zeros(template.n_groups)
    per_clause = encoder.clause_costs(m, duals)
    for i, grp in enumerate(template.group_map):
        z[grp] += per_clause[i]
    return ce + variational.logic_loss(z, delta).total


def check_end_to_end(points: int, seed: int) -> float:
    """Full parameter gradients of CE + logic loss vs central differences."""
    rng = np.random.default_rng(seed)
    spec = MLPSpec((3, 3, 2), Head.SOFTMAX, seed)
    worst = 0.0
    done = 0
    while done < points:
        template = _random_template(rng, n_slots=2, arity=2, max_clauses=2, max_lits=2)
        params = model.init(MLPSpec((3, 3, 2), Head.SOFTMAX, int(rng.integers(1 << 31))))
        x_slots = {s: rng.uniform(-1, 1, 3) for s in sorted(template.slot_names | {"s0"})}
        target = int(rng.integers(2))
        g0 = ground(template, {s: model.forward(params, x)[0] for s, x in x_slots.items()})
        bounds = np.array([a.bound for _, _, a in template.atoms()])
        if np.any(np.abs(g0.values - bounds) < KINK_GAP):
            continue  # resample: too close to a hinge kink
        m = CostMatrix.from_grounding(template, g0)
        duals = DualState.uniform(m.clause_sizes())
        delta = DeltaState(np.full(template.n_groups, 0.8))

        # analytic: assemble output grads, push through backward
        outs, traces = {}, {}
        for slot, x in x_slots.items():
            out, tr = model.forward(params, x)
            outs[slot] = out
            traces[slot] = tr
        _, ce_grad = model.cross_entropy(outs["s0"], target)
        z = np.zeros(template.n_groups)
        per_clause = encoder.clause_costs(m, duals)
        for i, grp in enumerate(template.group_map):
            z[grp] += per_clause[i]
        dmu, _ = variational.logic_loss_grad(z, delta)
        clause_scale = np.array([dmu[g] for g in template.group_map])
        logic_grads = encoder.grad_outputs(m, duals, clause_scale)
        for slot in x_slots:
            og = logic_grads.get(slot, np.zeros(2)).copy()
            if slot == "s0":
                og += ce_grad
            model.backward(params, traces[slot], og)
        ana = params.flat_grads()
        params.zero_grads()

        theta0 = params.flatten()
        num = np.zeros_like(theta0)
        for k in range(theta0.size):
            for sgn, store in ((+1, 0), (-1, 1)):
                theta = theta0.copy()
                theta[k] += sgn * FD_H
                params.load_flat(theta)
                val = _composite_loss(params, x_slots, template, duals, delta, target)
                num[k] = num[k] + sgn * val
        num /= 2 * FD_H
        params.load_flat(theta0)
        rel = np.abs(ana - num) / np.maximum(np.abs(num), 1e-5)
        worst = max(worst, float(rel.max()))
        done += 1
    return worst


def run_all(points: int = 100, seed: int = 0) -> list[tuple[str, float, float]]:
    return [
        ("encoder.grad_outputs", check_encoder_grad_outputs(points, seed), 1e-5),
        ("variational.logic_loss_grad", check_logic_loss_grad(points, seed + 1), 1e-5),
        ("model end-to-end", check_end_to_end(points, seed + 2), 1e-4),
    ]
