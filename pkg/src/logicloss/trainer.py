"""Stochastic gradient descent-ascent training loop.

Each step, on one sampled batch and with the costs grounded at the current
parameters: (1) descend the model weights on task loss plus the
distributional logic loss, (2) replace delta by its min-oracle, (3) ascend
the conjunction weights, (4) descend the per-clause disjunction weights,
projecting every dual vector back onto its simplex.
"""
from __future__ import annotations

import concurrent.futures
import math
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from . import encoder, model, variational
from .encoder import CostMatrix, DualState, EncoderKind
from .formula import CNFTemplate, eval_bool, ground, literal_holds
from .model import Head, MLPSpec, ModelParameters, UpdateRule
from .variational import DeltaState


class NonFiniteLossError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    eta_w: float = 1e-3
    eta_conj: float = 0.05
    eta_disj: float = 0.05
    schedule_gamma: float | None = None
    batch_size: int = 64
    epochs: int = 10
    tol: float = 0.01
    margin_eps: float = 0.01
    seed: int = 0
    dual_mode: str = "per-sample"  # or "global"
    optimizer: UpdateRule = UpdateRule.ADAPTIVE_MOMENTS
    variance_floor: float = variational.DEFAULT_VARIANCE_FLOOR
    logic_method: str = "dual"  # "dual" | "dl2" | "none"
    dl2_weight: float = 1.0
    tol_relax: bool = False  # evaluate satisfaction as v <= c + tol (regression bands)

    def __post_init__(self):
        if min(self.eta_w, self.eta_conj, self.eta_disj) <= 0:
            raise ValueError("step sizes must be positive")
        if self.tol < 0:
            raise ValueError("tol must be nonnegative")
        if self.dual_mode not in ("per-sample", "global"):
            raise ValueError(f"unknown dual_mode {self.dual_mode!r}")
        if self.logic_method not in ("dual", "dl2", "none"):
            raise ValueError(f"unknown logic_method {self.logic_method!r}")


@dataclass(frozen=True)
class Sample:
    """One training/eval record: per-slot inputs plus an optional label.

    ``template`` is the grounded-constraint template for this sample; samples
    may share one template object or carry individually sampled ones.
    """

    id: int
    slot_inputs: dict[str, np.ndarray]
    label: int | np.ndarray | None
    template: CNFTemplate | None = None


@dataclass(frozen=True)
class TaskData:
    train: tuple[Sample, ...]
    test: tuple[Sample, ...]
    model_spec: MLPSpec
    task_type: str  # "classification" | "regression"
    primary_slot: str = "x"


@dataclass
class TrainState:
    params: ModelParameters
    delta: DeltaState
    duals: dict[int | None, DualState]
    t: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))


@dataclass(frozen=True)
class MetricsRow:
    epoch: int
    train_loss: float
    task_loss: float
    acc_or_mse: float
    mae: float
    sat: float
    lit_sat: dict[str, float]
    mean_mu: float
    mean_delta: float
    dual_entropy: float


def worker_count() -> int:
    """Worker cap from LOGICLOSS_THREADS; defaults to 1 for bit-determinism."""
    try:
        return max(1, int(os.environ.get("LOGICLOSS_THREADS", "1")))
    except ValueError:
        return 1


def stepsize(t: int, cfg: TrainConfig) -> float:
    """gamma / sqrt(t+1) when the schedule is enabled, else constant."""
    if cfg.schedule_gamma is not None:
        return cfg.schedule_gamma / math.sqrt(t + 1)
    return cfg.eta_w


# ---------------------------------------------------------------------------
# Batch assembly
# ---------------------------------------------------------------------------

def _template_of(sample: Sample, constraint) -> CNFTemplate:
    if sample.template is not None:
        return sample.template
    if callable(constraint):
        return constraint(sample)
    if constraint is None:
        raise ValueError(f"sample {sample.id} has no constraint template")
    return constraint


def _stack_slots(samples: Sequence[Sample]) -> tuple[np.ndarray, dict[tuple[int, str], int]]:
    rows: list[np.ndarray] = []
    index: dict[tuple[int, str], int] = {}
    for si, s in enumerate(samples):
        for slot in sorted(s.slot_inputs):
            index[(si, slot)] = len(rows)
            rows.append(np.asarray(s.slot_inputs[slot], dtype=float))
    return np.vstack(rows), index


def _bindings(outputs: np.ndarray, index, si: int, sample: Sample) -> dict[str, np.ndarray]:
    return {slot: outputs[index[(si, slot)]] for slot in sample.slot_inputs}


def _ground_batch(samples, templates, outputs, index):
    def one(si: int) -> CostMatrix:
        g = ground(templates[si], _bindings(outputs, index, si, samples[si]))
        return CostMatrix.from_grounding(templates[si], g)

    n = worker_count()
    if n <= 1 or len(samples) < 2:
        return [one(si) for si in range(len(samples))]
    with concurrent.futures.ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(one, range(len(samples))))  # order preserved


def _group_costs(m: CostMatrix, d: DualState, template: CNFTemplate) -> np.ndarray:
    """Per-group dual-weighted costs z_g = sum over the group's clauses."""
    z = np.zeros(template.n_groups)
    per_clause = encoder.clause_costs(m, d) if m.n_clauses else np.zeros(0)
    for i, g in enumerate(template.group_map):
        z[g] += per_clause[i]
    return z


def _dual_for(state: TrainState, sample: Sample, m: CostMatrix, cfg: TrainConfig) -> DualState:
    key = sample.id if cfg.dual_mode == "per-sample" else None
    if key not in state.duals:
        owner = sample.id if cfg.dual_mode == "per-sample" else None
        state.duals[key] = DualState.uniform(m.clause_sizes(), owner)
    return state.duals[key]


def _task_loss_and_grad(sample: Sample, probs: np.ndarray, task_type: str):
    if task_type == "classification":
        return model.cross_entropy(probs, int(sample.label))
    y = np.asarray(sample.label, dtype=float)
    diff = probs - y
    loss = float(np.mean(diff * diff))
    return loss, 2.0 * diff / diff.shape[0]


# ---------------------------------------------------------------------------
# One SGDA step
# ---------------------------------------------------------------------------

def sgda_step(state: TrainState, batch: Sequence[Sample], constraint, cfg: TrainConfig) -> TrainState:
    if not batch:
        raise ValueError("empty batch")
    templates = [_template_of(s, constraint) for s in batch]
    inputs, index = _stack_slots(batch)
    outputs, trace = model.forward(state.params, inputs)
    out_grads = np.zeros_like(outputs)
    n = len(batch)

    matrices = _ground_batch(batch, templates, outputs, index)
    duals = [_dual_for(state, s, m, cfg) for s, m in zip(batch, matrices)]

    # task loss over labeled samples
    labeled = [si for si, s in enumerate(batch) if s.label is not None]
    task_sum = 0.0
    for si in labeled:
        row = index[(si, _primary_name(batch[si]))]
        loss, g = _task_loss_and_grad(batch[si], outputs[row], _task_type(batch[si]))
        task_sum += loss
        out_grads[row] += g / len(labeled)

    # logic loss over all samples
    logic_sum = 0.0
    z_rows = []
    factors: list[np.ndarray | None] = []
    for si, (s, m, d, tpl) in enumerate(zip(batch, matrices, duals, templates)):
        if cfg.logic_method == "none" or m.n_clauses == 0:
            z_rows.append(np.zeros(tpl.n_groups))
            factors.append(None)
            continue
        if cfg.logic_method == "dl2":
            cost = encoder.baseline_cost(m, EncoderKind.DL2_BASELINE)
            logic_sum += cfg.dl2_weight * cost
            grads = encoder.baseline_grad_outputs(m, EncoderKind.DL2_BASELINE)
            for slot, g in grads.items():
                out_grads[index[(si, slot)]] += cfg.dl2_weight * g / n
            z_rows.append(np.zeros(tpl.n_groups))
            factors.append(None)
            continue
        z = _group_costs(m, d, tpl)
        z_rows.append(z)
        terms = variational.logic_loss(z, state.delta)
        logic_sum += terms.total
        dmu, _ = variational.logic_loss_grad(z, state.delta)
        factors.append(dmu)
        clause_scale = np.array([dmu[g] for g in tpl.group_map]) / n
        grads = encoder.grad_outputs(m, d, clause_scale)
        for slot, g in grads.items():
            out_grads[index[(si, slot)]] += g

    batch_loss = (task_sum / len(labeled) if labeled else 0.0) + logic_sum / n
    if not math.isfinite(batch_loss):
        raise NonFiniteLossError(
            f"non-finite loss at t={state.t}: task={task_sum}, logic={logic_sum}, "
            f"|w|max={max(np.abs(w).max() for w in state.params.weights):.3g}")

    # (1) descend model weights
    model.backward(state.params, trace, out_grads)
    model.apply_update(state.params, stepsize(state.t, cfg), cfg.optimizer)

    if cfg.logic_method == "dual":
        # (2) delta min-oracle over this batch's pre-step costs
        state.delta = variational.delta_oracle(np.vstack(z_rows), cfg.variance_floor)

        # (3) ascend conjunction duals, (4) descend disjunction duals
        if cfg.dual_mode == "per-sample":
            for s, m, d, tpl, fac in zip(batch, matrices, duals, templates, factors):
                if m.n_clauses == 0 or fac is None:
                    continue
                _dual_update(d, m, tpl, fac, cfg)
        else:
            d = duals[0]
            gmu_acc = np.zeros_like(d.conj)
            gnu_acc = [np.zeros_like(v) for v in d.disj]
            for m, tpl, fac in zip(matrices, templates, factors):
                if m.n_clauses == 0 or fac is None:
                    continue
                gmu, gnu = encoder.grad_duals(m, d)
                scale = np.array([fac[g] for g in tpl.group_map])
                gmu_acc += scale * gmu / n
                for acc, g, sc in zip(gnu_acc, gnu, scale):
                    acc += sc * g / n
            d.conj = encoder.project_simplex(d.conj + cfg.eta_conj * gmu_acc)
            d.disj = tuple(encoder.project_simplex(nu - cfg.eta_disj * g)
                           for nu, g in zip(d.disj, gnu_acc))

    state.t += 1
    return state


def _dual_update(d: DualState, m: CostMatrix, tpl: CNFTemplate, fac: np.ndarray, cfg: TrainConfig):
    gmu, gnu = encoder.grad_duals(m, d)
    scale = np.array([fac[g] for g in tpl.group_map])
    d.conj = encoder.project_simplex(d.conj + cfg.eta_conj * scale * gmu)
    d.disj = tuple(encoder.project_simplex(nu - cfg.eta_disj * sc * g)
                   for nu, g, sc in zip(d.disj, gnu, scale))


def _primary_name(sample: Sample) -> str:
    if "x" in sample.slot_inputs:
        return "x"
    return sorted(sample.slot_inputs)[0]


def _task_type(sample: Sample) -> str:
    return "classification" if isinstance(sample.label, (int, np.integer)) else "regression"


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def train(datasets: TaskData, constraint, cfg: TrainConfig,
          callbacks: Iterable[Callable] = ()) -> tuple[TrainState, list[MetricsRow]]:
    """Run epochs of seeded-shuffle SGDA; one metrics row per epoch.

    Deterministic for a fixed config and seed in single-threaded mode.
    """
    rng = np.random.default_rng(cfg.seed)
    params = model.init(replace(datasets.model_spec, seed=cfg.seed))
    m0 = _initial_groups(datasets, constraint)
    state = TrainState(params, DeltaState.ones(m0, cfg.variance_floor), {}, 0, rng)

    rows = [evaluate_state(state, datasets, constraint, cfg, epoch=0)]
    for cb in callbacks:
        cb(state, rows[-1])
    order = np.arange(len(datasets.train))
    for epoch in range(1, cfg.epochs + 1):
        rng.shuffle(order)
        for start in range(0, len(order), cfg.batch_size):
            batch = [datasets.train[i] for i in order[start : start + cfg.batch_size]]
            state = sgda_step(state, batch, constraint, cfg)
        rows.append(evaluate_state(state, datasets, constraint, cfg, epoch))
        for cb in callbacks:
            cb(state, rows[-1])
    return state, rows


def _initial_groups(datasets: TaskData, constraint) -> int:
    for s in (*datasets.train, *datasets.test):
        tpl = s.template or (constraint(s) if callable(constraint) else constraint)
        if tpl is not None:
            return tpl.n_groups
    return 1


def evaluate_state(state: TrainState, datasets: TaskData, constraint,
                   cfg: TrainConfig, epoch: int) -> MetricsRow:
    train_loss = _dataset_task_loss(state, datasets.train, datasets)
    row = evaluate(state, datasets.test, constraint, cfg.tol,
                   relax=cfg.tol_relax, task_type=datasets.task_type,
                   primary_slot=datasets.primary_slot)
    entropy = (float(np.mean([d.entropy() for d in state.duals.values()]))
               if state.duals else 0.0)
    return replace(row, epoch=epoch, train_loss=train_loss, dual_entropy=entropy)


def _dataset_task_loss(state: TrainState, samples: Sequence[Sample], datasets: TaskData) -> float:
    labeled = [s for s in samples if s.label is not None]
    if not labeled:
        return 0.0
    inputs = np.vstack([s.slot_inputs[datasets.primary_slot] for s in labeled])
    outputs, _ = model.forward(state.params, inputs)
    total = 0.0
    for s, out in zip(labeled, outputs):
        loss, _ = _task_loss_and_grad(s, out, datasets.task_type)
        total += loss
    return total / len(labeled)


def evaluate(state: TrainState, dataset: Sequence[Sample], constraint, tol: float,
             *, relax: bool = False, task_type: str = "classification",
             primary_slot: str = "x") -> MetricsRow:
    """Task metrics plus constraint-satisfaction rates at tolerance ``tol``."""
    if not dataset:
        raise ValueError("empty dataset")
    templates = [_template_of(s, constraint) for s in dataset]
    inputs, index = _stack_slots(dataset)
    outputs, _ = model.forward(state.params, inputs)

    task_sum, correct, se_sum, ae_sum, n_labeled = 0.0, 0, 0.0, 0.0, 0
    sat_count = 0
    lit_hits: dict[str, int] = {}
    lit_total: dict[str, int] = {}
    mu_sum = 0.0
    for si, (s, tpl) in enumerate(zip(dataset, templates)):
        out = outputs[index[(si, primary_slot)]]
        if s.label is not None:
            n_labeled += 1
            loss, _ = _task_loss_and_grad(s, out, task_type)
            task_sum += loss
            if task_type == "classification":
                correct += int(np.argmax(out) == int(s.label))
            else:
                y = np.asarray(s.label, dtype=float)
                se_sum += float(np.mean((out - y) ** 2))
                ae_sum += float(np.mean(np.abs(out - y)))
        g = ground(tpl, _bindings(outputs, index, si, s))
        sat_count += int(eval_bool(tpl, g.values, tol, relax=relax))
        flags = literal_holds(tpl, g.values, tol, relax=relax)
        offsets = tpl.atom_offsets()
        for name, positions in tpl.literal_groups().items():
            lit_total[name] = lit_total.get(name, 0) + 1
            ok = all(flags[offsets[ci] + li] for ci, li in positions)
            lit_hits[name] = lit_hits.get(name, 0) + int(ok)
        m = CostMatrix.from_grounding(tpl, g)
        if m.n_clauses:
            mins = np.array([c.min() for c in m.costs])
            per_group = np.zeros(tpl.n_groups)
            for i, grp in enumerate(tpl.group_map):
                per_group[grp] = max(per_group[grp], mins[i])
            mu_sum += float(per_group.mean())

    n = len(dataset)
    if task_type == "classification":
        acc_or_mse = correct / n_labeled if n_labeled else 0.0
        mae = 0.0
    else:
        acc_or_mse = se_sum / n_labeled if n_labeled else 0.0
        mae = ae_sum / n_labeled if n_labeled else 0.0
    lit_sat = {name: lit_hits[name] / lit_total[name] for name in sorted(lit_total)}
    return MetricsRow(
        epoch=0,
        train_loss=0.0,
        task_loss=task_sum / n_labeled if n_labeled else 0.0,
        acc_or_mse=acc_or_mse,
        mae=mae,
        sat=sat_count / n,
        lit_sat=lit_sat,
        mean_mu=mu_sum / n,
        mean_delta=float(np.mean(state.delta.delta)),
        dual_entropy=0.0,
    )


# ---------------------------------------------------------------------------
# Metrics CSV
# ---------------------------------------------------------------------------

def metrics_to_csv(rows: Sequence[MetricsRow], path: str) -> None:
    """Fixed-format CSV, 9 significant digits, byte-deterministic."""
    lit_names = sorted({name for r in rows for name in r.lit_sat})
    header = (["epoch", "task_loss", "acc_or_mse", "mae", "sat"]
              + [f"lit_sat_{n}" for n in lit_names]
              + ["mean_mu", "mean_delta", "dual_entropy"])
    lines = [",".join(header)]
    for r in rows:
        vals = [str(r.epoch), _g9(r.task_loss), _g9(r.acc_or_mse), _g9(r.mae), _g9(r.sat)]
        vals += [_g9(r.lit_sat.get(n, 0.0)) for n in lit_names]
        vals += [_g9(r.mean_mu), _g9(r.mean_delta), _g9(r.dual_entropy)]
        lines.append(",".join(vals))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _g9(v: float) -> str:
    return f"{v:.9g}"
