"""Experiment drivers for the two desk-scale tasks, plus run artifacts.

Every run is reproducible from its artifacts: a manifest with the full
config snapshot and a content-derived run id, the metrics CSV, a text
checkpoint, and the constraint source.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, replace

import numpy as np

from .. import model, trainer
from ..formula import CNFTemplate
from ..model import Head, MLPSpec, UpdateRule
from ..trainer import MetricsRow, Sample, TaskData, TrainConfig, TrainState
from . import datasets
from .datasets import SHORTCUT_RULE


@dataclass(frozen=True)
class RunArtifacts:
    run_id: str
    out_dir: str
    manifest_path: str
    metrics_path: str
    checkpoint_path: str
    constraint_path: str


def run_id_for(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True).encode()
    return hashlib.sha1(blob).hexdigest()[:12]


def write_run_artifacts(out_dir: str, config: dict, rows: list[MetricsRow],
                        state: TrainState, constraint_source: str) -> RunArtifacts:
    rid = run_id_for(config)
    run_dir = os.path.join(out_dir, f"run-{rid}")
    os.makedirs(run_dir, exist_ok=True)
    paths = RunArtifacts(
        rid, run_dir,
        os.path.join(run_dir, "manifest.json"),
        os.path.join(run_dir, "metrics.csv"),
        os.path.join(run_dir, "checkpoint.json"),
        os.path.join(run_dir, "constraint.lc"),
    )
    with open(paths.manifest_path, "w", encoding="utf-8") as fh:
        json.dump({"run_id": rid, "config": config}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    trainer.metrics_to_csv(rows, paths.metrics_path)
    model.save_checkpoint(state.params, paths.checkpoint_path)
    with open(paths.constraint_path, "w", encoding="utf-8") as fh:
        fh.write(constraint_source + "\n")
    return paths


# ---------------------------------------------------------------------------
# Shortcut-satisfaction task
# ---------------------------------------------------------------------------

SHORTCUT_WIDTHS = (2, 32, 32, 4)


def shortcut_config(seed: int, method: str = "dual", epochs: int = 40,
                    **overrides) -> TrainConfig:
    base = dict(eta_w=1e-3, eta_conj=0.1, eta_disj=0.02, batch_size=64,
                epochs=epochs, tol=0.01, seed=seed, dual_mode="per-sample",
                optimizer=UpdateRule.ADAPTIVE_MOMENTS, logic_method=method,
                dl2_weight=0.25)
    base.update(overrides)
    return TrainConfig(**base)


def build_shortcut_task(count: int, seed: int) -> tuple[TaskData, CNFTemplate]:
    ds, template = datasets.gen_shortcut_task(count, seed)
    train, test = datasets.shortcut_samples(ds, template)
    spec = MLPSpec(SHORTCUT_WIDTHS, Head.SOFTMAX, seed)
    return TaskData(tuple(train), tuple(test), spec, "classification", "x"), template


def run_shortcut_experiment(seed: int, method: str = "dual", count: int = 500,
                            epochs: int = 40, out_dir: str | None = None,
                            **overrides) -> dict:
    """Train one arm and report accuracy plus hidden-class satisfaction rates."""
    task, template = build_shortcut_task(count, seed)
    cfg = shortcut_config(seed, method, epochs, **overrides)
    state, rows = trainer.train(task, template, cfg)

    hidden = tuple(s for s in task.test
                   if int(s.label) == datasets.SHORTCUT_HIDDEN_CLASS)
    hidden_row = trainer.evaluate(state, hidden, template, cfg.tol)
    full_row = rows[-1]
    result = {
        "seed": seed,
        "method": method,
        "accuracy": full_row.acc_or_mse,
        "sat": full_row.sat,
        "hidden_sat": hidden_row.sat,
        "hidden_notP_sat": hidden_row.lit_sat.get("notP", 0.0),
        "hidden_Q_sat": hidden_row.lit_sat.get("Q", 0.0),
    }
    if out_dir:
        config = {"task": "shortcut", "method": method, "seed": seed,
                  "count": count, "epochs": epochs}
        result["artifacts"] = asdict(write_run_artifacts(out_dir, config, rows, state, SHORTCUT_RULE))
    return result


# ---------------------------------------------------------------------------
# Shortest-distance prediction task
# ---------------------------------------------------------------------------

def graph_model_spec(n_vertices: int, seed: int) -> MLPSpec:
    return MLPSpec((n_vertices * n_vertices, 128, 128, n_vertices),
                   Head.RELU_REGRESSION, seed)


def graph_config(seed: int, constrained: bool = True, epochs: int = 30,
                 **overrides) -> TrainConfig:
    base = dict(eta_w=1e-3, eta_conj=0.1, eta_disj=0.1, batch_size=128,
                epochs=epochs, tol=1.0, seed=seed, dual_mode="per-sample",
                optimizer=UpdateRule.ADAPTIVE_MOMENTS,
                logic_method="dual" if constrained else "none",
                tol_relax=True)
    base.update(overrides)
    return TrainConfig(**base)


def build_graph_task(n_vertices: int, train_count: int, test_count: int,
                     seed: int, n_sym: int = 2, n_tri: int = 10) -> TaskData:
    insts = datasets.gen_graphs(n_vertices, train_count + test_count, seed)
    samples = datasets.graph_samples(insts, seed + 1, n_sym, n_tri)
    train, test = samples[:train_count], samples[train_count:]
    spec = graph_model_spec(n_vertices, seed)
    return TaskData(tuple(train), tuple(test), spec, "regression", "src0")


def run_shortest_path_experiment(seed: int, constrained: bool = True,
                                 n_vertices: int = 8, train_count: int = 2000,
                                 test_count: int = 500, epochs: int = 30,
                                 out_dir: str | None = None, **overrides) -> dict:
    task = build_graph_task(n_vertices, train_count, test_count, seed)
    cfg = graph_config(seed, constrained, epochs, **overrides)
    state, rows = trainer.train(task, None, cfg)
    last = rows[-1]
    result = {
        "seed": seed,
        "constrained": constrained,
        "mse": last.acc_or_mse,
        "mae": last.mae,
        "sat": last.sat,
        "lit_sat": dict(last.lit_sat),
    }
    if out_dir:
        config = {"task": "shortest-path", "constrained": constrained, "seed": seed,
                  "n_vertices": n_vertices, "train_count": train_count,
                  "test_count": test_count, "epochs": epochs}
        result["artifacts"] = asdict(write_run_artifacts(
            out_dir, config, rows, state, "# per-sample symmetry + triangle templates"))
    return result
