"""Command-line interface.

Subcommands: compile, gen-data, train, eval, grad-check, bench-encoders.
Exit codes: 0 success, 2 configuration errors, 3 numeric failures.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .. import encoder, model, trainer, variational
from ..encoder import CostMatrix, DualState
from ..formula import ConstraintError, compile_source, format_template, ground
from ..model import Head, MLPSpec, UpdateRule
from ..trainer import TrainConfig
from . import bench, datasets, drivers


class ConfigError(Exception):
    pass


class NumericFailure(Exception):
    pass


def _parse_state(text: str) -> dict[str, np.ndarray]:
    """Parse 'v=2.5;x=0.1,0.9' into slot vectors."""
    bindings: dict[str, np.ndarray] = {}
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ConfigError(f"bad state assignment {part!r}, expected name=value[,value...]")
        name, vals = part.split("=", 1)
        try:
            bindings[name.strip()] = np.array([float(v) for v in vals.split(",")])
        except ValueError as exc:
            raise ConfigError(f"bad state values in {part!r}: {exc}") from None
    if not bindings:
        raise ConfigError("empty state")
    return bindings


def cmd_compile(args) -> int:
    with open(args.constraint, encoding="utf-8") as fh:
        source = fh.read()
    template = compile_source(source, margin=args.margin)
    print(f"clauses: {template.n_clauses}  atoms: {template.n_atoms}  "
          f"groups: {template.n_groups}  slots: {sorted(template.slot_names)}")
    print(format_template(template))
    if args.state:
        bindings = _parse_state(args.state)
        g = ground(template, bindings)
        m = CostMatrix.from_grounding(template, g)
        cf = encoder.closed_form_cost(m)
        print(f"closed-form cost: {cf.value:.9g}")
        print(f"argmax clauses: {sorted(cf.argmax_clauses)}")
        print(f"argmin literals: {[sorted(s) for s in cf.argmin_literals]}")
    return 0


def cmd_gen_data(args) -> int:
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    if args.task == "graphs":
        insts = datasets.gen_graphs(args.n_vertices, args.count, args.seed)
        datasets.write_graph_dataset(insts, args.out)
        print(f"wrote {len(insts)} graph instances to {args.out}")
    else:
        ds, _ = datasets.gen_shortcut_task(args.count, args.seed)
        datasets.write_shortcut_dataset(ds, args.out)
        print(f"wrote {ds.points.shape[0]} shortcut points to {args.out}")
    return 0


_TRAIN_KEYS = {"eta_w", "eta_conj", "eta_disj", "gamma", "batch_size", "epochs",
               "tol", "margin", "dual_mode", "optimizer", "variance_floor",
               "logic_method", "dl2_weight", "tol_relax", "seed"}


def load_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict) or "task" not in cfg:
        raise ConfigError("config must be a JSON object with a 'task' key")
    if cfg["task"] not in ("shortcut", "shortest-path"):
        raise ConfigError(f"unknown task {cfg['task']!r}")
    unknown = set(cfg.get("train", {})) - _TRAIN_KEYS
    if unknown:
        raise ConfigError(f"unknown train keys: {sorted(unknown)}")
    return cfg


def _train_config(cfg: dict, defaults: TrainConfig) -> TrainConfig:
    t = dict(cfg.get("train", {}))
    mapping = {"gamma": "schedule_gamma", "margin": "margin_eps"}
    kwargs = {}
    for key, val in t.items():
        name = mapping.get(key, key)
        if name == "optimizer":
            val = UpdateRule(val)
        kwargs[name] = val
    try:
        from dataclasses import replace
        return replace(defaults, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad train config: {exc}") from None


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.get("train", {}).get("seed", cfg.get("model", {}).get("seed", 0))
    data = cfg.get("data", {})
    out_dir = cfg.get("out_dir", args.out_dir or "runs")
    if cfg["task"] == "shortcut":
        defaults = drivers.shortcut_config(seed, cfg.get("method", "dual"))
        tc = _train_config(cfg, defaults)
        result = drivers.run_shortcut_experiment(
            seed=tc.seed, method=tc.logic_method, count=data.get("count", 500),
            epochs=tc.epochs, out_dir=out_dir,
            **{k: getattr(tc, k) for k in ("eta_w", "eta_conj", "eta_disj", "batch_size",
                                           "tol", "dual_mode", "dl2_weight")})
    else:
        constrained = cfg.get("method", "dual") != "none"
        defaults = drivers.graph_config(seed, constrained)
        tc = _train_config(cfg, defaults)
        result = drivers.run_shortest_path_experiment(
            seed=tc.seed, constrained=constrained,
            n_vertices=data.get("n_vertices", 8),
            train_count=data.get("train_count", 2000),
            test_count=data.get("test_count", 500),
            epochs=tc.epochs, out_dir=out_dir,
            **{k: getattr(tc, k) for k in ("eta_w", "eta_conj", "eta_disj", "batch_size", "tol")})
    print(json.dumps({k: v for k, v in result.items()}, indent=2, sort_keys=True, default=str))
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    params = model.load_checkpoint(args.checkpoint)
    data = cfg.get("data", {})
    seed = cfg.get("train", {}).get("seed", 0)
    if cfg["task"] == "shortcut":
        task, template = drivers.build_shortcut_task(data.get("count", 500), seed)
        tol, relax = 0.01, False
    else:
        task = drivers.build_graph_task(data.get("n_vertices", 8),
                                        data.get("train_count", 2000),
                                        data.get("test_count", 500), seed)
        template, tol, relax = None, 1.0, True
    state = trainer.TrainState(params, variational.DeltaState.ones(1), {})
    row = trainer.evaluate(state, task.test, template, tol, relax=relax,
                           task_type=task.task_type, primary_slot=task.primary_slot)
    print(json.dumps({
        "task_loss": row.task_loss, "acc_or_mse": row.acc_or_mse, "mae": row.mae,
        "sat": row.sat, "lit_sat": row.lit_sat,
    }, indent=2, sort_keys=True))
    return 0


def cmd_grad_check(args) -> int:
    from . import gradcheck
    report = gradcheck.run_all(points=args.points, seed=args.seed)
    for name, worst, limit in report:
        status = "ok" if worst <= limit else "FAIL"
        print(f"{name}: worst rel err {worst:.3e} (limit {limit:.1e}) {status}")
    if any(worst > limit for _, worst, limit in report):
        raise NumericFailure("gradient check failed")
    return 0


def cmd_bench_encoders(args) -> int:
    if args.example == "appendix-c-1":
        r = bench.run_example1(steps=args.steps)
        print("minimize-only disjunction (v^2 <= -1) | (3v >= 2), v0=0, duals (0.5, 0.5)")
        print(f"dual encoder:  final v {r.dual_v:.6f}, closed-form cost {r.dual_costs[-1]:.3e}, "
              f"best {r.dual_costs.min():.3e}")
        print(f"fuzzy min/max: gradient at v0 = {r.fuzzy_grad0:.3e}, "
              f"iterate range {float(np.ptp(r.fuzzy_v)):.3e}")
    else:
        r = bench.run_example2(steps=args.steps)
        print("disjunction of equalities (v==1) | (v==2) | (v==3), v0=1.5")
        print(f"DL2 product gradient magnitude: {abs(r.dl2_grad_15):.3e} at v=1.5, "
              f"{abs(r.dl2_grad_25):.3e} at v=2.5")
        print(f"dual encoder: best closed-form cost {r.dual_best_cost:.3e}, "
              f"final v {r.dual_final_v:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="logicloss",
                                 description="constraint compilation and logical training")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="parse a constraint file and print its CNF")
    p.add_argument("--constraint", required=True)
    p.add_argument("--state", help="slot bindings, e.g. 'v=2.5' or 'x=0.1,0.9;rx=0.2,0.8'")
    p.add_argument("--margin", type=float, default=0.01)
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("gen-data", help="emit a dataset file (line-delimited JSON)")
    p.add_argument("--task", choices=("graphs", "shortcut"), required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-vertices", type=int, default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run an experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics from a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grad-check", help="run all finite-difference suites")
    p.add_argument("--points", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("bench-encoders", help="encoder comparisons on scalar problems")
    p.add_argument("--example", choices=("appendix-c-1", "appendix-c-2"), required=True)
    p.add_argument("--steps", type=int, default=2000)
    p.set_defaults(func=cmd_bench_encoders)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ConstraintError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except trainer.NonFiniteLossError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
