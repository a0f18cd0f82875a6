import json
import os
import subprocess
import sys

import numpy as np
import pytest

from logicloss import encoder, model, trainer
from logicloss.encoder import CostMatrix
from logicloss.formula import compile_source, eval_bool, ground
from logicloss.harness import bench, datasets, drivers, fixtures
from logicloss.harness.cli import main as cli_main


def bellman_ford(adjacency, source):
    """Independent oracle for shortest distances."""
    n = adjacency.shape[0]
    dist = np.full(n, np.inf)
    dist[source] = 0.0
    for _ in range(n - 1):
        for u in range(n):
            for v in range(n):
                w = adjacency[u, v]
                if w > 0 and dist[u] + w < dist[v]:
                    dist[v] = dist[u] + w
    return dist


class TestGenGraphs:
    def test_labels_match_bellman_ford(self):
        insts = datasets.gen_graphs(8, 200, seed=3)
        for inst in insts:
            assert np.array_equal(inst.labels, bellman_ford(inst.adjacency, inst.source))

    def test_two_vertex_graph(self):
        insts = datasets.gen_graphs(2, 10, seed=0)
        for inst in insts:
            w = inst.adjacency[0, 1]
            assert w >= 1
            assert inst.labels == pytest.approx([0.0, w])

    def test_deterministic(self):
        a = datasets.gen_graphs(6, 5, seed=11)
        b = datasets.gen_graphs(6, 5, seed=11)
        for x, y in zip(a, b):
            assert np.array_equal(x.adjacency, y.adjacency)

    def test_connected_with_integer_weights(self):
        for inst in datasets.gen_graphs(8, 50, seed=4):
            assert np.all(np.isfinite(inst.labels))
            edges = inst.adjacency[inst.adjacency > 0]
            assert set(np.unique(edges)) <= set(range(1, 10))
            assert np.array_equal(inst.adjacency, inst.adjacency.T)


class TestShortestPathConstraints:
    def test_symmetric_model_zero_symmetry_cost(self, rng):
        template, plan = datasets.shortest_path_constraints(6, rng)
        # bindings from the true distance matrix: exactly symmetric
        inst = datasets.gen_graphs(6, 1, seed=5)[0]
        dist = {s: datasets.dijkstra(inst.adjacency, src) for s, src in plan}

        def out_for(slot, src):
            perm = datasets._swap_perm(6, src)
            return dist[slot][perm]

        bindings = {slot: out_for(slot, src) for slot, src in plan}
        g = ground(template, bindings)
        m = CostMatrix.from_grounding(template, g)
        offsets = template.atom_offsets()
        for name, positions in template.literal_groups().items():
            for ci, li in positions:
                if name == "sym":
                    assert m.costs[ci][li] == pytest.approx(0.0, abs=1e-12)

    def test_true_labels_satisfy_triangle(self, rng):
        template, plan = datasets.shortest_path_constraints(7, rng, n_sym=2, n_tri=10)
        inst = datasets.gen_graphs(7, 1, seed=6)[0]
        dist = {s: datasets.dijkstra(inst.adjacency, src) for s, src in plan}
        bindings = {slot: dist[slot][datasets._swap_perm(7, src)] for slot, src in plan}
        g = ground(template, bindings)
        assert eval_bool(template, g.values, tol=0.0)

    def test_label_noise_breaks_properties(self, rng):
        template, plan = datasets.shortest_path_constraints(7, rng, n_sym=2, n_tri=10)
        inst = datasets.gen_graphs(7, 1, seed=7)[0]
        dist = {s: datasets.dijkstra(inst.adjacency, src) for s, src in plan}
        noisy = {slot: dist[slot][datasets._swap_perm(7, src)] + rng.uniform(1, 3, 7)
                 for slot, src in plan}
        g = ground(template, noisy)
        assert not eval_bool(template, g.values, tol=0.0)

    def test_forward_pass_count(self, rng):
        template, plan = datasets.shortest_path_constraints(8, rng, n_sym=2, n_tri=10)
        # one pass for the default source plus one per distinct extra source
        extra = {src for _, src in plan if src != 0}
        assert len(plan) == 1 + len(extra)


class TestShortcutTask:
    def test_compiled_rule_is_one_clause_two_literals(self):
        _, template = datasets.gen_shortcut_task(100, seed=0)
        assert template.n_clauses == 1
        assert len(template.clauses[0]) == 2
        assert dict(template.literal_names) == {(0, 0): "notP", (0, 1): "Q"}

    def test_reflection_exact(self):
        ds, _ = datasets.gen_shortcut_task(120, seed=1)
        assert np.array_equal(ds.reflected, -ds.points)

    def test_hidden_labels_absent_from_train(self):
        ds, template = datasets.gen_shortcut_task(120, seed=2)
        train, test = datasets.shortcut_samples(ds, template)
        assert all(s.label != ds.hidden_class for s in train if s.label is not None)
        assert any(s.label == ds.hidden_class for s in test)

    def test_clusters_separable_by_centroid_oracle(self):
        ds, _ = datasets.gen_shortcut_task(500, seed=3)
        assert datasets.nearest_centroid_accuracy(ds) >= 0.99

    def test_ideal_labels_satisfy_via_Q(self):
        # perfectly confident predictions on a hidden-class point satisfy both P and Q
        _, template = datasets.gen_shortcut_task(100, seed=4)
        probs_x = np.array([0.0, 0.0, 0.0, 1.0])  # class 3
        probs_rx = np.array([0.0, 1.0, 0.0, 0.0])  # reflected point is class 1
        g = ground(template, {"x": probs_x, "rx": probs_rx})
        flags = [g.values[k] <= template.clauses[0][k].bound for k in range(2)]
        assert flags == [False, True]  # notP fails, Q holds
        assert eval_bool(template, g.values, tol=0.0)

    def test_dataset_round_trip(self, tmp_path):
        ds, _ = datasets.gen_shortcut_task(100, seed=5)
        p = tmp_path / "shortcut.jsonl"
        datasets.write_shortcut_dataset(ds, str(p))
        back = datasets.read_shortcut_dataset(str(p))
        assert np.allclose(back.points, ds.points)
        assert np.array_equal(back.labels, ds.labels)


class TestFixtures:
    def test_superclass_template_shape(self):
        fx = fixtures.fixture_constraints()["superclass_sums"]
        assert fx.template.n_clauses == 2
        assert all(len(c) == 2 for c in fx.template.clauses)
        # every literal is a sum over its superclass members
        for clause in fx.template.clauses:
            for atom in clause:
                assert len(atom.term.refs) == 2

    def test_superclass_grounding_semantics(self):
        fx = fixtures.fixture_constraints()["superclass_sums"]
        confident = np.array([0.999, 0.001, 0.0, 0.0])
        g = ground(fx.template, {"x": confident})
        assert eval_bool(fx.template, g.values, tol=0.0)
        smeared = np.array([0.5, 0.0, 0.5, 0.0])
        g = ground(fx.template, {"x": smeared})
        assert not eval_bool(fx.template, g.values, tol=0.0)

    def test_hwf_template_counts(self):
        fx = fixtures.fixture_constraints()["hwf_adjacency"]
        # k=4 symbols: 3 adjacent pairs, each (eq | eq) distributing to 4 clauses
        assert fx.template.n_clauses == 12
        assert all(len(c) == 2 for c in fx.template.clauses)

    def test_hwf_valid_sequence_satisfies(self):
        fx = fixtures.fixture_constraints()["hwf_adjacency"]
        digit = np.zeros(14)
        digit[3] = 1.0
        op = np.zeros(14)
        op[11] = 1.0
        # digit op digit digit is grammatical: "3 + 9 9" shape
        bindings = {"s1": digit, "s2": op, "s3": digit, "s4": digit}
        g = ground(fx.template, bindings)
        assert eval_bool(fx.template, g.values, tol=0.0)
        bad = {"s1": digit, "s2": op, "s3": op, "s4": digit}  # adjacent operators
        g = ground(fx.template, bad)
        assert not eval_bool(fx.template, g.values, tol=0.0)

    def test_fixtures_round_trip_through_printer(self):
        from logicloss.formula import format_template
        for fx in fixtures.fixture_constraints().values():
            re_template = compile_source(format_template(fx.template))
            assert len(re_template.clauses) == len(fx.template.clauses)
            for c1, c2 in zip(fx.template.clauses, re_template.clauses):
                n1 = [(a.term.refs, a.bound - a.term.offset) for a in c1]
                n2 = [(a.term.refs, a.bound - a.term.offset) for a in c2]
                assert n1 == n2


class TestBench:
    def test_example1_escape_and_stall(self):
        r = bench.run_example1(steps=2000)
        assert r.dual_costs.min() < 1e-6
        assert r.fuzzy_grad0 == 0.0

    def test_example2_dl2_flat_dual_escapes(self):
        r = bench.run_example2(steps=2000)
        assert abs(r.dl2_grad_15) < 1e-9
        assert abs(r.dl2_grad_25) < 1e-9
        assert r.dual_best_cost < 1e-6

    def test_example2_closed_form_is_distance(self):
        assert bench.ex2_closed_form(2.5) == pytest.approx(0.5)
        assert bench.ex2_closed_form(1.0) == pytest.approx(0.0)


class TestCli:
    def test_compile_prints_closed_form(self, tmp_path, capsys):
        rule = tmp_path / "rule.lc"
        rule.write_text("v.out[0] == 1 | v.out[0] == 2 | v.out[0] == 3\n")
        rc = cli_main(["compile", "--constraint", str(rule), "--state", "v=2.5"])
        out = capsys.readouterr().out
        assert rc == 0
        assert "closed-form cost: 0.5" in out

    def test_gen_data_and_files(self, tmp_path, capsys):
        out = tmp_path / "graphs.jsonl"
        rc = cli_main(["gen-data", "--task", "graphs", "--count", "5",
                       "--seed", "1", "--n-vertices", "5", "--out", str(out)])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 5
        doc = json.loads(lines[0])
        assert set(doc) == {"n", "adjacency", "source", "labels"}

    def test_grad_check_exits_zero(self, capsys):
        rc = cli_main(["grad-check", "--points", "10"])
        assert rc == 0

    def test_bench_encoders_reports_flat_gradient(self, capsys):
        rc = cli_main(["bench-encoders", "--example", "appendix-c-2", "--steps", "500"])
        out = capsys.readouterr().out
        assert rc == 0
        assert "0.000e+00" in out

    def test_config_error_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{\"task\": \"unknown\"}")
        rc = cli_main(["train", "--config", str(bad)])
        assert rc == 2

    def test_unknown_train_key_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"task": "shortcut", "train": {"bogus": 1}}))
        rc = cli_main(["train", "--config", str(bad)])
        assert rc == 2

    def test_missing_constraint_file_exit_2(self, capsys):
        rc = cli_main(["compile", "--constraint", "/nonexistent.lc"])
        assert rc == 2

    def test_train_and_eval_round_trip(self, tmp_path, capsys):
        cfg = {"task": "shortcut", "method": "none",
               "data": {"count": 100},
               "train": {"epochs": 1, "seed": 0, "batch_size": 32},
               "out_dir": str(tmp_path / "runs")}
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        rc = cli_main(["train", "--config", str(cfg_path)])
        assert rc == 0
        out = json.loads(capsys.readouterr().out)
        ck = out["artifacts"]["checkpoint_path"]
        assert os.path.exists(ck)
        assert os.path.exists(out["artifacts"]["metrics_path"])
        assert os.path.exists(out["artifacts"]["manifest_path"])
        rc = cli_main(["eval", "--config", str(cfg_path), "--checkpoint", ck])
        assert rc == 0
        metrics = json.loads(capsys.readouterr().out)
        assert 0.0 <= metrics["sat"] <= 1.0


class TestRunArtifacts:
    def test_run_id_deterministic(self):
        a = drivers.run_id_for({"task": "shortcut", "seed": 0})
        b = drivers.run_id_for({"task": "shortcut", "seed": 0})
        assert a == b and len(a) == 12

    def test_artifact_files_written(self, tmp_path, rng):
        from logicloss.variational import DeltaState
        spec = model.MLPSpec((2, 4, 2), seed=0)
        state = trainer.TrainState(model.init(spec), DeltaState.ones(1), {})
        rows = [trainer.MetricsRow(0, 0.0, 1.0, 0.5, 0.0, 1.0, {}, 0.0, 1.0, 0.0)]
        arts = drivers.write_run_artifacts(str(tmp_path), {"seed": 0}, rows, state, "0 <= 1")
        for path in (arts.manifest_path, arts.metrics_path,
                     arts.checkpoint_path, arts.constraint_path):
            assert os.path.exists(path)
