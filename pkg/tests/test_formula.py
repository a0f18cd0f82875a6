import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from logicloss import formula as F
from logicloss.formula import (
    And, Atom, BlowupError, CNFTemplate, CompareEq, CompareNeq, Implies, Not,
    Or, ParseError, TermExpr, UnknownSlotError, UnsatisfiableConstantError,
    compile_source, desugar, eval_bool, format_template, ground, parse,
    to_cnf, to_nnf,
)
from conftest import random_formula, ref_eval


class TestParse:
    def test_ge_canonicalized_by_sign_flip(self):
        node = parse("x.p[6] >= 0.95")
        assert node == Atom(TermExpr((("x", 6, -1.0),)), -0.95, strict=False)

    def test_softened_disjunction(self):
        node = parse("rx.p[9] <= 0.05 | x.p[6] >= 0.95")
        assert isinstance(node, Or) and len(node.children) == 2
        assert all(isinstance(c, Atom) for c in node.children)

    def test_dangling_implication_is_syntax_error(self):
        with pytest.raises(ParseError) as exc:
            parse("a.d[1] <= a.d[2] + a.d[3] ->")
        assert exc.value.line == 1
        assert exc.value.col > 1
        assert exc.value.expected

    def test_error_carries_expected_set(self):
        with pytest.raises(ParseError) as exc:
            parse("x.q[0] <= 1")
        assert {"out", "p", "d"} <= set(exc.value.expected)

    def test_implication_right_associative(self):
        node = parse("x.out[0] <= 1 -> x.out[1] <= 1 -> x.out[2] <= 1")
        assert isinstance(node, Implies)
        assert isinstance(node.rhs, Implies)

    def test_term_arithmetic_and_aliases(self):
        node = parse("2*a.d[1] - b.p[0] + 1.5 <= 3")
        assert node == Atom(TermExpr((("a", 1, 2.0), ("b", 0, -1.0))), 1.5)

    def test_leading_minus_and_signed_bound(self):
        node = parse("-a.out[0] <= -0.5")
        assert node == Atom(TermExpr((("a", 0, -1.0),)), -0.5)

    def test_strict_and_equality_operators(self):
        assert parse("x.out[0] < 1") == Atom(TermExpr((("x", 0, 1.0),)), 1.0, strict=True)
        assert isinstance(parse("x.out[0] == 1"), CompareEq)
        assert isinstance(parse("x.out[0] != 1"), CompareNeq)

    def test_determinism(self, rng):
        for _ in range(20):
            src = "0.5*x.p[1] - y.d[0] <= 2 & (x.p[0] > 0 | y.d[1] != 1)"
            assert parse(src) == parse(src)

    def test_comments_and_whitespace(self):
        src = "# header\nx.out[0] <= 1  # trailing\n"
        assert parse(src) == Atom(TermExpr((("x", 0, 1.0),)), 1.0)


class TestDesugar:
    def test_implies(self):
        p, q = parse("x.out[0] <= 1"), parse("x.out[1] <= 2")
        assert desugar(Implies(p, q)) == Or((Not(p), q))

    def test_compare_eq_expands_to_conjunction(self):
        t = TermExpr((("v", 0, 1.0),))
        out = desugar(CompareEq(t, 2.0))
        assert out == And((Atom(t, 2.0), Atom(t.negate(), -2.0)))

    def test_compare_neq_expands_to_strict_disjunction(self):
        t = TermExpr((("v", 0, 1.0),))
        out = desugar(CompareNeq(t, 2.0))
        assert out == Or((Atom(t, 2.0, strict=True), Atom(t.negate(), -2.0, strict=True)))


class TestNNF:
    def test_de_morgan(self):
        a, b = parse("x.out[0] <= 1"), parse("x.out[1] <= 2")
        out = to_nnf(desugar(Not(And((a, b)))))
        assert isinstance(out, Or)

    def test_negated_atom_gets_margin(self):
        a = parse("v.out[0] <= 3")
        out = to_nnf(Not(a), margin=0.01)
        # not(v <= 3) is v > 3, encoded as -v <= -3 - 0.01
        assert out == Atom(TermExpr((("v", 0, -1.0),)), -3.01, margined=True)

    def test_double_negation(self):
        a = parse("x.out[0] <= 1")
        assert to_nnf(Not(Not(a))) == a

    def test_idempotent(self, rng):
        for _ in range(100):
            f = to_nnf(desugar(random_formula(rng)))
            assert to_nnf(f) == f


class TestCNF:
    def test_distributes_or_over_and(self):
        a, b, c = (parse(f"x.out[{i}] <= {i}") for i in range(3))
        template = to_cnf(Or((a, And((b, c)))))
        assert template.n_clauses == 2
        assert all(len(cl) == 2 for cl in template.clauses)

    def test_fixpoint_on_cnf_input(self):
        src = "(x.out[0] <= 1 | x.out[1] <= 2) & (x.out[2] <= 3)"
        t1 = compile_source(src)
        t2 = to_cnf(to_nnf(desugar(parse(format_template(t1)))))
        assert t1.clauses == t2.clauses

    def test_blowup_cap(self):
        parts = " & ".join(f"(x.out[{2*i}] <= 0 | x.out[{2*i+1}] <= 0)" for i in range(8))
        node = to_nnf(desugar(Not(parse(parts))))  # negation -> DNF (2^8 clauses after distribution)
        with pytest.raises(BlowupError):
            to_cnf(node, clause_cap=100)

    def test_constant_true_literal_deletes_clause(self):
        template = compile_source("0 <= 1 & x.out[0] <= 2")
        assert template.n_clauses == 1

    def test_constant_false_literal_removed(self):
        template = compile_source("1 <= 0 | x.out[0] <= 2")
        assert template.clauses == (  # only the live literal remains
            (Atom(TermExpr((("x", 0, 1.0),)), 2.0),),)

    def test_unsatisfiable_constant(self):
        with pytest.raises(UnsatisfiableConstantError):
            compile_source("1 <= 0")

    def test_group_map_modes(self):
        src = "(x.out[0] <= 1) & (x.out[1] <= 2) & (x.out[2] <= 3)"
        per_clause = compile_source(src)
        assert per_clause.group_map == (0, 1, 2) and per_clause.n_groups == 3
        single = compile_source(src, group_mode="single")
        assert single.group_map == (0, 0, 0) and single.n_groups == 1

    def test_hwf_style_equality_expansion(self):
        # (s == 2) | (t == 1) distributes into four two-literal clauses
        template = compile_source("(x.p[0] + y.p[0] == 2) | (x.p[1] + y.p[1] == 1)")
        assert template.n_clauses == 4
        assert all(len(cl) == 2 for cl in template.clauses)


class TestEvalBool:
    def test_tol_tightens(self):
        template = compile_source("v.out[0] <= 1")
        assert eval_bool(template, np.array([0.99]), tol=0.01)
        assert not eval_bool(template, np.array([0.995]), tol=0.01)

    def test_empty_conjunction_vacuously_true(self):
        template = compile_source("0 <= 1")
        assert template.n_clauses == 0
        assert eval_bool(template, np.array([]), tol=0.0)

    def test_relax_mode(self):
        template = compile_source("v.out[0] <= 1")
        assert eval_bool(template, np.array([1.5]), tol=1.0, relax=True)
        assert not eval_bool(template, np.array([2.5]), tol=1.0, relax=True)

    def test_strict_only_scope(self):
        template = compile_source("v.out[0] <= 1 & v.out[1] < 1")
        # margined atom keeps the tolerance, the plain one drops it
        state = np.array([0.995, 0.97])
        assert eval_bool(template, state, tol=0.01, strict_only=True)
        assert not eval_bool(template, state, tol=0.01)

    def test_arity_mismatch(self):
        template = compile_source("v.out[0] <= 1")
        with pytest.raises(F.ArityMismatchError):
            eval_bool(template, np.array([1.0, 2.0]))


class TestGround:
    def test_linear_sum(self):
        template = compile_source("x.out[0] + x.out[1] <= 2")
        g = ground(template, {"x": np.array([0.3, 0.4])})
        assert g.values == pytest.approx([0.7])

    def test_sign_convention(self):
        template = compile_source("x.p[6] >= 0.95")
        g = ground(template, {"x": np.array([0, 0, 0, 0, 0, 0, 0.97])})
        assert g.values == pytest.approx([-0.97])
        assert eval_bool(template, g.values)

    def test_triangle_term(self):
        # d[1] - d[2] - 2 <= 0 at (5, 3): slack is exactly zero
        template = compile_source("a.d[1] - a.d[2] - 2 <= 0")
        g = ground(template, {"a": np.array([0.0, 5.0, 3.0])})
        atom = template.clauses[0][0]
        assert g.values[0] - atom.bound == pytest.approx(0.0)
        assert eval_bool(template, g.values, tol=0.0)

    def test_unknown_slot_and_index(self):
        template = compile_source("x.out[5] <= 1")
        with pytest.raises(UnknownSlotError):
            ground(template, {"y": np.zeros(6)})
        with pytest.raises(F.IndexOutOfRangeError):
            ground(template, {"x": np.zeros(3)})

    def test_gradient_rows_match_term_refs(self):
        template = compile_source("2*x.out[0] - y.out[1] <= 1")
        g = ground(template, {"x": np.ones(1), "y": np.ones(2)})
        assert g.rows[0] == (("x", 0, 2.0), ("y", 1, -1.0))


class TestRoundTrip:
    def test_cnf_preserves_boolean_semantics(self):
        rng = np.random.default_rng(99)
        mismatches = 0
        for _ in range(500):
            f = random_formula(rng, with_strict=False)
            # strictness margin disabled so CNF and reference semantics agree
            try:
                template = to_cnf(to_nnf(desugar(f), margin=0.0))
            except UnsatisfiableConstantError:
                continue
            for _ in range(50):
                bindings = {"x": rng.uniform(-4, 4, 4)}
                got = eval_bool(template, ground(template, bindings).values, tol=0.0)
                if got != ref_eval(f, bindings):
                    mismatches += 1
        assert mismatches == 0

    def test_constant_true_conjunct_is_noop(self):
        rng = np.random.default_rng(5)
        true_atom = Atom(TermExpr(()), 1.0)  # 0 <= 1
        for _ in range(50):
            g = random_formula(rng, with_strict=False)
            t_with = to_cnf(to_nnf(desugar(And((true_atom, g))), margin=0.0))
            t_alone = to_cnf(to_nnf(desugar(g), margin=0.0))
            for _ in range(20):
                bindings = {"x": rng.uniform(-4, 4, 4)}
                a = eval_bool(t_with, ground(t_with, bindings).values)
                b = eval_bool(t_alone, ground(t_alone, bindings).values)
                assert a == b

    def test_pretty_print_reparses_to_same_clauses(self, rng):
        for _ in range(100):
            f = random_formula(rng)
            try:
                t1 = to_cnf(to_nnf(desugar(f)))
            except UnsatisfiableConstantError:
                continue
            t2 = compile_source(format_template(t1))
            assert len(t1.clauses) == len(t2.clauses)
            for c1, c2 in zip(t1.clauses, t2.clauses):
                # compare with constants folded into the bound
                norm1 = [(a.term.refs, a.bound - a.term.offset) for a in c1]
                norm2 = [(a.term.refs, a.bound - a.term.offset) for a in c2]
                assert norm1 == norm2


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_nnf_idempotence_property(seed):
    rng = np.random.default_rng(seed)
    f = to_nnf(desugar(random_formula(rng)))
    assert to_nnf(f) == f
