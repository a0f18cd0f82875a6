import numpy as np
import pytest

from logicloss import formula as F


def random_term(rng, slots=("x",), arity=4, max_refs=2):
    n = int(rng.integers(1, max_refs + 1))
    refs = tuple((str(rng.choice(slots)), int(rng.integers(arity)),
                  float(rng.choice([-1.0, 1.0]) * rng.integers(1, 3)))
                 for _ in range(n))
    return F.TermExpr(refs, float(rng.integers(-2, 3)))


def random_formula(rng, n_atoms=5, depth=3, slots=("x",), arity=4, with_strict=True):
    """Random AST over at most ``n_atoms`` leaf comparisons."""
    cmps = ["<=", ">="] + (["<", ">", "==", "!="] if with_strict else ["=="])

    def leaf():
        term = random_term(rng, slots, arity)
        bound = float(rng.uniform(-3, 3))
        kind = str(rng.choice(cmps))
        if kind == "<=":
            return F.Atom(term, bound)
        if kind == "<":
            return F.Atom(term, bound, strict=True)
        if kind == ">=":
            return F.Atom(term.negate(), -bound)
        if kind == ">":
            return F.Atom(term.negate(), -bound, strict=True)
        if kind == "==":
            return F.CompareEq(term, bound)
        return F.CompareNeq(term, bound)

    def build(d):
        if d == 0 or rng.random() < 0.3:
            return leaf()
        kind = rng.integers(4)
        if kind == 0:
            return F.Not(build(d - 1))
        if kind == 1:
            return F.Implies(build(d - 1), build(d - 1))
        children = tuple(build(d - 1) for _ in range(int(rng.integers(2, 4))))
        return F.And(children) if kind == 2 else F.Or(children)

    return build(depth)


def ref_eval(node, bindings):
    """Reference boolean semantics, independent of the CNF pipeline."""
    if isinstance(node, F.Atom):
        v = node.term.offset + sum(c * bindings[s][i] for s, i, c in node.term.refs)
        return v < node.bound if node.strict else v <= node.bound
    if isinstance(node, F.Not):
        return not ref_eval(node.child, bindings)
    if isinstance(node, F.And):
        return all(ref_eval(c, bindings) for c in node.children)
    if isinstance(node, F.Or):
        return any(ref_eval(c, bindings) for c in node.children)
    if isinstance(node, F.Implies):
        return (not ref_eval(node.lhs, bindings)) or ref_eval(node.rhs, bindings)
    if isinstance(node, F.CompareEq):
        v = node.term.offset + sum(c * bindings[s][i] for s, i, c in node.term.refs)
        return v == node.bound
    if isinstance(node, F.CompareNeq):
        v = node.term.offset + sum(c * bindings[s][i] for s, i, c in node.term.refs)
        return v != node.bound
    raise TypeError(node)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
