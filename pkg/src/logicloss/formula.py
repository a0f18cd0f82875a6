"""Constraint DSL: parsing, normalization to CNF, grounding.

Constraints are written over named input slots, e.g. ``rx.p[9] <= 0.05 |
x.p[6] >= 0.95``.  Comparisons are canonicalized to atoms of the form
``term <= bound`` (a ``>=`` flips the sign of every coefficient and of the
bound), equalities expand to conjunctions, and the whole formula is
normalized to a conjunction of disjunctive clauses.

Grammar (see README for the full EBNF):

    formula := impld ; impld := disj ("->" disj)*   (right-assoc)
    disj    := conj ("|" conj)* ; conj := lit ("&" lit)*
    lit     := "!" lit | "(" formula ")" | atom
    atom    := term cmp term ; cmp := "<=" | "<" | ">=" | ">" | "==" | "!="
    term    := ["-"] addend (("+"|"-") addend)*
    addend  := [number "*"] slotref ; slotref := ident "." ("out"|"p"|"d") "[" int "]" | number

``p`` and ``d`` are readability aliases of ``out``.  A bare number addend is
a constant; comparisons between constants fold during CNF conversion.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Union

import numpy as np

DEFAULT_MARGIN = 0.01
DEFAULT_CLAUSE_CAP = 4096


class ConstraintError(Exception):
    """Base class for constraint-pipeline failures."""


class ParseError(ConstraintError):
    def __init__(self, message: str, line: int, col: int, expected: tuple[str, ...] = ()):
        detail = f"{message} at line {line}, column {col}"
        if expected:
            detail += " (expected one of: " + ", ".join(sorted(expected)) + ")"
        super().__init__(detail)
        self.line = line
        self.col = col
        self.expected = frozenset(expected)


class UnknownSlotError(ConstraintError):
    pass


class IndexOutOfRangeError(ConstraintError):
    pass


class ArityMismatchError(ConstraintError):
    pass


class BlowupError(ConstraintError):
    pass


class UnsatisfiableConstantError(ConstraintError):
    pass


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TermExpr:
    """Linear combination of slot outputs plus a constant offset."""

    refs: tuple[tuple[str, int, float], ...]
    offset: float = 0.0

    def negate(self) -> "TermExpr":
        return TermExpr(tuple((s, i, -c) for s, i, c in self.refs), -self.offset)

    def minus(self, other: "TermExpr") -> "TermExpr":
        neg = other.negate()
        return TermExpr(self.refs + neg.refs, self.offset + neg.offset)

    @property
    def is_constant(self) -> bool:
        return not self.refs


@dataclass(frozen=True)
class Atom:
    """Canonical comparison ``term <= bound``.

    ``strict`` records a source ``<``; ``margined`` marks a formerly strict
    atom whose bound already absorbed the strictness margin.
    """

    term: TermExpr
    bound: float
    strict: bool = False
    margined: bool = False


@dataclass(frozen=True)
class Not:
    child: "FormulaNode"


@dataclass(frozen=True)
class And:
    children: tuple["FormulaNode", ...]


@dataclass(frozen=True)
class Or:
    children: tuple["FormulaNode", ...]


@dataclass(frozen=True)
class Implies:
    lhs: "FormulaNode"
    rhs: "FormulaNode"


@dataclass(frozen=True)
class CompareEq:
    term: TermExpr
    bound: float


@dataclass(frozen=True)
class CompareNeq:
    term: TermExpr
    bound: float


FormulaNode = Union[Atom, Not, And, Or, Implies, CompareEq, CompareNeq]


# ---------------------------------------------------------------------------
# Lexer / parser
# ---------------------------------------------------------------------------

_TWO_CHAR = ("->", "<=", ">=", "==", "!=")
_ONE_CHAR = "|&!()<>+-*.[]"
_NUMBER_RE = re.compile(r"\d+(\.\d*)?([eE][+-]?\d+)?|\.\d+([eE][+-]?\d+)?")
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


@dataclass(frozen=True)
class _Token:
    kind: str  # 'num', 'ident', 'op', 'eof'
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, col = 1, 1
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":  # comment to end of line
            while i < n and text[i] != "\n":
                i += 1
            continue
        two = text[i : i + 2]
        if two in _TWO_CHAR:
            tokens.append(_Token("op", two, line, col))
            i += 2
            col += 2
            continue
        m = _NUMBER_RE.match(text, i)
        if m:
            tokens.append(_Token("num", m.group(0), line, col))
            col += m.end() - i
            i = m.end()
            continue
        m = _IDENT_RE.match(text, i)
        if m:
            tokens.append(_Token("ident", m.group(0), line, col))
            col += m.end() - i
            i = m.end()
            continue
        if ch in _ONE_CHAR:
            tokens.append(_Token("op", ch, line, col))
            i += 1
            col += 1
            continue
        raise ParseError(f"unexpected character {ch!r}", line, col)
    tokens.append(_Token("eof", "", line, col))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, text: str) -> _Token:
        tok = self.peek()
        if tok.kind == "op" and tok.text == text:
            return self.advance()
        raise ParseError(f"unexpected {tok.text or 'end of input'!r}", tok.line, tok.col, (text,))

    def fail(self, expected: tuple[str, ...]):
        tok = self.peek()
        raise ParseError(f"unexpected {tok.text or 'end of input'!r}", tok.line, tok.col, expected)

    # formula := impld
    def formula(self) -> FormulaNode:
        parts = [self.disj()]
        while self.peek().kind == "op" and self.peek().text == "->":
            self.advance()
            parts.append(self.disj())
        node = parts[-1]
        for lhs in reversed(parts[:-1]):  # right-associative
            node = Implies(lhs, node)
        return node

    def disj(self) -> FormulaNode:
        parts = [self.conj()]
        while self.peek().kind == "op" and self.peek().text == "|":
            self.advance()
            parts.append(self.conj())
        return parts[0] if len(parts) == 1 else Or(tuple(parts))

    def conj(self) -> FormulaNode:
        parts = [self.lit()]
        while self.peek().kind == "op" and self.peek().text == "&":
            self.advance()
            parts.append(self.lit())
        return parts[0] if len(parts) == 1 else And(tuple(parts))

    def lit(self) -> FormulaNode:
        tok = self.peek()
        if tok.kind == "op" and tok.text == "!":
            self.advance()
            return Not(self.lit())
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            inner = self.formula()
            self.expect(")")
            return inner
        if tok.kind in ("ident", "num") or (tok.kind == "op" and tok.text == "-"):
            return self.atom()
        self.fail(("!", "(", "identifier", "number"))

    def atom(self) -> FormulaNode:
        lhs = self.term()
        tok = self.peek()
        if not (tok.kind == "op" and tok.text in ("<=", "<", ">=", ">", "==", "!=")):
            self.fail(("<=", "<", ">=", ">", "==", "!="))
        cmp = self.advance().text
        rhs = self.term()
        diff = lhs.minus(rhs)
        refs, bound = diff.refs, -diff.offset
        if cmp in ("<=", "<"):
            return Atom(TermExpr(refs), bound, strict=(cmp == "<"))
        if cmp in (">=", ">"):
            neg = TermExpr(refs).negate()
            return Atom(neg, -bound, strict=(cmp == ">"))
        if cmp == "==":
            return CompareEq(TermExpr(refs), bound)
        return CompareNeq(TermExpr(refs), bound)

    def term(self) -> TermExpr:
        sign = 1.0
        if self.peek().kind == "op" and self.peek().text == "-":
            self.advance()
            sign = -1.0
        expr = self.addend(sign)
        while self.peek().kind == "op" and self.peek().text in ("+", "-"):
            op = self.advance().text
            nxt = self.addend(-1.0 if op == "-" else 1.0)
            expr = TermExpr(expr.refs + nxt.refs, expr.offset + nxt.offset)
        return expr

    def addend(self, sign: float) -> TermExpr:
        tok = self.peek()
        if tok.kind == "num":
            value = float(self.advance().text)
            if self.peek().kind == "op" and self.peek().text == "*":
                self.advance()
                slot, idx = self.slotref()
                return TermExpr(((slot, idx, sign * value),))
            return TermExpr((), sign * value)
        if tok.kind == "ident":
            slot, idx = self.slotref()
            return TermExpr(((slot, idx, sign),))
        self.fail(("number", "identifier"))

    def slotref(self) -> tuple[str, int]:
        tok = self.peek()
        if tok.kind != "ident":
            self.fail(("identifier",))
        slot = self.advance().text
        self.expect(".")
        head = self.peek()
        if head.kind != "ident" or head.text not in ("out", "p", "d"):
            self.fail(("out", "p", "d"))
        self.advance()
        self.expect("[")
        num = self.peek()
        if num.kind != "num" or not num.text.isdigit():
            self.fail(("integer",))
        self.advance()
        self.expect("]")
        return slot, int(num.text)


def parse(text: str) -> FormulaNode:
    """Parse constraint source into an AST; raises ParseError with position."""
    parser = _Parser(_tokenize(text))
    node = parser.formula()
    tok = parser.peek()
    if tok.kind != "eof":
        raise ParseError(f"trailing input {tok.text!r}", tok.line, tok.col, ("end of input",))
    return node


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

def desugar(f: FormulaNode) -> FormulaNode:
    """Rewrite ->, == and != so only And/Or/Not/Atom remain."""
    if isinstance(f, Atom):
        return f
    if isinstance(f, Not):
        return Not(desugar(f.child))
    if isinstance(f, And):
        return And(tuple(desugar(c) for c in f.children))
    if isinstance(f, Or):
        return Or(tuple(desugar(c) for c in f.children))
    if isinstance(f, Implies):
        return Or((Not(desugar(f.lhs)), desugar(f.rhs)))
    if isinstance(f, CompareEq):
        return And((Atom(f.term, f.bound), Atom(f.term.negate(), -f.bound)))
    if isinstance(f, CompareNeq):
        return Or((Atom(f.term, f.bound, strict=True),
                   Atom(f.term.negate(), -f.bound, strict=True)))
    raise TypeError(f"unknown node {f!r}")


def _negate_atom(a: Atom) -> Atom:
    # not(t <= c) is t > c, i.e. the strict atom -t <= -c
    return Atom(a.term.negate(), -a.bound, strict=not a.strict)


def to_nnf(f: FormulaNode, margin: float = DEFAULT_MARGIN) -> FormulaNode:
    """Push negations to atoms; encode strict atoms as ``t <= c - margin``."""

    def push(node: FormulaNode, negated: bool) -> FormulaNode:
        if isinstance(node, Atom):
            atom = _negate_atom(node) if negated else node
            if atom.strict:
                atom = Atom(atom.term, atom.bound - margin, strict=False, margined=True)
            return atom
        if isinstance(node, Not):
            return push(node.child, not negated)
        if isinstance(node, And):
            kids = tuple(push(c, negated) for c in node.children)
            return Or(kids) if negated else And(kids)
        if isinstance(node, Or):
            kids = tuple(push(c, negated) for c in node.children)
            return And(kids) if negated else Or(kids)
        raise TypeError(f"to_nnf expects a desugared formula, found {type(node).__name__}")

    return push(f, False)


def _const_truth(a: Atom) -> bool | None:
    """Truth value of a constant atom, or None when it references outputs."""
    if not a.term.is_constant:
        return None
    v = a.term.offset
    return v < a.bound if a.strict else v <= a.bound


def to_cnf(f: FormulaNode, clause_cap: int = DEFAULT_CLAUSE_CAP) -> "CNFTemplate":
    """Distribute Or over And, fold constant atoms, and build a template."""

    def clauses_of(node: FormulaNode) -> list[tuple[Atom, ...]]:
        if isinstance(node, Atom):
            return [(node,)]
        if isinstance(node, And):
            out: list[tuple[Atom, ...]] = []
            for child in node.children:
                out.extend(clauses_of(child))
                if len(out) > clause_cap:
                    raise BlowupError(f"clause count exceeds cap {clause_cap}")
            return out
        if isinstance(node, Or):
            acc: list[tuple[Atom, ...]] = [()]
            for child in node.children:
                sub = clauses_of(child)
                if len(acc) * len(sub) > clause_cap:
                    raise BlowupError(f"clause count exceeds cap {clause_cap}")
                acc = [a + b for a in acc for b in sub]
            return acc
        raise TypeError(f"to_cnf expects NNF, found {type(node).__name__}")

    folded: list[tuple[Atom, ...]] = []
    for clause in clauses_of(f):
        keep: list[Atom] = []
        clause_true = False
        for atom in clause:
            truth = _const_truth(atom)
            if truth is True:
                clause_true = True
                break
            if truth is False:
                continue
            keep.append(atom)
        if clause_true:
            continue
        if not keep:
            raise UnsatisfiableConstantError("constant folding emptied a clause")
        folded.append(tuple(keep))
    return CNFTemplate.from_clauses(tuple(folded))


# ---------------------------------------------------------------------------
# CNF template
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CNFTemplate:
    """Normalized constraint: a conjunction of disjunctive clauses.

    ``group_map[i]`` assigns clause ``i`` to one of ``n_groups`` cost
    dimensions (the z vector of the distributional loss).  ``literal_names``
    optionally labels atom positions for per-literal satisfaction metrics.
    """

    clauses: tuple[tuple[Atom, ...], ...]
    group_map: tuple[int, ...]
    slot_names: frozenset[str]
    literal_names: tuple[tuple[tuple[int, int], str], ...] = ()

    @staticmethod
    def from_clauses(clauses: tuple[tuple[Atom, ...], ...],
                     group_mode: str = "per-clause",
                     literal_names: Mapping[tuple[int, int], str] | None = None) -> "CNFTemplate":
        if group_mode == "per-clause":
            group_map = tuple(range(len(clauses)))
        elif group_mode == "single":
            group_map = tuple(0 for _ in clauses)
        else:
            raise ValueError(f"unknown group_mode {group_mode!r}")
        slots = frozenset(s for clause in clauses for a in clause for s, _, _ in a.term.refs)
        names = tuple(sorted((literal_names or {}).items()))
        return CNFTemplate(clauses, group_map, slots, names)

    @property
    def n_clauses(self) -> int:
        return len(self.clauses)

    @property
    def n_groups(self) -> int:
        return max(self.group_map) + 1 if self.group_map else 1

    @property
    def n_atoms(self) -> int:
        return sum(len(c) for c in self.clauses)

    def atoms(self) -> Iterator[tuple[int, int, Atom]]:
        for ci, clause in enumerate(self.clauses):
            for li, atom in enumerate(clause):
                yield ci, li, atom

    def atom_offsets(self) -> list[int]:
        offs, total = [], 0
        for clause in self.clauses:
            offs.append(total)
            total += len(clause)
        return offs

    def with_groups(self, group_mode: str) -> "CNFTemplate":
        return CNFTemplate.from_clauses(self.clauses, group_mode, dict(self.literal_names))

    def with_literal_names(self, names: Mapping[tuple[int, int], str]) -> "CNFTemplate":
        return CNFTemplate(self.clauses, self.group_map, self.slot_names, tuple(sorted(names.items())))

    def literal_groups(self) -> dict[str, list[tuple[int, int]]]:
        groups: dict[str, list[tuple[int, int]]] = {}
        for pos, name in self.literal_names:
            groups.setdefault(name, []).append(pos)
        return groups


def compile_source(text: str, margin: float = DEFAULT_MARGIN,
                   clause_cap: int = DEFAULT_CLAUSE_CAP,
                   group_mode: str = "per-clause") -> CNFTemplate:
    """parse -> desugar -> NNF -> CNF in one call."""
    template = to_cnf(to_nnf(desugar(parse(text)), margin), clause_cap)
    if group_mode != "per-clause":
        template = template.with_groups(group_mode)
    return template


# ---------------------------------------------------------------------------
# Grounding and boolean evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Grounding:
    """Atom values for one sample plus the linear gradient row of each atom."""

    values: np.ndarray  # (n_atoms,), clause-major order
    rows: tuple[tuple[tuple[str, int, float], ...], ...]
    slot_arity: Mapping[str, int]


def ground(template: CNFTemplate, bindings: Mapping[str, np.ndarray]) -> Grounding:
    """Evaluate every atom's term against per-slot output vectors."""
    arity = {name: len(np.asarray(vec).reshape(-1)) for name, vec in bindings.items()}
    values = np.empty(template.n_atoms)
    rows: list[tuple[tuple[str, int, float], ...]] = []
    k = 0
    for _, _, atom in template.atoms():
        v = atom.term.offset
        for slot, idx, coeff in atom.term.refs:
            if slot not in bindings:
                raise UnknownSlotError(f"no binding for slot {slot!r}")
            vec = np.asarray(bindings[slot]).reshape(-1)
            if idx >= vec.shape[0]:
                raise IndexOutOfRangeError(f"{slot}.out[{idx}] exceeds arity {vec.shape[0]}")
            v += coeff * float(vec[idx])
        values[k] = v
        rows.append(atom.term.refs)
        k += 1
    return Grounding(values, tuple(rows), arity)


def eval_bool(template: CNFTemplate, state: np.ndarray, tol: float = 0.0,
              *, strict_only: bool = False, relax: bool = False) -> bool:
    """Truth of the grounded constraint at tolerance ``tol``.

    A literal holds when ``v <= bound - tol`` (or ``bound + tol`` with
    ``relax=True``, the band reading used for regression metrics).  With
    ``strict_only`` the tolerance applies only to atoms that came from
    strict comparisons.
    """
    state = np.asarray(state).reshape(-1)
    if state.shape[0] != template.n_atoms:
        raise ArityMismatchError(f"state has {state.shape[0]} values for {template.n_atoms} atoms")
    k = 0
    for clause in template.clauses:
        ok = False
        for atom in clause:
            t = tol if (not strict_only or atom.margined or atom.strict) else 0.0
            limit = atom.bound + t if relax else atom.bound - t
            if state[k] <= limit:
                ok = True
            k += 1
        if not ok:
            return False
    return True


def literal_holds(template: CNFTemplate, state: np.ndarray, tol: float = 0.0,
                  *, relax: bool = False) -> np.ndarray:
    """Per-atom satisfaction flags in clause-major order."""
    state = np.asarray(state).reshape(-1)
    if state.shape[0] != template.n_atoms:
        raise ArityMismatchError(f"state has {state.shape[0]} values for {template.n_atoms} atoms")
    flags = np.zeros(template.n_atoms, dtype=bool)
    for k, (_, _, atom) in enumerate(template.atoms()):
        limit = atom.bound + tol if relax else atom.bound - tol
        flags[k] = state[k] <= limit
    return flags


# ---------------------------------------------------------------------------
# Pretty-printing (round-trips through parse)
# ---------------------------------------------------------------------------

def format_term(term: TermExpr, bound: float) -> str:
    parts: list[str] = []
    for n, (slot, idx, coeff) in enumerate(term.refs):
        mag = abs(coeff)
        piece = f"{slot}.out[{idx}]" if mag == 1.0 else f"{mag!r}*{slot}.out[{idx}]"
        if n == 0:
            parts.append(("-" if coeff < 0 else "") + piece)
        else:
            parts.append(("- " if coeff < 0 else "+ ") + piece)
    if term.offset != 0.0 or not parts:
        off = term.offset
        if not parts:
            parts.append(repr(off))
        else:
            parts.append(("- " if off < 0 else "+ ") + repr(abs(off)))
    return " ".join(parts) + f" <= {bound!r}"


def format_template(template: CNFTemplate) -> str:
    clause_texts = []
    for clause in template.clauses:
        lits = " | ".join(format_term(a.term, a.bound) for a in clause)
        clause_texts.append(f"({lits})")
    return " & ".join(clause_texts) if clause_texts else "0 <= 1"
