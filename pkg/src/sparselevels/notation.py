"""Tensor index notation: parsing, validation, and pretty-printing.

Expressions assign a sum of products of tensor accesses and scalar literals
to an output access, e.g. ``y(i) = A(i,j) * x(j)``.  Index variables that
appear on the right but not on the left are summed over.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .errors import NotationError, ValidationError

Span = Tuple[int, int]


@dataclass(frozen=True)
class Literal:
    value: float
    span: Span = (0, 0)


@dataclass(frozen=True)
class Access:
    tensor: str
    ivars: Tuple[str, ...]
    span: Span = (0, 0)
    uid: int = -1  # unique per access occurrence, set by validate


@dataclass(frozen=True)
class Add:
    left: "Expr"
    right: "Expr"
    span: Span = (0, 0)


@dataclass(frozen=True)
class Mul:
    left: "Expr"
    right: "Expr"
    span: Span = (0, 0)


Expr = Union[Literal, Access, Add, Mul]


@dataclass(frozen=True)
class Assignment:
    lhs: Access
    rhs: Expr
    span: Span = (0, 0)


_TOKEN = re.compile(r"\s*(?:(?P<id>[A-Za-z_]\w*)|(?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?)"
                    r"|(?P<op>[()=+\-*,]))")


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens: List[Tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if m is None or m.end() == pos:
                stripped = text[pos:].lstrip()
                if not stripped:
                    break
                raise NotationError(f"unexpected character {stripped[0]!r}",
                                    len(text) - len(stripped))
            kind = m.lastgroup
            self.tokens.append((kind, m.group(kind), m.start(kind)))
            pos = m.end()
        self.i = 0

    def peek(self) -> Optional[Tuple[str, str, int]]:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def next(self) -> Tuple[str, str, int]:
        tok = self.peek()
        if tok is None:
            raise NotationError("unexpected end of expression", len(self.text))
        self.i += 1
        return tok

    def expect(self, value: str) -> Tuple[str, str, int]:
        tok = self.next()
        if tok[1] != value:
            raise NotationError(f"expected {value!r}, found {tok[1]!r}", tok[2])
        return tok

    def at(self, value: str) -> bool:
        tok = self.peek()
        return tok is not None and tok[1] == value

    def parse_assignment(self) -> Assignment:
        lhs = self.parse_access()
        self.expect("=")
        rhs = self.parse_sum()
        tok = self.peek()
        if tok is not None:
            raise NotationError(f"trailing input {tok[1]!r}", tok[2])
        return Assignment(lhs, rhs, (0, len(self.text)))

    def parse_access(self) -> Access:
        kind, name, start = self.next()
        if kind != "id":
            raise NotationError(f"expected a tensor name, found {name!r}", start)
        self.expect("(")
        ivars: List[str] = []
        if not self.at(")"):
            while True:
                k, v, p = self.next()
                if k != "id":
                    raise NotationError(f"expected an index variable, found {v!r}", p)
                ivars.append(v)
                if self.at(")"):
                    break
                self.expect(",")
        end = self.expect(")")[2] + 1
        return Access(name, tuple(ivars), (start, end))

    def parse_sum(self) -> Expr:
        negate = False
        if self.at("-"):
            self.next()
            negate = True
        expr = self.parse_term()
        if negate:
            expr = Mul(Literal(-1.0, expr.span), expr, expr.span)
        while self.at("+") or self.at("-"):
            _, op, p = self.next()
            term = self.parse_term()
            if op == "-":
                term = Mul(Literal(-1.0, (p, p + 1)), term, term.span)
            expr = Add(expr, term, (expr.span[0], term.span[1]))
        return expr

    def parse_term(self) -> Expr:
        expr = self.parse_factor()
        while self.at("*"):
            self.next()
            rhs = self.parse_factor()
            expr = Mul(expr, rhs, (expr.span[0], rhs.span[1]))
        return expr

    def parse_factor(self) -> Expr:
        tok = self.peek()
        if tok is None:
            raise NotationError("unexpected end of expression", len(self.text))
        kind, value, p = tok
        if value == "(":
            self.next()
            expr = self.parse_sum()
            self.expect(")")
            return expr
        if kind == "num":
            self.next()
            return Literal(float(value), (p, p + len(value)))
        if kind == "id":
            return self.parse_access()
        raise NotationError(f"expected a factor, found {value!r}", p)


def parse(text: str) -> Assignment:
    """Parse ``out(vars) = term (('+'|'-') term)*`` into an AST."""
    return _Parser(text).parse_assignment()


def pretty(node) -> str:
    """Deterministic textual form; re-parsing yields a structurally equal AST."""
    if isinstance(node, Assignment):
        return f"{pretty(node.lhs)} = {pretty(node.rhs)}"
    if isinstance(node, Access):
        return f"{node.tensor}({','.join(node.ivars)})"
    if isinstance(node, Literal):
        v = node.value
        return str(int(v)) if v == int(v) and abs(v) < 1e15 else repr(v)
    if isinstance(node, Add):
        return f"{pretty(node.left)} + {pretty(node.right)}"
    if isinstance(node, Mul):
        def wrap(child):
            s = pretty(child)
            return f"({s})" if isinstance(child, Add) else s
        if isinstance(node.left, Literal) and node.left.value < 0:
            return f"{wrap(node.left)} * {wrap(node.right)}"
        return f"{wrap(node.left)} * {wrap(node.right)}"
    raise TypeError(type(node))


def structurally_equal(a, b) -> bool:
    """Compare ASTs ignoring spans and access uids."""
    if type(a) is not type(b):
        # literals parsed back may differ in span only
        return False
    if isinstance(a, Assignment):
        return structurally_equal(a.lhs, b.lhs) and structurally_equal(a.rhs, b.rhs)
    if isinstance(a, Access):
        return a.tensor == b.tensor and a.ivars == b.ivars
    if isinstance(a, Literal):
        return a.value == b.value
    if isinstance(a, (Add, Mul)):
        return structurally_equal(a.left, b.left) and structurally_equal(a.right, b.right)
    raise TypeError(type(a))


def accesses_of(expr: Expr) -> List[Access]:
    out: List[Access] = []

    def rec(node):
        if isinstance(node, Access):
            out.append(node)
        elif isinstance(node, (Add, Mul)):
            rec(node.left)
            rec(node.right)

    rec(expr)
    return out


def terms_of(expr: Expr) -> List[Expr]:
    """Flatten the additive structure into a list of terms."""
    if isinstance(expr, Add):
        return terms_of(expr.left) + terms_of(expr.right)
    return [expr]


def vars_of(expr: Expr) -> Tuple[str, ...]:
    seen: List[str] = []
    for acc in accesses_of(expr):
        for v in acc.ivars:
            if v not in seen:
                seen.append(v)
    return tuple(seen)


@dataclass
class CheckedExpr:
    """A validated assignment plus the facts validation established."""

    assignment: Assignment
    accesses: List[Access]            # rhs accesses with uids assigned
    output: Access                    # lhs access (uid assigned)
    var_extents: Dict[str, int]       # every index variable -> dimension size
    reduction_vars: Tuple[str, ...]   # rhs vars absent from the lhs
    appearance: Tuple[str, ...]       # vars in first-appearance order (lhs first)


def validate(assignment: Assignment, bindings: Dict[str, Tuple[object, Sequence[int]]]
             ) -> CheckedExpr:
    """Check arities, bindings, and dimension agreement.

    ``bindings`` maps each rhs tensor name to (format, dims); the format's
    order must match the access arity and shared variables must agree on
    their extents.  Returns the checked expression with the reduction set.
    """
    lhs = assignment.lhs
    rhs_accesses = accesses_of(assignment.rhs)
    if not rhs_accesses:
        raise ValidationError("right-hand side references no tensors")

    # a term that is all literals would add a constant everywhere; unsupported
    for term in terms_of(assignment.rhs):
        if not accesses_of(term):
            raise ValidationError("a term with no tensor access is not supported")

    var_extents: Dict[str, int] = {}
    uid = 0
    checked: List[Access] = []
    for acc in rhs_accesses:
        if acc.tensor not in bindings:
            raise ValidationError(f"tensor {acc.tensor!r} is not bound")
        fmt, dims = bindings[acc.tensor]
        order = getattr(fmt, "order", len(dims))
        if len(acc.ivars) != order:
            raise ValidationError(
                f"{acc.tensor} has order {order} but is accessed with "
                f"{len(acc.ivars)} index variables")
        if len(set(acc.ivars)) != len(acc.ivars):
            raise ValidationError(
                f"repeated index variable in access {acc.tensor}{acc.ivars}")
        for v, n in zip(acc.ivars, dims):
            if v in var_extents and var_extents[v] != n:
                raise ValidationError(
                    f"dimension mismatch for variable {v!r}: "
                    f"{var_extents[v]} vs {n} in {acc.tensor}")
            var_extents[v] = n
        checked.append(Access(acc.tensor, acc.ivars, acc.span, uid))
        uid += 1

    rhs_vars = set(var_extents)
    for v in lhs.ivars:
        if v not in rhs_vars:
            raise ValidationError(f"output variable {v!r} never appears on the right")
    if len(set(lhs.ivars)) != len(lhs.ivars):
        raise ValidationError("repeated index variable in the output access")
    if lhs.tensor in bindings:
        _, dims = bindings[lhs.tensor]
        for v, n in zip(lhs.ivars, dims):
            if var_extents[v] != n:
                raise ValidationError(
                    f"dimension mismatch for variable {v!r}: "
                    f"{var_extents[v]} vs {n} in output {lhs.tensor}")

    output = Access(lhs.tensor, lhs.ivars, lhs.span, uid)
    new_assignment = Assignment(output, _renumber(assignment.rhs, iter(checked)),
                                assignment.span)

    reduction = tuple(v for v in _appearance_order(new_assignment)
                      if v not in lhs.ivars)
    return CheckedExpr(
        assignment=new_assignment,
        accesses=checked,
        output=output,
        var_extents=var_extents,
        reduction_vars=reduction,
        appearance=_appearance_order(new_assignment),
    )


def _renumber(expr: Expr, supply) -> Expr:
    if isinstance(expr, Access):
        return next(supply)
    if isinstance(expr, Add):
        return Add(_renumber(expr.left, supply), _renumber(expr.right, supply), expr.span)
    if isinstance(expr, Mul):
        return Mul(_renumber(expr.left, supply), _renumber(expr.right, supply), expr.span)
    return expr


def _appearance_order(assignment: Assignment) -> Tuple[str, ...]:
    seen: List[str] = []
    for acc in [assignment.lhs] + accesses_of(assignment.rhs):
        for v in acc.ivars:
            if v not in seen:
                seen.append(v)
    return tuple(seen)
