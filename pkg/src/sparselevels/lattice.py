"""Merge lattices and loop planning.

For each loop variable, a merge lattice describes the loops needed to fully
merge the operand dimensions that variable indexes: each lattice point is a
set of dimensions co-iterated (or located) by one loop, with the
sub-expression that loop computes.  The planner builds one lattice per loop
variable, applies the property-based simplifications, decides which operands
are co-iterated versus randomly accessed, attaches the iterator conversions
each operand needs, and links everything into a schedule tree that the
interpreter executes directly and the code generator lowers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import UnsupportedMergeError, UnsupportedOutputError
from .formats import TensorFormat, level_extent
from .graph import IterationGraph, LoopVar, build as build_graph
from .levels import LevelKind, LevelSpec
from .notation import (
    Access, Add, Assignment, CheckedExpr, Expr, Literal, Mul,
    accesses_of, terms_of, vars_of,
)


@dataclass(frozen=True, order=True)
class DimRef:
    """One storage level of one access, as merged by some loop variable."""

    uid: int       # access occurrence id
    level: int     # storage level index
    tensor: str
    rider: bool = False  # resolved by locate at a finer-grained loop variable

    def key(self):
        return (self.uid, self.level)

    def label(self):
        return f"{self.tensor}{self.level}" + ("*" if self.rider else "")


@dataclass
class LatticePoint:
    dims: Tuple[DimRef, ...]
    expr: Expr

    def dimset(self) -> frozenset:
        return frozenset(d.key() for d in self.dims)

    def label(self) -> str:
        return "{" + ",".join(d.label() for d in self.dims) + "}"


@dataclass
class MergeLattice:
    var: str
    points: List[LatticePoint]


# conversion directives
NONE = "none"
DEDUP_CHAINED = "dedup-chained"
DEDUP_SCRATCH = "dedup-scratch"
REORDER_SCRATCH = "reorder-scratch"
ACCESS_BY_LOCATE = "access-by-locate"


@dataclass
class Case:
    point: LatticePoint
    ready: List[Expr]              # additive terms completed at this depth
    child: Optional["PlanNode"]    # deeper loops for the remaining terms


@dataclass
class PointLoop:
    point: LatticePoint
    coiter: Tuple[DimRef, ...]
    locate: Tuple[DimRef, ...]
    directives: Dict[DimRef, str]
    cases: List[Case]


@dataclass
class FusedBinding:
    var: LoopVar
    dim: DimRef                    # branchless level advanced with the parent
    locate: Tuple[DimRef, ...]     # dims located once this variable is bound


@dataclass
class PlanNode:
    var: LoopVar
    depth: int
    loops: List[PointLoop]
    fused: List[FusedBinding] = field(default_factory=list)


@dataclass
class Schedule:
    checked: CheckedExpr
    graph: IterationGraph
    order: Tuple[LoopVar, ...]
    root: Optional[PlanNode]
    output_mode: str               # gather-append | scatter-insert | reorder | scalar
    out_format: TensorFormat
    out_dims: Tuple[int, ...]
    write_depth: int               # depth of the last output-resolving variable
    bindings: Dict[str, Tuple[TensorFormat, Tuple[int, ...]]]
    fused_applied: bool = False


class _Ctx:
    """Shared lookup tables used while planning."""

    def __init__(self, checked: CheckedExpr, bindings, graph: IterationGraph):
        self.checked = checked
        self.bindings = bindings
        self.graph = graph
        self.fmt_of: Dict[int, TensorFormat] = {}
        self.path_of: Dict[int, Tuple[LoopVar, ...]] = {}
        for path in graph.paths:
            if path.access.uid == checked.output.uid:
                continue
            self.fmt_of[path.access.uid] = bindings[path.access.tensor][0]
            self.path_of[path.access.uid] = path.vars

    def spec(self, dim: DimRef) -> LevelSpec:
        return self.fmt_of[dim.uid].levels[dim.level]

    def child_spec(self, dim: DimRef) -> Optional[LevelSpec]:
        levels = self.fmt_of[dim.uid].levels
        return levels[dim.level + 1] if dim.level + 1 < len(levels) else None

    def dims_at(self, access: Access, var_name: str) -> List[DimRef]:
        """Storage levels of `access` merged by the named loop variable."""
        out = []
        fmt = self.fmt_of[access.uid]
        path = self.path_of[access.uid]
        for k, pv in enumerate(path):
            if pv.name != var_name:
                continue
            # a level that stores its variable whole but is scheduled at an
            # inner (split) variable is a rider: it is resolved by locate
            rider = fmt.roles[k].part == "whole" and pv.kind == "inner"
            out.append(DimRef(access.uid, k, access.tensor, rider))
        return out


# ---------------------------------------------------------------------------
# lattice construction

def build(var, expr: Expr, ctx: _Ctx) -> MergeLattice:
    """Merge lattice for one loop variable over one (sub)expression.

    Multiplication meets every pair of sub-points (dimension sets union,
    expressions multiply); addition additionally keeps each side's own
    points.  Points with equal dimension sets are merged keeping the first
    (most complete) expression.
    """
    var_name = var.name if isinstance(var, LoopVar) else var

    def rec(e: Expr) -> List[LatticePoint]:
        if isinstance(e, Literal):
            return [LatticePoint((), e)]
        if isinstance(e, Access):
            return [LatticePoint(tuple(ctx.dims_at(e, var_name)), e)]
        if isinstance(e, Mul):
            lps, rps = rec(e.left), rec(e.right)
            return [LatticePoint(_merge_dims(p.dims, q.dims), Mul(p.expr, q.expr))
                    for p in lps for q in rps]
        if isinstance(e, Add):
            lps, rps = rec(e.left), rec(e.right)
            points = [LatticePoint(_merge_dims(p.dims, q.dims), Add(p.expr, q.expr))
                      for p in lps for q in rps]
            points.extend(lps)
            points.extend(rps)
            return points
        raise TypeError(type(e))

    points = _dedup_points(rec(expr))
    points = [p for p in points if p.dims]
    points.sort(key=lambda p: -len(p.dims))
    return MergeLattice(var_name, points)


def _merge_dims(a: Tuple[DimRef, ...], b: Tuple[DimRef, ...]) -> Tuple[DimRef, ...]:
    seen = {d.key() for d in a}
    return a + tuple(d for d in b if d.key() not in seen)


def _dedup_points(points: List[LatticePoint]) -> List[LatticePoint]:
    out: List[LatticePoint] = []
    seen = set()
    for p in points:
        key = p.dimset()
        if key not in seen:
            seen.add(key)
            out.append(p)
    return out


def prune_full(lattice: MergeLattice, ctx: _Ctx) -> MergeLattice:
    """Drop points that do not merge every full dimension of this variable.

    Once a full dimension is exhausted the whole iteration space has been
    visited, so points missing one can never run.
    """
    if not lattice.points:
        return lattice
    full = {d.key() for d in lattice.points[0].dims if ctx.spec(d).props.full}
    for p in lattice.points:
        for d in p.dims:
            if ctx.spec(d).props.full:
                full.add(d.key())
    if not full:
        return lattice
    kept = [p for p in lattice.points if full <= p.dimset()]
    return MergeLattice(lattice.var, kept)


def dominated_points(lattice: MergeLattice, point: LatticePoint) -> List[LatticePoint]:
    """Points whose dimension sets are subsets of `point`'s, itself included."""
    ds = point.dimset()
    return [q for q in lattice.points if q.dimset() <= ds]


# ---------------------------------------------------------------------------
# co-iterate vs locate

def split_coiter_locate(point: LatticePoint, expr: Expr, ctx: _Ctx
                        ) -> Tuple[List[DimRef], List[DimRef]]:
    """Decide which of a point's dims are co-iterated and which located.

    Multiplications only need to co-iterate one side; a side whose dims all
    support locate is accessed randomly instead.  When the surviving set
    merges a full dimension, every other locate-capable dim is accessed by
    locate as well, keeping one full dim driving the loop.
    """
    in_point = point.dimset()

    def loc_ok(d: DimRef) -> bool:
        return d.rider or ctx.spec(d).locate_capable

    def sparseness(dims: List[DimRef]) -> int:
        # prefer iterating compressed/singleton storage over dense storage
        rank = {LevelKind.COMPRESSED: 0, LevelKind.SINGLETON: 0, LevelKind.HASHED: 1,
                LevelKind.OFFSET: 1, LevelKind.RANGE: 2, LevelKind.DENSE: 3}
        return min((rank[ctx.spec(d).kind] for d in dims), default=4)

    def rec(e: Expr) -> List[DimRef]:
        if isinstance(e, Literal):
            return []
        if isinstance(e, Access):
            return [d for d in ctx.dims_at(e, point_var(point, ctx))
                    if d.key() in in_point and not d.rider]
        if isinstance(e, Add):
            return _merge_list(rec(e.left), rec(e.right))
        if isinstance(e, Mul):
            cl, cr = rec(e.left), rec(e.right)
            if not cl:
                return cr
            if not cr:
                return cl
            l_ok = all(loc_ok(d) for d in cl)
            r_ok = all(loc_ok(d) for d in cr)
            if r_ok and not l_ok:
                return cl
            if l_ok and not r_ok:
                return cr
            if l_ok and r_ok:
                return cl if sparseness(cl) <= sparseness(cr) else cr
            return _merge_list(cl, [d for d in cr if not loc_ok(d)])
        raise TypeError(type(e))

    coiter = rec(expr)
    coiter = apply_full_optimization(coiter, ctx)
    coiter_keys = {d.key() for d in coiter}
    locate = [d for d in point.dims if d.key() not in coiter_keys]
    for d in locate:
        if not loc_ok(d):
            raise UnsupportedMergeError(
                f"dimension {d.label()} must be randomly accessed but its level "
                "does not support locate")
    return coiter, locate


def point_var(point: LatticePoint, ctx: _Ctx) -> str:
    # all dims of a point belong to one loop variable
    d = point.dims[0]
    return ctx.path_of[d.uid][d.level].name


def _merge_list(a: List[DimRef], b: List[DimRef]) -> List[DimRef]:
    seen = {d.key() for d in a}
    return a + [d for d in b if d.key() not in seen]


def apply_full_optimization(coiter: List[DimRef], ctx: _Ctx) -> List[DimRef]:
    """With a full dimension in the set, locate everything else that can be.

    One full dimension is kept to drive the loop: the first full dim without
    locate if any, otherwise the cheapest locate-capable one (dense first).
    """
    full = [d for d in coiter if ctx.spec(d).props.full]
    if not full:
        return coiter
    non_loc_full = [d for d in full if not ctx.spec(d).locate_capable]
    if non_loc_full:
        keeper = non_loc_full[0]
    else:
        keeper = min(full, key=lambda d: 0 if ctx.spec(d).kind is LevelKind.DENSE else 1)
    return [d for d in coiter
            if d.key() == keeper.key() or not ctx.spec(d).locate_capable]


# ---------------------------------------------------------------------------
# iterator conversions

def build_plan(coiter: Sequence[DimRef], locate: Sequence[DimRef], ctx: _Ctx,
               merge_kind: str) -> Dict[DimRef, str]:
    """Per-operand iterator conversion directives for one loop."""
    plan: Dict[DimRef, str] = {}
    for d in coiter:
        props = ctx.spec(d).props
        if not props.ordered:
            plan[d] = REORDER_SCRATCH
        elif not props.unique:
            child = ctx.child_spec(d)
            parent_ok = props.ordered and props.compact
            child_ok = (child is not None and child.position_iterable
                        and child.props.ordered and child.props.compact)
            plan[d] = DEDUP_CHAINED if (parent_ok and child_ok) else DEDUP_SCRATCH
        else:
            plan[d] = NONE
    for d in locate:
        plan[d] = ACCESS_BY_LOCATE
    return plan


# ---------------------------------------------------------------------------
# schedule construction

def build_schedule(checked: CheckedExpr,
                   bindings: Dict[str, Tuple[TensorFormat, Tuple[int, ...]]],
                   out_format: TensorFormat,
                   out_dims: Tuple[int, ...]) -> Schedule:
    graph = build_graph(checked, bindings, out_format)
    ctx = _Ctx(checked, bindings, graph)
    order = graph.var_order
    depth_of = {v.name: i for i, v in enumerate(order)}

    _check_union_soundness(checked.assignment.rhs, ctx, order)

    out_vars = checked.output.ivars
    write_depth = -1
    for v in out_vars:
        lv = graph.resolve_at.get(v)
        if lv is None:
            raise UnsupportedMergeError(f"output variable {v!r} is never resolved")
        write_depth = max(write_depth, depth_of[lv.name])
    output_mode = _decide_output_mode(checked, out_format, graph, order, write_depth)

    bound: List[str] = []

    def plan(depth: int, expr: Expr) -> Optional[PlanNode]:
        if depth == len(order):
            return None
        var = order[depth]
        bound_logical = {order[i].base for i in range(depth + 1)
                         if order[i].kind in ("whole", "inner")}
        # inner vars need their block var bound too; block vars alone do not
        # resolve the logical variable
        lattice = prune_full(build(var, expr, ctx), ctx)
        if not lattice.points:
            # no operand in this subexpression touches this variable
            return plan(depth + 1, expr)
        loops: List[PointLoop] = []
        for p in lattice.points:
            coiter, locate = split_coiter_locate(p, p.expr, ctx)
            if not coiter:
                raise UnsupportedMergeError(
                    f"no iterable dimension drives variable {var.name!r}")
            merge_kind = "union" if len(lattice.points) > 1 else "intersection"
            directives = build_plan(coiter, locate, ctx, merge_kind)
            cases = []
            for q in dominated_points(lattice, p):
                ready, rest = _split_ready(q.expr, bound_logical)
                child = plan(depth + 1, rest) if rest is not None else None
                cases.append(Case(q, ready, child))
            loops.append(PointLoop(p, tuple(coiter), tuple(locate), directives, cases))
        return PlanNode(var, depth, loops)

    root = plan(0, checked.assignment.rhs)
    return Schedule(checked, graph, order, root, output_mode, out_format,
                    tuple(out_dims), write_depth, dict(bindings))


def _split_ready(expr: Expr, bound: set) -> Tuple[List[Expr], Optional[Expr]]:
    """Split additive terms into those fully bound here and the remainder."""
    ready, rest = [], []
    for term in terms_of(expr):
        if set(vars_of(term)) <= bound:
            ready.append(term)
        else:
            rest.append(term)
    rest_expr: Optional[Expr] = None
    for t in rest:
        rest_expr = t if rest_expr is None else Add(rest_expr, t)
    return ready, rest_expr


def _check_union_soundness(expr: Expr, ctx: _Ctx, order) -> None:
    """Additions cannot merge operands whose loop structure disagrees.

    A structural (diagonal/slot) variable private to one side would repeat
    the other side's contribution once per structural coordinate, and an
    operand that resolves a variable by locate only cannot drive the union
    over it.
    """
    def struct_vars(e: Expr) -> set:
        out = set()
        for acc in accesses_of(e):
            for v in ctx.path_of[acc.uid]:
                if v.kind == "struct":
                    out.add(v.name)
        return out

    def rider_vars(e: Expr) -> set:
        out = set()
        for acc in accesses_of(e):
            fmt = ctx.fmt_of[acc.uid]
            for k, pv in enumerate(ctx.path_of[acc.uid]):
                if fmt.roles[k].part == "whole" and pv.kind == "inner":
                    out.add(pv.name)
        return out

    def covered_vars(e: Expr) -> set:
        out = set()
        for acc in accesses_of(e):
            out.update(acc.ivars)
        return out

    def rec(e: Expr):
        if isinstance(e, (Literal, Access)):
            return
        rec(e.left)
        rec(e.right)
        if isinstance(e, Add):
            l_acc, r_acc = accesses_of(e.left), accesses_of(e.right)
            if not l_acc or not r_acc:
                return
            if struct_vars(e.left) or struct_vars(e.right):
                raise UnsupportedMergeError(
                    "additive merge with a diagonal- or slot-structured operand "
                    "is not supported; convert it to an unstructured format first")
            if rider_vars(e.left) != rider_vars(e.right):
                raise UnsupportedMergeError(
                    "additive merge where only one side blocks a variable is "
                    "not supported; use matching block sizes or convert first")

    rec(expr)


def _decide_output_mode(checked: CheckedExpr, out_format: TensorFormat,
                        graph: IterationGraph, order, write_depth: int) -> str:
    if out_format.order == 0:
        return "scalar"
    insertable = all(s.insert_capable for s in out_format.levels)
    appendable_path = all(s.insert_capable or s.append_capable
                          for s in out_format.levels)
    if out_format.structured or out_format.aos or not appendable_path:
        if insertable:
            return "scatter-insert"
        return "reorder"
    needs_append = any(s.append_capable and not s.insert_capable
                       for s in out_format.levels)
    if not needs_append:
        return "scatter-insert"
    # gather production: output level coordinates must resolve in storage
    # order and nothing above the write depth may revisit output coordinates
    depth_of = {v.name: i for i, v in enumerate(order)}
    res_depths = []
    out_vars_by_level = [checked.output.ivars[r.mode] for r in out_format.roles]
    for v in out_vars_by_level:
        lv = graph.resolve_at[v]
        res_depths.append(depth_of[lv.name])
    ordered_res = all(a < b for a, b in zip(res_depths, res_depths[1:]))
    out_bases = set(checked.output.ivars)
    clean_above = all(order[d].base in out_bases and order[d].kind != "struct"
                      for d in range(write_depth))
    if ordered_res and clean_above:
        return "gather-append"
    if insertable:
        return "scatter-insert"
    return "reorder"


# ---------------------------------------------------------------------------
# iterator fusion

def fuse_branchless(schedule: Schedule) -> Schedule:
    """Fuse loops over branchless levels into their parent level's loop.

    Applies when a loop drives a single operand level, the next loop drives
    only that operand's following branchless level, and every other dimension
    there is accessed by locate.  Skipped when it would turn an append-order
    output into scatter (fusing a reduction variable under gather output).
    """
    if schedule.root is None or schedule.fused_applied:
        return schedule
    out_bases = set(schedule.checked.output.ivars)
    gather = schedule.output_mode == "gather-append"

    def try_fuse(node: PlanNode) -> PlanNode:
        while True:
            if len(node.loops) != 1 or len(node.loops[0].cases) != 1:
                break
            loop = node.loops[0]
            case = loop.cases[0]
            child = case.child
            if child is None or len(child.loops) != 1 or len(child.loops[0].cases) != 1:
                break
            cl = child.loops[0]
            if len(cl.coiter) != 1 or len(loop.coiter) != 1:
                break
            cdim, pdim = cl.coiter[0], (node.fused[-1].dim if node.fused else loop.coiter[0])
            ctx_spec = _spec_of(schedule, cdim)
            if not ctx_spec.props.branchless:
                break
            if cdim.uid != pdim.uid or cdim.level != pdim.level + 1:
                break
            if gather and child.var.base not in out_bases:
                break  # fusing a reduction would scatter into an append output
            if case.ready:
                break
            node.fused.append(FusedBinding(child.var, cdim, cl.locate))
            loop.cases = cl.cases
            case = loop.cases[0] if loop.cases else None
            if case is None:
                break
        for lp in node.loops:
            for c in lp.cases:
                if c.child is not None:
                    c.child = try_fuse(c.child)
        return node

    schedule.root = try_fuse(schedule.root)
    schedule.fused_applied = True
    return schedule


def _spec_of(schedule: Schedule, dim: DimRef) -> LevelSpec:
    fmt = schedule.bindings[dim.tensor][0]
    return fmt.levels[dim.level]


def lattices_for(checked: CheckedExpr, bindings,
                 out_format: Optional[TensorFormat] = None
                 ) -> Dict[str, MergeLattice]:
    """Pruned merge lattice per loop variable of the full expression."""
    graph = build_graph(checked, bindings, out_format)
    ctx = _Ctx(checked, bindings, graph)
    out = {}
    for var in graph.var_order:
        lat = prune_full(build(var, checked.assignment.rhs, ctx), ctx)
        if lat.points:
            out[var.name] = lat
    return out


def context_for(checked: CheckedExpr, bindings,
                out_format: Optional[TensorFormat] = None):
    """Planning context plus graph, for tests that poke at lattice internals."""
    graph = build_graph(checked, bindings, out_format)
    return _Ctx(checked, bindings, graph), graph


# ---------------------------------------------------------------------------
# debug dump

def describe_lattices(checked: CheckedExpr, bindings, out_format: TensorFormat,
                      out_dims) -> str:
    """Stable text dump: one line per lattice point per loop variable."""
    schedule = build_schedule(checked, bindings, out_format, out_dims)
    lines = []

    def walk(node: Optional[PlanNode], seen: set):
        if node is None or node.var.name in seen:
            return
        seen.add(node.var.name)
        for lp in node.loops:
            co = ",".join(d.label() for d in lp.coiter)
            lo = ",".join(d.label() for d in lp.locate)
            conv = " ".join(f"{d.label()}={lp.directives[d]}" for d in lp.coiter
                            if lp.directives[d] != NONE)
            line = f"{node.var.name}: point {lp.point.label()} coiter={{{co}}}"
            if lo:
                line += f" locate={{{lo}}}"
            if conv:
                line += f" conv[{conv}]"
            lines.append(line)
        for lp in node.loops:
            for c in lp.cases:
                walk(c.child, seen)

    walk(schedule.root, set())
    return "\n".join(lines)
