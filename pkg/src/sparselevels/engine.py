"""Direct execution of schedules over tensor storage.

The interpreter walks the same schedule tree the code generator lowers:
one loop nest per lattice-point sequence, co-iterating converted level
iterators, random-accessing locate-capable operands, and assembling the
output through the level insert/append protocols.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import UnsupportedMergeError, UnsupportedOutputError
from .formats import (
    CoordList, TensorFormat, TensorStorage, assemble, level_extent,
)
from .lattice import (
    ACCESS_BY_LOCATE, DEDUP_CHAINED, DEDUP_SCRATCH, NONE, REORDER_SCRATCH,
    Case, DimRef, PlanNode, PointLoop, Schedule, build_schedule, fuse_branchless,
)
from .levels import EMPTY, LevelKind, LevelSpec, LevelStorage
from .notation import (
    Access, Add, Assignment, CheckedExpr, Expr, Literal, Mul, parse, validate,
)


# ---------------------------------------------------------------------------
# level iterators

class CoordStream:
    """Ordered unique stream over a value-iterated level (dense, range)."""

    __slots__ = ("level", "parents", "prefix", "c", "hi")

    def __init__(self, level: LevelStorage, parents: Sequence[int], prefix):
        self.level = level
        self.parents = list(parents)
        self.prefix = list(prefix)
        lo, hi = level.coord_bounds(self.prefix if self.prefix else [0])
        self.c, self.hi = lo, hi

    def valid(self) -> bool:
        return self.c < self.hi

    def coord(self) -> int:
        return self.c

    def positions(self) -> List[int]:
        lv = self.level
        pc = self.prefix + [self.c]
        return [lv.coord_access(pp, pc)[0] for pp in self.parents]

    def advance(self) -> None:
        self.c += 1


class PosStream:
    """Raw stream over a position-iterated level: may repeat coordinates."""

    __slots__ = ("level", "spans", "prefix", "si", "p", "c", "_done")

    def __init__(self, level: LevelStorage, spans: Sequence[Tuple[int, int]], prefix):
        self.level = level
        self.spans = list(spans)
        self.prefix = list(prefix)
        self.si = 0
        self.p = self.spans[0][0] if self.spans else 0
        self._done = not self.spans
        self.c = 0
        self._settle()

    def _settle(self) -> None:
        # skip unlabeled positions and exhausted spans
        while not self._done:
            if self.si >= len(self.spans):
                self._done = True
                return
            b, e = self.spans[self.si]
            if self.p < b:
                self.p = b
            if self.p >= e:
                self.si += 1
                if self.si < len(self.spans):
                    self.p = self.spans[self.si][0]
                continue
            c, found = self.level.pos_access(self.p, self.prefix)
            if found:
                self.c = c
                return
            self.p += 1

    def valid(self) -> bool:
        return not self._done

    def coord(self) -> int:
        return self.c

    def positions(self) -> List[int]:
        return [self.p]

    def advance(self) -> None:
        self.p += 1
        self._settle()


class Grouped:
    """Deduplicating wrapper: one visit per coordinate, positions merged.

    Realizes both deduplication modes: with contiguous positions the group is
    a chained range over the duplicates' children, otherwise it acts as the
    scratch variant.
    """

    __slots__ = ("base", "c", "plist", "_valid")

    def __init__(self, base):
        self.base = base
        self._valid = False
        self._load()

    def _load(self) -> None:
        base = self.base
        if not base.valid():
            self._valid = False
            return
        self.c = base.coord()
        plist = list(base.positions())
        base.advance()
        while base.valid() and base.coord() == self.c:
            plist.extend(base.positions())
            base.advance()
        self.plist = plist
        self._valid = True

    def valid(self) -> bool:
        return self._valid

    def coord(self) -> int:
        return self.c

    def positions(self) -> List[int]:
        return self.plist

    def span(self) -> Tuple[int, int]:
        return self.plist[0], self.plist[-1] + 1

    def advance(self) -> None:
        self._load()


class Reordered:
    """Sorted materialization of an unordered stream; stable for duplicates."""

    __slots__ = ("items", "i")

    def __init__(self, base):
        pairs = []
        k = 0
        while base.valid():
            for p in base.positions():
                pairs.append((base.coord(), k, p))
                k += 1
            base.advance()
        pairs.sort(key=lambda t: (t[0], t[1]))
        items: List[Tuple[int, List[int]]] = []
        for c, _, p in pairs:
            if items and items[-1][0] == c:
                items[-1][1].append(p)
            else:
                items.append((c, [p]))
        self.items = items
        self.i = 0

    def valid(self) -> bool:
        return self.i < len(self.items)

    def coord(self) -> int:
        return self.items[self.i][0]

    def positions(self) -> List[int]:
        return self.items[self.i][1]

    def advance(self) -> None:
        self.i += 1


def dedup_iterator(base, mode: str = "chained") -> Grouped:
    """Deduplicate an ordered stream; `mode` records the planner's choice."""
    if mode not in ("chained", "scratch"):
        raise ValueError(mode)
    return Grouped(base)


def reorder_iterator(base) -> Reordered:
    """Ordered copy of an unordered stream."""
    return Reordered(base)


def make_stream(level: LevelStorage, spec: LevelSpec, directive: str,
                parents: Sequence[int], prefix):
    if spec.value_iterable:
        return CoordStream(level, parents, prefix)
    spans = [level.pos_bounds(pp) for pp in parents]
    raw = PosStream(level, spans, prefix)
    if directive == REORDER_SCRATCH or not spec.props.ordered:
        return Reordered(raw)
    return Grouped(raw)


def merge_visits(streams):
    """Min-merge over ordered unique streams while all stay in bounds.

    The consumer reads coordinates/positions during the yield; iterators that
    referenced the merged coordinate advance on resume.
    """
    while True:
        for it in streams:
            if not it.valid():
                return
        iv = min(it.coord() for it in streams)
        yield iv
        for it in streams:
            if it.coord() == iv:
                it.advance()


def coiterate(streams, mode: str = "union"):
    """Visit stream of (coordinate, per-operand found flags).

    Union visits every coordinate present in any stream; intersection stops
    as soon as one stream is exhausted and reports only all-present visits.
    """
    if mode == "intersection":
        for iv in merge_visits(streams):
            if all(it.coord() == iv for it in streams):
                yield iv, tuple(True for _ in streams)
    elif mode == "union":
        while True:
            alive = [it for it in streams if it.valid()]
            if not alive:
                return
            iv = min(it.coord() for it in alive)
            yield iv, tuple(it.valid() and it.coord() == iv for it in streams)
            for it in alive:
                if it.coord() == iv:
                    it.advance()
    else:
        raise ValueError(mode)


# ---------------------------------------------------------------------------
# statistics

@dataclass
class EvalStats:
    """Loop visit counters, keyed by loop variable."""

    by_var: Dict[str, int] = field(default_factory=dict)
    by_loop: Dict[Tuple[str, str], int] = field(default_factory=dict)

    def count(self, var: str, point_label: str) -> None:
        self.by_var[var] = self.by_var.get(var, 0) + 1
        key = (var, point_label)
        self.by_loop[key] = self.by_loop.get(key, 0) + 1

    def total(self) -> int:
        return sum(self.by_var.values())


# ---------------------------------------------------------------------------
# output writers

def _next_pow2(x: int) -> int:
    w = 1
    while w < x:
        w *= 2
    return w


class _ScatterWriter:
    """Insert-protocol output: locate each level, accumulate into vals."""

    def __init__(self, fmt: TensorFormat, dims):
        self.fmt = fmt
        self.dims = tuple(dims)
        levels: List[LevelStorage] = []
        size = 1
        for k, spec in enumerate(fmt.levels):
            extent = level_extent(fmt, self.dims, k)
            if spec.kind is LevelKind.DENSE:
                lv = LevelStorage(spec, n=extent)
            elif spec.kind is LevelKind.HASHED:
                w = fmt.hash_width or _next_pow2(max(4, 2 * extent))
                lv = LevelStorage(spec, w=w)
            else:
                raise UnsupportedOutputError(
                    f"{spec.kind.value} output level cannot be scattered into")
            lv.insert_init(size, lv.size(size))
            size = lv.size(size)
            levels.append(lv)
        self.levels = levels
        self.vals = [0.0] * max(size, 1)

    def write(self, coords, val: float) -> None:
        pos = 0
        for k, lv in enumerate(self.levels):
            role = self.fmt.roles[k]
            if role.part == "whole":
                c = coords[role.mode]
            elif role.part == "block":
                c = coords[role.mode] // role.factor
            else:
                c = coords[role.mode] % role.factor
            if lv.kind is LevelKind.HASHED:
                lv.insert_coord(pos * lv.w + c % lv.w, c)
                pos = lv.locate(pos, [c])[0]
            else:
                pos = lv.locate(pos, [c])[0]
        self.vals[pos] += val

    def finish(self) -> TensorStorage:
        size = 1
        for lv in self.levels:
            lv.insert_finalize(size, lv.size(size))
            size = lv.size(size)
        return TensorStorage(self.fmt, self.dims, self.levels, self.vals)


class _GatherWriter:
    """Append-protocol output, fed coordinates in storage order.

    Each compressed level's edges are emitted once per parent position in
    ascending order: a parent is closed as soon as a later one opens, and the
    remainder are closed at finalize.
    """

    def __init__(self, fmt: TensorFormat, dims):
        self.fmt = fmt
        self.dims = tuple(dims)
        nlv = len(fmt.levels)
        self.levels: List[LevelStorage] = []
        self.chain_to_leaf = [False] * nlv
        self.tail_product = 1
        self.last_append = -1
        for k, spec in enumerate(fmt.levels):
            extent = level_extent(fmt, self.dims, k)
            if spec.kind is LevelKind.DENSE:
                self.levels.append(LevelStorage(spec, n=extent))
            elif spec.append_capable:
                lv = LevelStorage(spec)
                lv.append_init(0, 0)
                self.levels.append(lv)
                self.last_append = k
            else:
                raise UnsupportedOutputError(
                    f"{spec.kind.value} output level cannot be appended to")
        for k, spec in enumerate(fmt.levels):
            if spec.kind is LevelKind.COMPRESSED:
                t = k
                while t + 1 < nlv and fmt.levels[t + 1].kind is LevelKind.SINGLETON:
                    t += 1
                self.chain_to_leaf[k] = t == nlv - 1
        for k in range(self.last_append + 1, nlv):
            self.tail_product *= self.levels[k].n
        self.open_node: List[Optional[Tuple[int, int]]] = [None] * nlv
        self.node_count = [0] * nlv
        self.edged = [-1] * nlv          # last parent whose edges were emitted
        self.count_at_open = [0] * nlv   # node count when the open parent opened
        self.vals: List[float] = []

    def _open_parent(self, k: int, parent: int) -> None:
        """Close everything before `parent` and make it current."""
        lv = self.levels[k]
        open_node = self.open_node[k]
        prev = open_node[0] if open_node is not None else -1
        if parent == prev:
            return
        count = self.node_count[k]
        while self.edged[k] < parent - 1:
            q = self.edged[k] + 1
            pbegin = self.count_at_open[k] if q == prev else count
            lv.append_edges(q, pbegin, count)
            self.edged[k] = q
        self.count_at_open[k] = count

    def write(self, coords, val: float) -> None:
        pos = 0
        for k, lv in enumerate(self.levels):
            role = self.fmt.roles[k]
            c = coords[role.mode]
            spec = self.fmt.levels[k]
            if spec.kind is LevelKind.DENSE:
                pos = pos * lv.n + c
            elif spec.kind is LevelKind.COMPRESSED:
                node = (pos, c)
                if self.chain_to_leaf[k] or self.open_node[k] != node:
                    self._open_parent(k, pos)
                    p_new = self.node_count[k]
                    lv.append_coord(p_new, c)
                    self.node_count[k] = p_new + 1
                    self.open_node[k] = node
                    if k == self.last_append:
                        self.vals.extend([0.0] * self.tail_product)
                pos = self.node_count[k] - 1
            else:  # singleton
                if self.open_node[k] != (pos, c):
                    lv.append_coord(pos, c)
                    self.open_node[k] = (pos, c)
                    self.node_count[k] += 1
                    if k == self.last_append:
                        self.vals.extend([0.0] * self.tail_product)
        self.vals[pos] += val

    def finish(self) -> TensorStorage:
        size = 1
        for k, lv in enumerate(self.levels):
            spec = self.fmt.levels[k]
            if spec.kind is LevelKind.DENSE:
                size *= lv.n
            elif spec.kind is LevelKind.COMPRESSED:
                count = self.node_count[k]
                open_node = self.open_node[k]
                prev = open_node[0] if open_node is not None else -1
                while self.edged[k] < size - 1:
                    q = self.edged[k] + 1
                    begin = self.count_at_open[k] if q == prev else count
                    lv.append_edges(q, begin, count)
                    self.edged[k] = q
                lv.append_finalize(size, count)
                size = count
            else:
                lv.append_finalize(size, size)
        return TensorStorage(self.fmt, self.dims, self.levels, self.vals)


class _ReorderWriter:
    """Accumulate into a map, then assemble once finished."""

    def __init__(self, fmt: TensorFormat, dims):
        self.fmt = fmt
        self.dims = tuple(dims)
        self.cells: Dict[Tuple[int, ...], float] = {}

    def write(self, coords, val: float) -> None:
        key = tuple(coords)
        self.cells[key] = self.cells.get(key, 0.0) + val

    def finish(self) -> TensorStorage:
        entries = sorted(self.cells.items())
        data = CoordList(self.dims, [(c, v) for c, v in entries], canonical=False)
        return assemble(self.fmt, self.dims, data)


class _ScalarWriter:
    def __init__(self, fmt: TensorFormat):
        self.fmt = fmt
        self.total = 0.0

    def write(self, coords, val: float) -> None:
        self.total += val

    def finish(self) -> TensorStorage:
        return TensorStorage(self.fmt, (), [], [self.total])


def _make_writer(schedule: Schedule):
    mode = schedule.output_mode
    if mode == "scalar":
        return _ScalarWriter(schedule.out_format)
    if mode == "scatter-insert":
        return _ScatterWriter(schedule.out_format, schedule.out_dims)
    if mode == "gather-append":
        return _GatherWriter(schedule.out_format, schedule.out_dims)
    return _ReorderWriter(schedule.out_format, schedule.out_dims)


# ---------------------------------------------------------------------------
# access state

class _AccessState:
    __slots__ = ("storage", "fmt", "positions", "prefix")

    def __init__(self, storage: TensorStorage):
        self.storage = storage
        self.fmt = storage.format
        n = len(storage.levels)
        self.positions: List[List[int]] = [[0]] * (n + 1)
        self.prefix: List[int] = [0] * n

    def parents(self, level: int) -> List[int]:
        return self.positions[level] if level > 0 else [0]

    def leaf_value(self) -> float:
        vals = self.storage.vals
        total = 0.0
        for p in self.positions[len(self.storage.levels)]:
            total += vals[p]
        return total


# ---------------------------------------------------------------------------
# executor

class _Executor:
    def __init__(self, schedule: Schedule, storages: Dict[str, TensorStorage],
                 stats: Optional[EvalStats]):
        self.schedule = schedule
        self.stats = stats
        self.env: Dict[str, int] = {}
        self.states: Dict[int, _AccessState] = {}
        for acc in schedule.checked.accesses:
            self.states[acc.uid] = _AccessState(storages[acc.tensor])
        self.writer = _make_writer(schedule)
        self.write_depth = schedule.write_depth
        self.out_vars = schedule.checked.output.ivars

    # -- expression evaluation at bound depths

    def eval_expr(self, e: Expr) -> float:
        if isinstance(e, Access):
            st = self.states[e.uid]
            vals = st.storage.vals
            ps = st.positions[len(st.storage.levels)]
            if len(ps) == 1:
                return vals[ps[0]]
            return sum(vals[p] for p in ps)
        if isinstance(e, Mul):
            return self.eval_expr(e.left) * self.eval_expr(e.right)
        if isinstance(e, Add):
            return self.eval_expr(e.left) + self.eval_expr(e.right)
        if isinstance(e, Literal):
            return e.value
        raise TypeError(type(e))

    # -- binding helpers

    def bind_var(self, var, c: int) -> None:
        env = self.env
        env[var.name] = c
        if var.kind == "whole":
            env[var.base] = c
        elif var.kind == "inner":
            env[var.base] = env[f"{var.base}.b{var.factor}"] * var.factor + c

    def stream_for(self, dim: DimRef, directive: str):
        st = self.states[dim.uid]
        level = st.storage.levels[dim.level]
        parents = st.parents(dim.level)
        prefix = st.prefix[:dim.level]
        return make_stream(level, level.spec, directive, parents, prefix)

    def set_positions(self, dim: DimRef, plist: List[int], coord: int) -> None:
        st = self.states[dim.uid]
        st.positions[dim.level + 1] = plist
        st.prefix[dim.level] = coord

    def locate_dim(self, dim: DimRef, var, iv: int) -> bool:
        st = self.states[dim.uid]
        c = self.env[var.base] if dim.rider else iv
        level = st.storage.levels[dim.level]
        found_ps: List[int] = []
        prefix = st.prefix[:dim.level]
        for pp in st.parents(dim.level):
            p, found = level.locate(pp, prefix + [c])
            if found:
                found_ps.append(p)
        if not found_ps:
            return False
        st.positions[dim.level + 1] = found_ps
        st.prefix[dim.level] = c
        return True

    def out_coords(self) -> Tuple[int, ...]:
        env = self.env
        return tuple(env[v] for v in self.out_vars)

    # -- the loop nest

    def run(self) -> TensorStorage:
        root = self.schedule.root
        if root is None:
            val = self.eval_expr(self.schedule.checked.assignment.rhs)
            self.writer.write(self.out_coords(), val)
        else:
            total = self.run_node(root)
            if self.write_depth < 0:
                self.writer.write((), total)
        return self.writer.finish()

    def run_node(self, node: PlanNode) -> float:
        if node.fused:
            return self.run_fused(node)
        total = 0.0
        stats = self.stats
        var = node.var
        at_write = node.depth == self.write_depth
        streams = {}
        for lp in node.loops:
            for d in lp.coiter:
                if d.key() not in streams:
                    streams[d.key()] = self.stream_for(d, lp.directives[d])
        for lp in node.loops:
            its = [streams[d.key()] for d in lp.coiter]
            label = lp.point.label()
            for iv in merge_visits(its):
                if stats is not None:
                    stats.count(var.name, label)
                self.bind_var(var, iv)
                matched = set()
                for d, it in zip(lp.coiter, its):
                    if it.coord() == iv:
                        matched.add(d.key())
                        self.set_positions(d, it.positions(), iv)
                for d in lp.locate:
                    if self.locate_dim(d, var, iv):
                        matched.add(d.key())
                case = None
                for c in lp.cases:
                    if c.point.dimset() <= matched:
                        case = c
                        break
                if case is None:
                    continue
                val = 0.0
                if case.child is not None:
                    val += self.run_node(case.child)
                for t in case.ready:
                    val += self.eval_expr(t)
                if at_write:
                    self.writer.write(self.out_coords(), val)
                else:
                    total += val
        return total

    def run_fused(self, node: PlanNode) -> float:
        """Single loop advancing a branchless chain of levels together."""
        lp = node.loops[0]
        case = lp.cases[0] if lp.cases else None
        d0 = lp.coiter[0]
        st = self.states[d0.uid]
        storage = st.storage
        chain_dims = [d0] + [fb.dim for fb in node.fused]
        chain_vars = [node.var] + [fb.var for fb in node.fused]
        chain_levels = [storage.levels[d.level] for d in chain_dims]
        locate_groups = [lp.locate] + [fb.locate for fb in node.fused]
        base_level = chain_levels[0]
        prefix = st.prefix[:d0.level]
        parents = st.parents(d0.level)
        at_write = node.depth + len(node.fused) == self.write_depth
        # write depth counts fused vars: the last chained var may resolve it
        write_here = self.write_depth in range(node.depth,
                                               node.depth + len(node.fused) + 1)
        grouped = _needs_grouping(self.schedule, chain_dims)
        total = 0.0
        stats = self.stats
        label = lp.point.label()

        def visits():
            if base_level.spec.value_iterable:
                for pp in parents:
                    lo, hi = base_level.coord_bounds(prefix if prefix else [0])
                    for c0 in range(lo, hi):
                        p = base_level.coord_access(pp, prefix + [c0])[0]
                        yield p, p + 1, self._chain_coords(chain_levels, prefix, c0, p)
            else:
                for pp in parents:
                    b, e = base_level.pos_bounds(pp)
                    p = b
                    while p < e:
                        c0, found = base_level.pos_access(p, prefix)
                        if not found:
                            p += 1
                            continue
                        coords = self._chain_coords(chain_levels, prefix, c0, p)
                        if grouped:
                            q = p + 1
                            while q < e and self._chain_coords(
                                    chain_levels, prefix, base_level.pos_access(q, prefix)[0], q) == coords:
                                q += 1
                            yield p, q, coords
                            p = q
                        else:
                            yield p, p + 1, coords
                            p += 1

        for pb, pe, coords in visits():
            if stats is not None:
                stats.count(node.var.name, label)
            plist = list(range(pb, pe))
            ok = True
            for var, coord, dim in zip(chain_vars, coords, chain_dims):
                self.bind_var(var, coord)
                self.set_positions(dim, plist, coord)
            for var, group in zip(chain_vars, locate_groups):
                for d in group:
                    if not self.locate_dim(d, var, self.env[var.name]):
                        ok = False
                        break
                if not ok:
                    break
            if not ok or case is None:
                continue
            val = 0.0
            if case.child is not None:
                val += self.run_node(case.child)
            for t in case.ready:
                val += self.eval_expr(t)
            if write_here:
                self.writer.write(self.out_coords(), val)
            else:
                total += val
        return total

    @staticmethod
    def _chain_coords(chain_levels, prefix, c0, p) -> Tuple[int, ...]:
        coords = [c0]
        pfx = prefix + [c0]
        for lv in chain_levels[1:]:
            c = lv.pos_access(p, pfx)[0]
            coords.append(c)
            pfx.append(c)
        return tuple(coords)


def _needs_grouping(schedule: Schedule, chain_dims: List[DimRef]) -> bool:
    if schedule.output_mode in ("scatter-insert", "scalar", "reorder"):
        return False
    for d in chain_dims:
        fmt = schedule.bindings[d.tensor][0]
        if not fmt.levels[d.level].props.unique:
            return True
    return False


# ---------------------------------------------------------------------------
# entry points

def evaluate(expr, inputs: Dict[str, TensorStorage],
             out_format: Optional[TensorFormat] = None,
             out_dims: Optional[Sequence[int]] = None, *,
             fuse: bool = True, allow_reorder: bool = True,
             stats: Optional[EvalStats] = None) -> TensorStorage:
    """Evaluate an index-notation assignment over stored tensors.

    `expr` is an assignment string or parsed AST; `inputs` binds each
    right-hand tensor name to its storage.  The result is assembled in
    `out_format` (dense by default) with dims derived from the expression.
    """
    from .formats import preset

    assignment = parse(expr) if isinstance(expr, str) else expr
    bindings = {name: (s.format, s.dims) for name, s in inputs.items()}
    checked = validate(assignment, bindings)
    if out_format is None:
        out_format = preset("dense", order=len(assignment.lhs.ivars))
    if out_dims is None:
        out_dims = tuple(checked.var_extents[v] for v in assignment.lhs.ivars)
    schedule = plan(checked, bindings, out_format, tuple(out_dims), fuse=fuse)
    if schedule.output_mode == "reorder" and not allow_reorder:
        raise UnsupportedOutputError(
            "the output format needs coordinates in storage order but the "
            "schedule produces them out of order; a reordering stage is required")
    return _Executor(schedule, inputs, stats).run()


def plan(checked: CheckedExpr, bindings, out_format: TensorFormat,
         out_dims: Tuple[int, ...], *, fuse: bool = True) -> Schedule:
    schedule = build_schedule(checked, bindings, out_format, out_dims)
    if fuse:
        schedule = fuse_branchless(schedule)
    return schedule


def identity_copy(src: TensorStorage, dst_format: TensorFormat) -> TensorStorage:
    """Re-store a tensor in another format through the engine."""
    names = [f"i{k}" for k in range(src.order)]
    text = f"OUT({','.join(names)}) = IN({','.join(names)})"
    return evaluate(text, {"IN": src}, dst_format, src.dims)
