"""Whole-tensor formats composed from per-dimension levels.

A TensorFormat is an ordered list of level specs plus a mode ordering; the
level list may be longer than the tensor order for blocked and diagonal
formats, whose extra levels carry block or structural coordinates.
TensorStorage owns the physical arrays the levels govern plus the values
array at the leaf.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .errors import AssemblyError, FormatError
from .levels import (
    EMPTY,
    LevelKind,
    LevelSpec,
    LevelStorage,
    compressed,
    dense,
    hashed,
    offset_level,
    range_level,
    singleton,
)

Coords = Tuple[int, ...]
Entry = Tuple[Coords, float]


@dataclass(frozen=True)
class LevelRole:
    """How one storage level relates to the logical tensor modes.

    part "whole":     the level stores mode `mode` directly.
    part "block":     the level stores mode // factor.
    part "inner":     the level stores mode % factor.
    part "diag":      structural level indexing stored diagonals (no mode).
    part "slot":      structural level indexing per-row entry slots (no mode).
    """

    part: str
    mode: int = -1
    factor: int = 1


@dataclass(frozen=True)
class TensorFormat:
    order: int
    levels: Tuple[LevelSpec, ...]
    roles: Tuple[LevelRole, ...]
    mode_ordering: Tuple[int, ...]
    name: str = ""
    aos: bool = False
    hash_width: int = 0  # 0 means size at assembly time
    params: Tuple[Tuple[str, int], ...] = ()

    def __post_init__(self):
        if len(self.levels) != len(self.roles):
            raise FormatError("levels and roles must align")
        if sorted(self.mode_ordering) != list(range(self.order)):
            raise FormatError(f"mode ordering {self.mode_ordering} is not a permutation")
        for spec in self.levels:
            if not (spec.value_iterable or spec.position_iterable):
                raise FormatError("every level must support value or position iteration")

    @property
    def structured(self) -> bool:
        """True when any level is structural or splits a mode."""
        return any(r.part != "whole" for r in self.roles)

    def param(self, key: str, default: int = 0) -> int:
        return dict(self.params).get(key, default)

    def describe(self) -> str:
        body = ",".join(spec.describe() for spec in self.levels)
        suffix = ""
        if self.mode_ordering != tuple(range(self.order)):
            suffix = "@(" + ",".join(map(str, self.mode_ordering)) + ")"
        return "{" + body + "}" + suffix


def _whole_roles(mode_ordering: Sequence[int]) -> Tuple[LevelRole, ...]:
    return tuple(LevelRole("whole", m) for m in mode_ordering)


def simple_format(levels: Sequence[LevelSpec], mode_ordering: Optional[Sequence[int]] = None,
                  name: str = "", aos: bool = False, hash_width: int = 0) -> TensorFormat:
    """Format with one level per mode, in mode_ordering order."""
    order = len(levels)
    mo = tuple(mode_ordering) if mode_ordering is not None else tuple(range(order))
    return TensorFormat(order, tuple(levels), _whole_roles(mo), mo,
                        name=name, aos=aos, hash_width=hash_width)


_PRESET_ALIASES = {
    "coo": "coo-soa", "coo-2": "coo-soa", "coo3": "coo-3", "coo-3-soa": "coo-3",
    "sv": "sparse-vector", "hash": "hash-vector", "mg": "mode-generic",
    "dense-1": "dense", "dense1": "dense",
}


def preset(name: str, order: Optional[int] = None, *, block: int = 2,
           slots: int = 0, width: int = 0, inner: int = 1) -> TensorFormat:
    """Build one of the stock tensor formats.

    `block` sizes BCSR/CSB blocks, `slots` pins the ELL slot count (0 derives
    it from the data), `width` pins the hashed segment width, and `inner`
    sizes the dense inner split of the mode-generic format.
    """
    key = name.strip().lower()
    key = _PRESET_ALIASES.get(key, key)
    if key == "dense":
        n = order if order is not None else 1
        return simple_format([dense() for _ in range(n)], name="dense")
    if key == "dense-2":
        return simple_format([dense(), dense()], name="dense")
    if key == "dense-3":
        return simple_format([dense(), dense(), dense()], name="dense")
    if key == "sparse-vector":
        return simple_format([compressed()], name="sparse-vector")
    if key == "hash-vector":
        return simple_format([hashed()], name="hash-vector", hash_width=width)
    if key == "csr":
        return simple_format([dense(), compressed()], name="csr")
    if key == "csc":
        return simple_format([dense(), compressed()], mode_ordering=(1, 0), name="csc")
    if key == "dcsr":
        return simple_format([compressed(), compressed()], name="dcsr")
    if key == "coo-soa":
        return simple_format([compressed(unique=False), singleton()], name="coo-soa")
    if key == "coo-aos":
        return simple_format([compressed(unique=False), singleton()], name="coo-aos", aos=True)
    if key == "csf":
        return simple_format([compressed(), compressed(), compressed()], name="csf")
    if key == "coo-3":
        return simple_format(
            [compressed(unique=False), singleton(unique=False), singleton()], name="coo-3")
    if key == "coo-3-aos":
        return simple_format(
            [compressed(unique=False), singleton(unique=False), singleton()],
            name="coo-3-aos", aos=True)
    if key == "bcsr":
        if block < 1:
            raise FormatError("BCSR block size must be positive")
        return TensorFormat(
            2,
            (dense(), compressed(), dense(), dense()),
            (LevelRole("block", 0, block), LevelRole("block", 1, block),
             LevelRole("inner", 0, block), LevelRole("inner", 1, block)),
            (0, 1), name="bcsr", params=(("block", block),))
    if key == "csb":
        if block < 1:
            raise FormatError("CSB block size must be positive")
        return TensorFormat(
            2,
            (dense(), dense(), compressed(ordered=False, unique=False),
             singleton(ordered=False)),
            (LevelRole("block", 0, block), LevelRole("block", 1, block),
             LevelRole("inner", 0, block), LevelRole("inner", 1, block)),
            (0, 1), name="csb", params=(("block", block),))
    if key == "ell":
        return TensorFormat(
            2,
            (dense(), dense(), singleton()),
            (LevelRole("slot"), LevelRole("whole", 0), LevelRole("whole", 1)),
            (0, 1), name="ell", params=(("slots", slots),))
    if key == "dia":
        return TensorFormat(
            2,
            (dense(), range_level(), offset_level()),
            (LevelRole("diag"), LevelRole("whole", 0), LevelRole("whole", 1)),
            (0, 1), name="dia")
    if key == "mode-generic":
        if inner < 1:
            raise FormatError("mode-generic inner block size must be positive")
        return TensorFormat(
            3,
            (compressed(unique=False), singleton(), dense(), dense()),
            (LevelRole("whole", 0), LevelRole("block", 1, inner),
             LevelRole("inner", 1, inner), LevelRole("whole", 2)),
            (0, 1, 2), name="mode-generic", params=(("inner", inner),))
    raise FormatError(f"unknown format preset: {name!r}")


PRESET_NAMES = [
    "dense", "sparse-vector", "hash-vector", "csr", "csc", "dcsr",
    "coo-soa", "coo-aos", "bcsr", "ell", "dia", "csb",
    "csf", "coo-3", "mode-generic",
]


# ---------------------------------------------------------------------------
# coordinate lists

@dataclass
class CoordList:
    """Interchange list of ((coords...), value) pairs.

    canonical means sorted lexicographically with duplicates summed and exact
    zeros dropped.
    """

    dims: Coords
    entries: List[Entry] = field(default_factory=list)
    canonical: bool = False

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)


def canonicalize(data: CoordList) -> CoordList:
    merged: Dict[Coords, float] = {}
    for coords, value in data.entries:
        merged[coords] = merged.get(coords, 0.0) + value
    entries = [(c, v) for c, v in sorted(merged.items()) if v != 0.0]
    return CoordList(data.dims, entries, canonical=True)


def _check_bounds(data: CoordList) -> None:
    for coords, _ in data.entries:
        if len(coords) != len(data.dims):
            raise AssemblyError(f"coordinate {coords} does not match order {len(data.dims)}")
        for c, n in zip(coords, data.dims):
            if not (0 <= c < n):
                raise AssemblyError(f"coordinate {coords} outside dims {data.dims}")


def _next_pow2(x: int) -> int:
    w = 1
    while w < x:
        w *= 2
    return w


# ---------------------------------------------------------------------------
# tensor storage

class TensorStorage:
    """A tensor format instantiated with physical index arrays and values."""

    def __init__(self, fmt: TensorFormat, dims: Coords, levels: List[LevelStorage],
                 vals: List[float]):
        self.format = fmt
        self.dims = tuple(dims)
        self.levels = levels
        self.vals = vals

    @property
    def order(self) -> int:
        return self.format.order

    def nnz_stored(self) -> int:
        return sum(1 for _ in walk_paths(self))

    def __repr__(self):
        return (f"TensorStorage({self.format.name or self.format.describe()}, "
                f"dims={self.dims}, vals={len(self.vals)})")


def storage_tuple(fmt: TensorFormat, coords: Coords, aux) -> Coords:
    """Map logical coordinates to per-level storage coordinates.

    `aux` supplies data-dependent structural coordinates (DIA diagonal slots,
    ELL entry slots).
    """
    out = []
    for spec, role in zip(fmt.levels, fmt.roles):
        if role.part == "whole":
            out.append(coords[role.mode])
        elif role.part == "block":
            out.append(coords[role.mode] // role.factor)
        elif role.part == "inner":
            out.append(coords[role.mode] % role.factor)
        elif role.part == "diag":
            out.append(aux.diag_slot(coords))
        elif role.part == "slot":
            out.append(aux.ell_slot(coords))
        else:
            raise AssertionError(role.part)
    return tuple(out)


def logical_tuple(fmt: TensorFormat, storage_coords: Sequence[int]) -> Coords:
    """Inverse of storage_tuple: reconstruct logical coordinates."""
    coords = [0] * fmt.order
    for c, role in zip(storage_coords, fmt.roles):
        if role.part == "whole":
            coords[role.mode] = c
        elif role.part == "block":
            coords[role.mode] += c * role.factor
        elif role.part == "inner":
            coords[role.mode] += c
    return tuple(coords)


class _StructuralAux:
    """Data-derived structural coordinates used while assembling."""

    def __init__(self, fmt: TensorFormat, dims: Coords, data: CoordList,
                 diagonals: Optional[Sequence[int]] = None):
        self.fmt = fmt
        self.diag_index: Dict[int, int] = {}
        self.ell_slots: Dict[Coords, int] = {}
        self.num_slots = 0
        roles = {r.part for r in fmt.roles}
        if "diag" in roles:
            found = sorted({c[1] - c[0] for c, _ in data.entries})
            if diagonals is not None:
                declared = sorted(diagonals)
                extra = [d for d in found if d not in declared]
                if extra:
                    raise AssemblyError(
                        f"data has diagonals {extra} not in the declared set {declared}")
                found = declared
            self.diag_index = {d: i for i, d in enumerate(found)}
        if "slot" in roles:
            seen: Dict[int, int] = {}
            for coords, _ in sorted(data.entries):
                slot = seen.get(coords[0], 0)
                self.ell_slots[coords] = slot
                seen[coords[0]] = slot + 1
            declared = fmt.param("slots")
            self.num_slots = max(seen.values(), default=0)
            if declared:
                if self.num_slots > declared:
                    raise AssemblyError(
                        f"row with {self.num_slots} entries exceeds the declared "
                        f"slot count {declared}")
                self.num_slots = declared

    def diag_slot(self, coords: Coords) -> int:
        return self.diag_index[coords[1] - coords[0]]

    def ell_slot(self, coords: Coords) -> int:
        return self.ell_slots[coords]


def level_extent(fmt: TensorFormat, dims: Coords, k: int, aux=None,
                 hash_width: int = 0) -> int:
    """Coordinate extent of storage level k (the N of dense/range levels)."""
    role = fmt.roles[k]
    if role.part == "whole":
        return dims[role.mode]
    if role.part == "block":
        return -(-dims[role.mode] // role.factor)
    if role.part == "inner":
        return role.factor
    if role.part == "diag":
        return len(aux.diag_index) if aux is not None else 0
    if role.part == "slot":
        return aux.num_slots if aux is not None else fmt.param("slots")
    raise AssertionError(role.part)


def assemble(fmt: TensorFormat, dims: Sequence[int], data: CoordList,
             diagonals: Optional[Sequence[int]] = None) -> TensorStorage:
    """Build storage for `data` in format `fmt`.

    Input is canonicalized first unless some level accepts duplicates, in
    which case entries are kept as given (stably sorted into storage order).
    """
    dims = tuple(dims)
    if len(dims) != fmt.order:
        raise AssemblyError(f"dims {dims} do not match format order {fmt.order}")
    if data.dims != dims:
        data = CoordList(dims, list(data.entries), data.canonical)
    _check_bounds(data)

    all_unique = all(spec.props.unique for spec in fmt.levels)
    if all_unique and not data.canonical:
        data = canonicalize(data)

    aux = _StructuralAux(fmt, dims, data, diagonals)
    entries = [(storage_tuple(fmt, coords, aux), value) for coords, value in data.entries]
    # Stable sort on the ordered prefix of levels keeps deliberately unordered
    # levels (CSB blocks) in input order while duplicates stay adjacent.
    n_sorted = 0
    for spec in fmt.levels:
        if not spec.props.ordered:
            break
        n_sorted += 1
    entries.sort(key=lambda e: e[0][:n_sorted])

    nlv = len(fmt.levels)
    extents = [level_extent(fmt, dims, k, aux) for k in range(nlv)]
    width = fmt.hash_width
    levels: List[LevelStorage] = []
    shared_offset = sorted(aux.diag_index)  # DIA offsets, shared range/offset array

    crd_levels = [k for k, s in enumerate(fmt.levels)
                  if s.kind in (LevelKind.COMPRESSED, LevelKind.SINGLETON)]
    shared_crd: Optional[list] = [] if fmt.aos else None
    stride = len(crd_levels) if fmt.aos else 1

    range_n = 0
    for k, spec in enumerate(fmt.levels):
        kind = spec.kind
        if kind is LevelKind.DENSE:
            lv = LevelStorage(spec, n=extents[k])
        elif kind is LevelKind.RANGE:
            role = fmt.roles[k]
            lv = LevelStorage(spec, n=dims[role.mode], m=dims[1 - role.mode],
                              offset=shared_offset)
            range_n = lv.n
        elif kind is LevelKind.OFFSET:
            lv = LevelStorage(spec, offset=shared_offset, range_n=range_n)
        elif kind is LevelKind.HASHED:
            w = width or _next_pow2(max(4, 2 * extents[k]))
            lv = LevelStorage(spec, w=w)
        else:
            base = crd_levels.index(k) if fmt.aos else 0
            lv = LevelStorage(
                spec, crd=shared_crd if fmt.aos else [],
                crd_stride=stride, crd_base=base)
        levels.append(lv)

    # positions per entry per level, built top-down
    parent_pos = [0] * len(entries)
    size_prev = 1
    for k, spec in enumerate(fmt.levels):
        lv = levels[k]
        kind = spec.kind
        if kind in (LevelKind.DENSE, LevelKind.RANGE):
            for e in range(len(entries)):
                parent_pos[e] = parent_pos[e] * extents[k] + entries[e][0][k]
            size_prev = size_prev * extents[k]
        elif kind is LevelKind.OFFSET:
            pass  # branchless: positions unchanged
        elif kind is LevelKind.HASHED:
            lv.insert_init(size_prev, size_prev * lv.w)
            for e in range(len(entries)):
                seg = parent_pos[e]
                coord = entries[e][0][k]
                lv.insert_coord(seg * lv.w + coord % lv.w, coord)
                parent_pos[e] = lv.locate(seg, [coord])[0]
            size_prev = size_prev * lv.w
        elif kind is LevelKind.SINGLETON:
            # branchless: exactly one child per parent position, pad the rest
            lv.append_init(0, 0)
            by_parent: Dict[int, int] = {}
            for e in range(len(entries)):
                pp, coord = parent_pos[e], entries[e][0][k]
                prev = by_parent.setdefault(pp, coord)
                if prev != coord:
                    raise AssemblyError(
                        "singleton level received two children for one parent")
            for parent in range(size_prev):
                lv.append_coord(parent, by_parent.get(parent, 0))
            lv.append_finalize(size_prev, size_prev)
        else:  # compressed
            # Parents must be visited in ascending order even if an unordered
            # level (hashed) sits above; the sort is stable so sibling order
            # is preserved.
            pairs = sorted(range(len(entries)), key=lambda e: parent_pos[e])
            # A node exists per distinct (parent, chained coords); when the
            # chain of singletons below reaches the leaf, every entry is its
            # own chain so duplicates stay stored.
            t = k
            while t + 1 < nlv and fmt.levels[t + 1].kind is LevelKind.SINGLETON:
                t += 1
            chain_to_leaf = t == nlv - 1
            lv.append_init(size_prev, 0)
            node_of: Dict[tuple, int] = {}
            new_pos = [0] * len(entries)
            order_nodes: List[Tuple[int, int]] = []
            for e in pairs:
                key = (parent_pos[e], e) if chain_to_leaf \
                    else (parent_pos[e],) + entries[e][0][k:t + 1]
                node = node_of.get(key)
                if node is None:
                    node = node_of[key] = len(order_nodes)
                    order_nodes.append((parent_pos[e], entries[e][0][k]))
                new_pos[e] = node
            if spec.props.unique:
                for (p1, c1), (p2, c2) in zip(order_nodes, order_nodes[1:]):
                    if p1 == p2 and c1 == c2:
                        raise AssemblyError(
                            "duplicate coordinates in a level declared unique")
            counts: Dict[int, int] = {}
            for p, (parent, coord) in enumerate(order_nodes):
                lv.append_coord(p, coord)
                counts[parent] = counts.get(parent, 0) + 1
            done = 0
            for parent in range(size_prev):
                n_here = counts.get(parent, 0)
                lv.append_edges(parent, done, done + n_here)
                done += n_here
            lv.append_finalize(size_prev, done)
            size_prev = done
            parent_pos = new_pos

    vals = [0.0] * max(size_prev, 1)
    for e in range(len(entries)):
        vals[parent_pos[e]] += entries[e][1]
    return TensorStorage(fmt, dims, levels, vals)


def walk_paths(storage: TensorStorage):
    """Yield (storage_coords, position) for every labeled root-to-leaf path."""
    fmt = storage.format

    def rec(k: int, parent_pos: int, prefix: List[int]):
        if k == len(fmt.levels):
            yield tuple(prefix), parent_pos
            return
        lv = storage.levels[k]
        if lv.spec.value_iterable:
            lo, hi = lv.coord_bounds(prefix if prefix else [0])
            for c in range(lo, hi):
                p, found = lv.coord_access(parent_pos, prefix + [c])
                if found:
                    prefix.append(c)
                    yield from rec(k + 1, p, prefix)
                    prefix.pop()
        else:
            lo, hi = lv.pos_bounds(parent_pos)
            for p in range(lo, hi):
                c, found = lv.pos_access(p, prefix)
                if found:
                    prefix.append(c)
                    yield from rec(k + 1, p, prefix)
                    prefix.pop()

    yield from rec(0, 0, [])


def enumerate_storage(storage: TensorStorage) -> CoordList:
    """All stored components in storage order; duplicates are not merged.

    Padding that falls outside the logical dims (blocked formats) is skipped.
    """
    fmt = storage.format
    entries: List[Entry] = []
    for st_coords, p in walk_paths(storage):
        coords = logical_tuple(fmt, st_coords)
        if all(0 <= c < n for c, n in zip(coords, storage.dims)):
            entries.append((coords, storage.vals[p]))
    return CoordList(storage.dims, entries, canonical=False)


def densify(storage: TensorStorage) -> List[float]:
    """Row-major dense values with stored duplicates summed."""
    dims = storage.dims
    total = 1
    for n in dims:
        total *= n
    out = [0.0] * max(total, 1)
    for coords, value in enumerate_storage(storage).entries:
        idx = 0
        for c, n in zip(coords, dims):
            idx = idx * n + c
        out[idx] += value
    return out


def from_dense(fmt: TensorFormat, dims: Sequence[int], values: Sequence[float]) -> TensorStorage:
    dims = tuple(dims)
    entries = []

    def rec(k, coords, base):
        if k == len(dims):
            if values[base] != 0.0:
                entries.append((tuple(coords), values[base]))
            return
        for c in range(dims[k]):
            coords.append(c)
            rec(k + 1, coords, base * dims[k] + c)
            coords.pop()

    if dims:
        rec(0, [], 0)
    else:
        entries.append(((), values[0]))
    return assemble(fmt, dims, CoordList(dims, entries, canonical=True))


def convert(src: TensorStorage, dst: TensorFormat) -> TensorStorage:
    """Re-store src in format dst via an identity assignment."""
    from . import engine  # local import: engine depends on formats

    return engine.identity_copy(src, dst)
