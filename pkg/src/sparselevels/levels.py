"""Per-dimension level formats and the level-function interface.

Tensor storage is a hierarchy of coordinates: level k holds the mode-k
coordinates and every root-to-leaf path is one stored component.  Each level
is stored by one of six kinds (dense, range, compressed, singleton, offset,
hashed) behind a fixed set of access functions (coordinate/position
iteration, locate) and assembly functions (insert, append).  Every other
module manipulates tensor dimensions only through this interface.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

from .errors import (
    AssemblyError,
    FormatError,
    HashSegmentFullError,
    UnsupportedCapabilityError,
)


class LevelKind(enum.Enum):
    DENSE = "dense"
    RANGE = "range"
    COMPRESSED = "compressed"
    SINGLETON = "singleton"
    OFFSET = "offset"
    HASHED = "hashed"


# Access and assembly capabilities per kind.
VALUE_ITERATION = frozenset({LevelKind.DENSE, LevelKind.RANGE})
POSITION_ITERATION = frozenset(
    {LevelKind.COMPRESSED, LevelKind.SINGLETON, LevelKind.OFFSET, LevelKind.HASHED}
)
LOCATE_CAPABLE = frozenset({LevelKind.DENSE, LevelKind.HASHED})
INSERT_CAPABLE = frozenset({LevelKind.DENSE, LevelKind.HASHED})
APPEND_CAPABLE = frozenset({LevelKind.COMPRESSED, LevelKind.SINGLETON})

EMPTY = -1  # sentinel marking an empty hashed bucket; never a valid coordinate


@dataclass(frozen=True)
class PropertySet:
    """The five level properties: full, ordered, unique, branchless, compact."""

    full: bool
    ordered: bool
    unique: bool
    branchless: bool
    compact: bool


# Per kind: fixed property values; None means configurable at declaration time.
_FIXED = {
    LevelKind.DENSE: dict(full=True, ordered=None, unique=None, branchless=False, compact=True),
    LevelKind.RANGE: dict(full=False, ordered=None, unique=None, branchless=False, compact=False),
    LevelKind.COMPRESSED: dict(full=None, ordered=None, unique=None, branchless=False, compact=True),
    LevelKind.SINGLETON: dict(full=None, ordered=None, unique=None, branchless=True, compact=True),
    LevelKind.OFFSET: dict(full=False, ordered=None, unique=None, branchless=True, compact=False),
    LevelKind.HASHED: dict(full=None, ordered=False, unique=None, branchless=False, compact=False),
}

# Defaults for configurable flags: full off, ordered/unique on.
_DEFAULTS = dict(full=False, ordered=True, unique=True)


def make_properties(kind: LevelKind, **flags) -> PropertySet:
    """Build a PropertySet for `kind`, checking flags against the fixed table.

    Configurable flags default to full=False, ordered=True, unique=True.
    Setting a non-configurable flag contrary to its fixed value is a
    declaration error.
    """
    fixed = _FIXED[kind]
    values = {}
    for name in ("full", "ordered", "unique", "branchless", "compact"):
        want = flags.pop(name, None)
        allowed = fixed[name]
        if allowed is None:
            values[name] = _DEFAULTS[name] if want is None else bool(want)
        else:
            if want is not None and bool(want) != allowed:
                raise FormatError(
                    f"{kind.value} level is always {name}={allowed}; cannot set {name}={want}"
                )
            values[name] = allowed
    if flags:
        raise FormatError(f"unknown property flags: {sorted(flags)}")
    return PropertySet(**values)


@dataclass(frozen=True)
class LevelSpec:
    """One level kind plus its configured property set."""

    kind: LevelKind
    props: PropertySet

    @property
    def value_iterable(self) -> bool:
        return self.kind in VALUE_ITERATION

    @property
    def position_iterable(self) -> bool:
        return self.kind in POSITION_ITERATION

    @property
    def locate_capable(self) -> bool:
        return self.kind in LOCATE_CAPABLE

    @property
    def insert_capable(self) -> bool:
        return self.kind in INSERT_CAPABLE

    @property
    def append_capable(self) -> bool:
        return self.kind in APPEND_CAPABLE

    def describe(self) -> str:
        tags = []
        for name, short in (("full", "f"), ("ordered", "o"), ("unique", "u")):
            default = _DEFAULTS[name] if _FIXED[self.kind][name] is None else _FIXED[self.kind][name]
            actual = getattr(self.props, name)
            if actual != default:
                tags.append(short if actual else "~" + short)
        return self.kind.value + (f"({','.join(tags)})" if tags else "")


def dense(**flags) -> LevelSpec:
    return LevelSpec(LevelKind.DENSE, make_properties(LevelKind.DENSE, **flags))


def range_level(**flags) -> LevelSpec:
    return LevelSpec(LevelKind.RANGE, make_properties(LevelKind.RANGE, **flags))


def compressed(**flags) -> LevelSpec:
    return LevelSpec(LevelKind.COMPRESSED, make_properties(LevelKind.COMPRESSED, **flags))


def singleton(**flags) -> LevelSpec:
    return LevelSpec(LevelKind.SINGLETON, make_properties(LevelKind.SINGLETON, **flags))


def offset_level(**flags) -> LevelSpec:
    return LevelSpec(LevelKind.OFFSET, make_properties(LevelKind.OFFSET, **flags))


def hashed(**flags) -> LevelSpec:
    return LevelSpec(LevelKind.HASHED, make_properties(LevelKind.HASHED, **flags))


class LevelStorage:
    """Physical storage for one coordinate hierarchy level.

    Which fields are meaningful depends on the kind:

      dense       n (dimension size)
      range       n, m (row/column extents), offset (shared diagonal offsets)
      compressed  pos, crd (+ crd_stride/crd_base for interleaved variants)
      singleton   crd (+ crd_stride/crd_base)
      offset      offset (shared with the governing range level), range_n
      hashed      crd (segments of width w; empty buckets hold -1), w

    Storage is mutable during assembly and treated as immutable afterwards;
    reads are safe to share across threads.
    """

    __slots__ = (
        "spec", "n", "m", "w", "pos", "crd", "offset",
        "crd_stride", "crd_base", "range_n", "_last_edge_parent",
    )

    def __init__(self, spec: LevelSpec, *, n: int = 0, m: int = 0, w: int = 0,
                 pos=None, crd=None, offset=None,
                 crd_stride: int = 1, crd_base: int = 0, range_n: int = 0):
        self.spec = spec
        self.n = n
        self.m = m
        self.w = w
        self.pos = pos if pos is not None else []
        self.crd = crd if crd is not None else []
        self.offset = offset if offset is not None else []
        self.crd_stride = crd_stride
        self.crd_base = crd_base
        self.range_n = range_n
        self._last_edge_parent = -1

    @property
    def kind(self) -> LevelKind:
        return self.spec.kind

    def _require(self, capability: frozenset, fn: str) -> None:
        if self.kind not in capability:
            raise UnsupportedCapabilityError(f"{self.kind.value} level does not support {fn}")

    def _read_crd(self, p: int) -> int:
        return self.crd[p * self.crd_stride + self.crd_base]

    def _write_crd(self, p: int, coord: int) -> None:
        idx = p * self.crd_stride + self.crd_base
        if idx == len(self.crd):
            self.crd.append(coord)
        else:
            while len(self.crd) <= idx:
                self.crd.append(EMPTY)
            self.crd[idx] = coord

    # -- access: coordinate value iteration -------------------------------

    def coord_bounds(self, prefix: Sequence[int]) -> Tuple[int, int]:
        """Bounds of the coordinate interval encoded under `prefix` ancestors."""
        kind = self.kind
        if kind is LevelKind.DENSE:
            return 0, self.n
        if kind is LevelKind.RANGE:
            off = self.offset[prefix[-1]]
            return max(0, -off), min(self.n, self.m - off)
        self._require(VALUE_ITERATION, "coord_bounds")
        raise AssertionError

    def coord_access(self, parent_pos: int, coords: Sequence[int]) -> Tuple[int, bool]:
        """Position of the child encoding coords[-1]; found is always true here."""
        kind = self.kind
        if kind is LevelKind.DENSE or kind is LevelKind.RANGE:
            return parent_pos * self.n + coords[-1], True
        self._require(VALUE_ITERATION, "coord_access")
        raise AssertionError

    # -- access: coordinate position iteration -----------------------------

    def pos_bounds(self, parent_pos: int) -> Tuple[int, int]:
        """Bounds of the position interval whose entries may be children of parent_pos."""
        kind = self.kind
        if kind is LevelKind.COMPRESSED:
            return self.pos[parent_pos], self.pos[parent_pos + 1]
        if kind is LevelKind.SINGLETON or kind is LevelKind.OFFSET:
            return parent_pos, parent_pos + 1
        if kind is LevelKind.HASHED:
            return parent_pos * self.w, (parent_pos + 1) * self.w
        self._require(POSITION_ITERATION, "pos_bounds")
        raise AssertionError

    def pos_access(self, p: int, prefix: Sequence[int]) -> Tuple[int, bool]:
        """Coordinate encoded at position p, or found=false for an empty bucket."""
        kind = self.kind
        if kind is LevelKind.COMPRESSED or kind is LevelKind.SINGLETON:
            return self._read_crd(p), True
        if kind is LevelKind.OFFSET:
            # The governing diagonal is recovered from the position: the
            # enclosing range level lays out range_n positions per diagonal.
            return prefix[-1] + self.offset[p // self.range_n], True
        if kind is LevelKind.HASHED:
            c = self.crd[p]
            return c, c != EMPTY
        self._require(POSITION_ITERATION, "pos_access")
        raise AssertionError

    # -- access: locate -----------------------------------------------------

    def locate(self, parent_pos: int, coords: Sequence[int]) -> Tuple[int, bool]:
        """Random access: position of coords[-1] among parent_pos's children."""
        kind = self.kind
        if kind is LevelKind.DENSE:
            return parent_pos * self.n + coords[-1], True
        if kind is LevelKind.HASHED:
            coord = coords[-1]
            base = parent_pos * self.w
            for step in range(self.w):
                p = base + (coord + step) % self.w
                c = self.crd[p]
                if c == coord:
                    return p, True
                if c == EMPTY:
                    return -1, False
            return -1, False
        self._require(LOCATE_CAPABLE, "locate")
        raise AssertionError

    # -- assembly: insert ----------------------------------------------------

    def size(self, parent_size: int) -> int:
        """Level size as a function of the parent level's size (insert-capable kinds)."""
        kind = self.kind
        if kind is LevelKind.DENSE:
            return parent_size * self.n
        if kind is LevelKind.HASHED:
            return parent_size * self.w
        self._require(INSERT_CAPABLE, "size")
        raise AssertionError

    def appended_size(self) -> int:
        """Number of coordinates appended so far (append-capable kinds)."""
        self._require(APPEND_CAPABLE, "appended_size")
        if self.crd_stride == 1:
            return len(self.crd)
        return len(self.crd) // self.crd_stride

    def insert_init(self, parent_size: int, size: int) -> None:
        kind = self.kind
        if kind is LevelKind.DENSE:
            return
        if kind is LevelKind.HASHED:
            self.crd = [EMPTY] * size
            return
        self._require(INSERT_CAPABLE, "insert_init")

    def insert_coord(self, p: int, coord: int) -> None:
        """Insert a coordinate; hashed levels probe from the home slot.

        Idempotent: inserting a coordinate already present is a no-op.
        """
        kind = self.kind
        if kind is LevelKind.DENSE:
            return
        if kind is LevelKind.HASHED:
            base = (p // self.w) * self.w
            for step in range(self.w):
                q = base + (coord + step) % self.w
                c = self.crd[q]
                if c == coord:
                    return
                if c == EMPTY:
                    self.crd[q] = coord
                    return
            raise HashSegmentFullError(
                f"hashed segment of width {self.w} is full; cannot insert coordinate {coord}"
            )
        self._require(INSERT_CAPABLE, "insert_coord")

    def insert_finalize(self, parent_size: int, size: int) -> None:
        if self.kind in INSERT_CAPABLE:
            return
        self._require(INSERT_CAPABLE, "insert_finalize")

    # -- assembly: append ----------------------------------------------------

    def append_init(self, parent_size: int, size: int) -> None:
        kind = self.kind
        if kind is LevelKind.COMPRESSED:
            # parent_size 0 means "unknown"; pos then grows edge by edge.
            self.pos = [0] * (parent_size + 1)
            if self.crd_stride == 1:  # interleaved crd arrays are shared
                self.crd = []
            self._last_edge_parent = -1
            return
        if kind is LevelKind.SINGLETON:
            if self.crd_stride == 1:
                self.crd = []
            return
        self._require(APPEND_CAPABLE, "append_init")

    def append_coord(self, p: int, coord: int) -> None:
        kind = self.kind
        if kind is LevelKind.COMPRESSED or kind is LevelKind.SINGLETON:
            self._write_crd(p, coord)
            return
        self._require(APPEND_CAPABLE, "append_coord")

    def append_edges(self, parent_pos: int, pbegin: int, pend: int) -> None:
        """Connect positions [pbegin, pend) to parent_pos.

        Callers invoke this once per parent position, in ascending order.
        """
        kind = self.kind
        if kind is LevelKind.COMPRESSED:
            if parent_pos <= self._last_edge_parent:
                raise AssemblyError(
                    f"append_edges parent position regressed: {parent_pos} after "
                    f"{self._last_edge_parent}"
                )
            if parent_pos != self._last_edge_parent + 1:
                raise AssemblyError(
                    f"append_edges skipped parent positions between "
                    f"{self._last_edge_parent} and {parent_pos}"
                )
            if parent_pos + 1 < len(self.pos):
                self.pos[parent_pos + 1] = pend
            else:
                self.pos.append(pend)
            self._last_edge_parent = parent_pos
            return
        if kind is LevelKind.SINGLETON:
            return
        self._require(APPEND_CAPABLE, "append_edges")

    def append_finalize(self, parent_size: int, size: int) -> None:
        if self.kind in APPEND_CAPABLE:
            return
        self._require(APPEND_CAPABLE, "append_finalize")


def pop_appended(level: LevelStorage) -> None:
    """Roll back the most recent append_coord (engine-internal helper)."""
    del level.crd[len(level.crd) - level.crd_stride:]
