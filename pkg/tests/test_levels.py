import random

import pytest

from sparselevels.errors import (
    AssemblyError,
    FormatError,
    HashSegmentFullError,
    UnsupportedCapabilityError,
)
from sparselevels.levels import (
    EMPTY,
    LevelKind,
    LevelStorage,
    compressed,
    dense,
    hashed,
    make_properties,
    offset_level,
    range_level,
    singleton,
)

ALL_KINDS = list(LevelKind)


def make_storage(kind):
    if kind is LevelKind.DENSE:
        return LevelStorage(dense(), n=4)
    if kind is LevelKind.RANGE:
        return LevelStorage(range_level(), n=4, m=6, offset=[0, -1])
    if kind is LevelKind.COMPRESSED:
        return LevelStorage(compressed(), pos=[0, 2], crd=[0, 1])
    if kind is LevelKind.SINGLETON:
        return LevelStorage(singleton(), crd=[0, 1])
    if kind is LevelKind.OFFSET:
        return LevelStorage(offset_level(), offset=[0, -1], range_n=4)
    if kind is LevelKind.HASHED:
        return LevelStorage(hashed(), w=4, crd=[EMPTY] * 4)
    raise AssertionError(kind)


# ---------------------------------------------------------------------------
# capability conformance: 6 kinds x 6 functions

SUPPORTED = {
    LevelKind.DENSE: {"coord_bounds", "coord_access", "locate", "size"},
    LevelKind.RANGE: {"coord_bounds", "coord_access"},
    LevelKind.COMPRESSED: {"pos_bounds", "pos_access"},
    LevelKind.SINGLETON: {"pos_bounds", "pos_access"},
    LevelKind.OFFSET: {"pos_bounds", "pos_access"},
    LevelKind.HASHED: {"pos_bounds", "pos_access", "locate", "size"},
}

CALLS = {
    "coord_bounds": lambda lv: lv.coord_bounds([0]),
    "coord_access": lambda lv: lv.coord_access(0, [0, 0]),
    "pos_bounds": lambda lv: lv.pos_bounds(0),
    "pos_access": lambda lv: lv.pos_access(0, [0]),
    "locate": lambda lv: lv.locate(0, [0, 0]),
    "size": lambda lv: lv.size(1),
}


@pytest.mark.parametrize("kind", ALL_KINDS)
@pytest.mark.parametrize("fn", sorted(CALLS))
def test_capability_conformance(kind, fn):
    lv = make_storage(kind)
    if fn in SUPPORTED[kind]:
        CALLS[fn](lv)
    else:
        with pytest.raises(UnsupportedCapabilityError):
            CALLS[fn](lv)


# ---------------------------------------------------------------------------
# property declarations

def test_fixed_property_violations_rejected():
    with pytest.raises(FormatError):
        make_properties(LevelKind.DENSE, full=False)
    with pytest.raises(FormatError):
        make_properties(LevelKind.RANGE, full=True)
    with pytest.raises(FormatError):
        make_properties(LevelKind.HASHED, ordered=True)
    with pytest.raises(FormatError):
        make_properties(LevelKind.SINGLETON, branchless=False)
    with pytest.raises(FormatError):
        make_properties(LevelKind.OFFSET, compact=True)
    with pytest.raises(FormatError):
        make_properties(LevelKind.COMPRESSED, branchless=True)


def test_configurable_properties():
    p = make_properties(LevelKind.COMPRESSED, unique=False, full=True)
    assert not p.unique and p.full and p.compact and not p.branchless
    p = make_properties(LevelKind.DENSE)
    assert p.full and p.compact and p.ordered and p.unique
    # redundant but consistent settings are accepted
    p = make_properties(LevelKind.SINGLETON, branchless=True)
    assert p.branchless


# ---------------------------------------------------------------------------
# coordinate value iteration

def test_coord_bounds_range():
    lv = LevelStorage(range_level(), n=4, m=6, offset=[0, -1])
    assert lv.coord_bounds([1]) == (1, 4)
    assert lv.coord_bounds([0]) == (0, 4)


def test_coord_bounds_dense():
    lv = LevelStorage(dense(), n=8)
    assert lv.coord_bounds([]) == (0, 8)
    assert lv.coord_bounds([3]) == (0, 8)


def test_coord_access_dense():
    lv = LevelStorage(dense(), n=6)
    assert lv.coord_access(3, [3, 4]) == (22, True)
    assert lv.coord_access(0, [0]) == (0, True)


def test_coord_access_range_against_enumeration():
    # Diagonal layout of a 4x6 matrix with offsets [-2,-1,0,1]: positions of
    # the row level are d*4 + i.  Brute-force enumerate all (d, i) pairs and
    # check the formula agrees.
    lv = LevelStorage(range_level(), n=4, m=6, offset=[-2, -1, 0, 1])
    positions = {}
    p = 0
    for d in range(4):
        for i in range(4):
            positions[(d, i)] = p
            p += 1
    for d in range(4):
        lo, hi = lv.coord_bounds([d])
        for i in range(lo, hi):
            assert lv.coord_access(d, [d, i]) == (positions[(d, i)], True)
    assert lv.coord_access(1, [1, 2]) == (6, True)


# ---------------------------------------------------------------------------
# coordinate position iteration

def test_pos_bounds_compressed():
    lv = LevelStorage(compressed(), pos=[0, 2, 4, 4, 7], crd=[0, 1, 0, 1, 1, 2, 4])
    assert lv.pos_bounds(1) == (2, 4)
    assert lv.pos_bounds(2) == (4, 4)


def test_pos_bounds_singleton_offset_hashed():
    assert LevelStorage(singleton(), crd=[0] * 9).pos_bounds(7) == (7, 8)
    assert LevelStorage(offset_level(), offset=[0], range_n=4).pos_bounds(7) == (7, 8)
    assert LevelStorage(hashed(), w=4, crd=[EMPTY] * 16).pos_bounds(2) == (8, 12)


def test_pos_access_offset():
    lv = LevelStorage(offset_level(), offset=[-2, -1, 0, 1], range_n=4)
    # position 7 belongs to diagonal 1 (7 // 4), parent coordinate 3
    assert lv.pos_access(7, [1, 3]) == (2, True)


def test_pos_access_hashed_and_compressed():
    lv = LevelStorage(hashed(), w=8, crd=[EMPTY, 1, EMPTY, 3, EMPTY, EMPTY, EMPTY, EMPTY])
    assert lv.pos_access(5, [])[1] is False
    assert lv.pos_access(1, []) == (1, True)
    lv = LevelStorage(compressed(), pos=[0, 4], crd=[0, 1, 0, 1])
    assert lv.pos_access(2, []) == (0, True)


# ---------------------------------------------------------------------------
# locate

def test_locate_dense():
    lv = LevelStorage(dense(), n=6)
    assert lv.locate(1, [1, 5]) == (11, True)


def test_locate_hashed_hit_and_miss():
    lv = LevelStorage(hashed(), w=4, crd=[EMPTY, 1, EMPTY, 3])
    assert lv.locate(0, [3]) == (3, True)
    pos, found = lv.locate(0, [2])
    assert (pos, found) == (-1, False)
    # oracle: exhaustive scan of the segment
    assert 2 not in lv.crd[0:4]


def test_locate_hashed_probe_wraps():
    # insertion order 3, 2, 6: the home slot of 6 (6 % 4 = 2) is taken, the
    # probe wraps past slot 3 and lands on slot 0
    lv = LevelStorage(hashed(), w=4)
    lv.insert_init(1, 4)
    for c in (3, 2, 6):
        lv.insert_coord(c % 4, c)
    assert lv.crd == [6, EMPTY, 2, 3]
    assert lv.locate(0, [6]) == (0, True)
    # full-segment scan terminates for an absent coordinate
    lv2 = LevelStorage(hashed(), w=4, crd=[0, 1, 2, 3])
    assert lv2.locate(0, [7]) == (-1, False)


# ---------------------------------------------------------------------------
# size

def test_size():
    assert LevelStorage(dense(), n=6).size(4) == 24
    assert LevelStorage(dense(), n=8).size(1) == 8
    assert LevelStorage(hashed(), w=16).size(3) == 48


# ---------------------------------------------------------------------------
# insert

def test_hashed_insert_init_fills_sentinel():
    lv = LevelStorage(hashed(), w=4)
    lv.insert_init(1, 4)
    assert lv.crd == [EMPTY] * 4


def test_hashed_insert_idempotent():
    lv = LevelStorage(hashed(), w=4)
    lv.insert_init(1, 4)
    lv.insert_coord(0, 1)
    lv.insert_coord(0, 1)
    assert lv.crd.count(1) == 1


def test_hashed_insert_linear_probe():
    lv = LevelStorage(hashed(), w=2)
    lv.insert_init(1, 2)
    lv.insert_coord(0, 0)
    lv.insert_coord(0, 2)
    assert lv.crd == [0, 2]


def test_hashed_insert_overflow():
    lv = LevelStorage(hashed(), w=2)
    lv.insert_init(1, 2)
    lv.insert_coord(0, 0)
    lv.insert_coord(0, 2)
    with pytest.raises(HashSegmentFullError):
        lv.insert_coord(0, 4)


def test_dense_insert_noops():
    lv = LevelStorage(dense(), n=4)
    lv.insert_init(1, 4)
    lv.insert_coord(2, 2)
    lv.insert_finalize(1, 4)


# ---------------------------------------------------------------------------
# append

def test_compressed_append_protocol():
    lv = LevelStorage(compressed())
    lv.append_init(4, 0)
    per_row = [[3, 5], [], [0, 4], [1, 2, 3]]
    p = 0
    for row, cols in enumerate(per_row):
        for c in cols:
            lv.append_coord(p, c)
            p += 1
        lv.append_edges(row, p - len(cols), p)
    lv.append_finalize(4, p)
    assert lv.pos == [0, 2, 2, 4, 7]
    # oracle: recompute pos from per-row counts
    expect = [0]
    for cols in per_row:
        expect.append(expect[-1] + len(cols))
    assert lv.pos == expect


def test_singleton_append():
    lv = LevelStorage(singleton())
    lv.append_init(4, 0)
    for p, c in enumerate([1, 3, 0, 1]):
        lv.append_coord(p, c)
    assert lv.crd == [1, 3, 0, 1]


def test_compressed_append_empty():
    lv = LevelStorage(compressed())
    lv.append_init(2, 0)
    lv.append_edges(0, 0, 0)
    lv.append_edges(1, 0, 0)
    assert lv.pos == [0, 0, 0]
    assert lv.crd == []


def test_append_edges_out_of_order_rejected():
    lv = LevelStorage(compressed())
    lv.append_init(3, 0)
    lv.append_edges(0, 0, 0)
    lv.append_edges(1, 0, 0)
    with pytest.raises(AssemblyError):
        lv.append_edges(1, 0, 0)
    with pytest.raises(AssemblyError):
        LevelStorage(compressed()).append_edges(1, 0, 0)


# ---------------------------------------------------------------------------
# property semantics over random storages

def iter_children(lv, parent_pos, prefix):
    """Enumerate (coord, pos) children of parent_pos through the level interface."""
    out = []
    if lv.spec.value_iterable:
        lo, hi = lv.coord_bounds(prefix)
        for c in range(lo, hi):
            p, found = lv.coord_access(parent_pos, list(prefix) + [c])
            if found:
                out.append((c, p))
    else:
        lo, hi = lv.pos_bounds(parent_pos)
        for p in range(lo, hi):
            c, found = lv.pos_access(p, prefix)
            if found:
                out.append((c, p))
    return out


def test_full_property_dense():
    lv = LevelStorage(dense(), n=7)
    coords = [c for c, _ in iter_children(lv, 3, [3])]
    assert coords == list(range(7))


def test_full_property_compressed_full_rows():
    # a compressed level declared full must enumerate every coordinate
    lv = LevelStorage(compressed(full=True), pos=[0, 5], crd=[0, 1, 2, 3, 4])
    coords = [c for c, _ in iter_children(lv, 0, [])]
    assert coords == list(range(5))


def test_ordered_unique_enumeration():
    rng = random.Random(7)
    for _ in range(50):
        n = rng.randint(0, 10)
        coords = sorted(rng.sample(range(20), n))
        lv = LevelStorage(compressed(), pos=[0, n], crd=list(coords))
        got = [c for c, _ in iter_children(lv, 0, [])]
        assert got == coords
        assert all(a < b for a, b in zip(got, got[1:]))


def test_ordered_nonunique_enumeration():
    lv = LevelStorage(compressed(unique=False), pos=[0, 4], crd=[0, 1, 1, 3])
    got = [c for c, _ in iter_children(lv, 0, [])]
    assert got == [0, 1, 1, 3]
    assert all(a <= b for a, b in zip(got, got[1:]))


def test_branchless_property():
    sing = LevelStorage(singleton(), crd=[5] * 20)
    off = LevelStorage(offset_level(), offset=[0], range_n=20)
    for p in range(20):
        assert sing.pos_bounds(p) == (p, p + 1)
        assert off.pos_bounds(p) == (p, p + 1)


def test_compact_property():
    lv = LevelStorage(compressed(), pos=[0, 3], crd=[2, 4, 6])
    for p in range(*lv.pos_bounds(0)):
        assert lv.pos_access(p, [])[1]
    sing = LevelStorage(singleton(), crd=[1, 2, 3])
    for p in range(3):
        assert sing.pos_access(p, [])[1]


def test_append_round_trip():
    rng = random.Random(13)
    for _ in range(50):
        rows = rng.randint(1, 5)
        per_row = [sorted(rng.choices(range(8), k=rng.randint(0, 6))) for _ in range(rows)]
        lv = LevelStorage(compressed(unique=False))
        lv.append_init(rows, 0)
        p = 0
        for r, cols in enumerate(per_row):
            start = p
            for c in cols:
                lv.append_coord(p, c)
                p += 1
            lv.append_edges(r, start, p)
        for r, cols in enumerate(per_row):
            got = [c for c, _ in iter_children(lv, r, [])]
            assert got == cols


def test_insert_round_trip():
    rng = random.Random(29)
    for _ in range(50):
        w = 16
        coords = rng.sample(range(40), rng.randint(0, 8))
        lv = LevelStorage(hashed(), w=w)
        lv.insert_init(1, w)
        for c in coords:
            lv.insert_coord((c % w), c)
        lv.insert_finalize(1, w)
        for c in coords:
            p, found = lv.locate(0, [c])
            assert found and lv.crd[p] == c
        for c in set(range(40)) - set(coords):
            assert lv.locate(0, [c])[1] is False
