"""Matrix Market / FROSTT tensor files, synthetic inputs, and the dense oracle.

The oracle evaluator materializes every operand densely and loops over the
complete iteration space with no sparsity logic at all, so it is independent
of the level/format machinery it is used to check.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import SparseLevelsError, ValidationError
from .formats import CoordList
from .notation import Access, Add, Assignment, Literal, Mul, accesses_of, vars_of


class FileFormatError(SparseLevelsError):
    """Malformed tensor file."""


@dataclass
class DenseTensor:
    """Row-major dense values; the oracle-side tensor representation."""

    dims: Tuple[int, ...]
    values: List[float]

    def __post_init__(self):
        total = 1
        for n in self.dims:
            total *= n
        if len(self.values) != total:
            raise ValueError(f"need {total} values for dims {self.dims}, "
                             f"got {len(self.values)}")

    @classmethod
    def zeros(cls, dims: Sequence[int]) -> "DenseTensor":
        total = 1
        for n in dims:
            total *= n
        return cls(tuple(dims), [0.0] * total)

    @classmethod
    def from_coords(cls, data: CoordList) -> "DenseTensor":
        out = cls.zeros(data.dims)
        for coords, value in data.entries:
            out[coords] = out[coords] + value
        return out

    def _index(self, coords: Sequence[int]) -> int:
        idx = 0
        for c, n in zip(coords, self.dims):
            idx = idx * n + c
        return idx

    def __getitem__(self, coords) -> float:
        return self.values[self._index(coords)]

    def __setitem__(self, coords, value: float) -> None:
        self.values[self._index(coords)] = value


# ---------------------------------------------------------------------------
# Matrix Market

_MTX_HEADER = "%%MatrixMarket"


def read_mtx(path: str) -> CoordList:
    """Read a coordinate-format Matrix Market file as a 0-based CoordList.

    Duplicate entries are preserved in file order; call canonicalize() to
    merge them.  Only general symmetry is accepted.
    """
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.readlines()
    if not lines or not lines[0].startswith(_MTX_HEADER):
        raise FileFormatError(f"{path}:1: missing MatrixMarket header")
    header = lines[0].split()
    if len(header) < 5:
        raise FileFormatError(f"{path}:1: incomplete header")
    _, objtype, fmt, valtype, symmetry = header[:5]
    if objtype.lower() != "matrix" or fmt.lower() != "coordinate":
        raise FileFormatError(f"{path}:1: only coordinate matrices are supported")
    valtype = valtype.lower()
    if valtype not in ("real", "integer", "pattern"):
        raise FileFormatError(f"{path}:1: unsupported value type {valtype!r}")
    if symmetry.lower() != "general":
        raise FileFormatError(
            f"{path}:1: symmetry {symmetry!r} is not supported; expand to general first")

    lineno = 1
    dims: Optional[Tuple[int, int]] = None
    declared_nnz = 0
    entries: List[Tuple[Tuple[int, ...], float]] = []
    for raw in lines[1:]:
        lineno += 1
        line = raw.strip()
        if not line or line.startswith("%"):
            continue
        parts = line.split()
        if dims is None:
            if len(parts) != 3:
                raise FileFormatError(f"{path}:{lineno}: expected 'rows cols nnz'")
            rows, cols, declared_nnz = (int(p) for p in parts)
            dims = (rows, cols)
            continue
        want = 2 if valtype == "pattern" else 3
        if len(parts) != want:
            raise FileFormatError(f"{path}:{lineno}: expected {want} fields")
        try:
            i, j = int(parts[0]) - 1, int(parts[1]) - 1
            v = 1.0 if valtype == "pattern" else float(parts[2])
        except ValueError as exc:
            raise FileFormatError(f"{path}:{lineno}: {exc}") from None
        if not (0 <= i < dims[0] and 0 <= j < dims[1]):
            raise FileFormatError(
                f"{path}:{lineno}: coordinate ({i + 1}, {j + 1}) outside {dims}")
        entries.append(((i, j), v))
    if dims is None:
        raise FileFormatError(f"{path}: missing size line")
    if len(entries) != declared_nnz:
        raise FileFormatError(
            f"{path}: header declares {declared_nnz} entries, found {len(entries)}")
    return CoordList(dims, entries, canonical=False)


def write_mtx(data: CoordList, path: str) -> None:
    if len(data.dims) != 2:
        raise FileFormatError("Matrix Market files store matrices (order 2)")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{data.dims[0]} {data.dims[1]} {len(data.entries)}\n")
        for (i, j), v in data.entries:
            fh.write(f"{i + 1} {j + 1} {v!r}\n")


# ---------------------------------------------------------------------------
# FROSTT .tns

def read_tns(path: str, dims: Optional[Sequence[int]] = None) -> CoordList:
    """Read a FROSTT-style tensor file: 1-based coordinates then a value.

    Without an explicit `dims`, extents default to the per-column maxima.
    """
    entries: List[Tuple[Tuple[int, ...], float]] = []
    order: Optional[int] = None
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 2:
                raise FileFormatError(f"{path}:{lineno}: need coordinates and a value")
            if order is None:
                order = len(parts) - 1
            elif len(parts) - 1 != order:
                raise FileFormatError(
                    f"{path}:{lineno}: expected {order} coordinates, got {len(parts) - 1}")
            try:
                coords = tuple(int(p) - 1 for p in parts[:-1])
                value = float(parts[-1])
            except ValueError as exc:
                raise FileFormatError(f"{path}:{lineno}: {exc}") from None
            if any(c < 0 for c in coords):
                raise FileFormatError(f"{path}:{lineno}: coordinates are 1-based")
            entries.append((coords, value))
    if order is None:
        order = len(dims) if dims is not None else 0
    if dims is not None:
        dims = tuple(dims)
        if len(dims) != order:
            raise FileFormatError(f"{path}: sidecar dims {dims} do not match order {order}")
        for coords, _ in entries:
            if any(c >= n for c, n in zip(coords, dims)):
                raise FileFormatError(f"{path}: coordinate {coords} outside dims {dims}")
    else:
        maxima = [0] * order
        for coords, _ in entries:
            for k, c in enumerate(coords):
                maxima[k] = max(maxima[k], c + 1)
        dims = tuple(maxima)
    return CoordList(dims, entries, canonical=False)


def write_tns(data: CoordList, path: str) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for coords, v in data.entries:
            fh.write(" ".join(str(c + 1) for c in coords) + f" {v!r}\n")


# ---------------------------------------------------------------------------
# synthetic inputs

def synth(kind: str, dims: Sequence[int], seed: int = 0, *, diagonals: int = 1,
          density: float = 0.1, row_fill: float = 0.1) -> CoordList:
    """Deterministic synthetic tensors.

    kinds: 'banded' fills `diagonals` diagonals densely (centered on the
    main diagonal); 'random' keeps each cell with probability `density`;
    'hypersparse' leaves most rows empty, filling a `row_fill` fraction.
    """
    rng = random.Random(seed)
    dims = tuple(dims)
    entries: List[Tuple[Tuple[int, ...], float]] = []
    if kind == "banded":
        rows, cols = dims
        offsets = _centered_offsets(diagonals)
        for d in offsets:
            lo, hi = max(0, -d), min(rows, cols - d)
            for i in range(lo, hi):
                entries.append(((i, i + d), rng.uniform(0.5, 2.0)))
        entries.sort(key=lambda e: e[0])
    elif kind == "random":
        def rec(prefix):
            if len(prefix) == len(dims):
                if rng.random() < density:
                    entries.append((tuple(prefix), rng.uniform(-2.0, 2.0)))
                return
            for c in range(dims[len(prefix)]):
                prefix.append(c)
                rec(prefix)
                prefix.pop()
        rec([])
    elif kind == "hypersparse":
        rows, cols = dims
        filled = max(1, int(rows * row_fill))
        for i in sorted(rng.sample(range(rows), filled)):
            k = rng.randint(1, max(1, cols // 4))
            for j in sorted(rng.sample(range(cols), k)):
                entries.append(((i, j), rng.uniform(-2.0, 2.0)))
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    return CoordList(dims, entries, canonical=True)


def _centered_offsets(k: int) -> List[int]:
    out = [0]
    step = 1
    while len(out) < k:
        out.append(step)
        if len(out) < k:
            out.append(-step)
        step += 1
    return sorted(out)


# ---------------------------------------------------------------------------
# dense brute-force oracle

def oracle_eval(assignment: Assignment, bindings: Dict[str, DenseTensor],
                var_extents: Optional[Dict[str, int]] = None) -> DenseTensor:
    """Evaluate by nested loops over every index variable extent.

    All operands are dense; reduction variables are summed; there is no
    sparsity logic of any kind.
    """
    if var_extents is None:
        var_extents = {}
        for acc in accesses_of(assignment.rhs):
            tensor = bindings[acc.tensor]
            for v, n in zip(acc.ivars, tensor.dims):
                if v in var_extents and var_extents[v] != n:
                    raise ValidationError(f"dimension mismatch for {v!r}")
                var_extents[v] = n

    out_vars = assignment.lhs.ivars
    out_dims = tuple(var_extents[v] for v in out_vars)
    result = DenseTensor.zeros(out_dims)
    all_vars = list(vars_of(assignment.rhs))
    env: Dict[str, int] = {}

    def value(expr) -> float:
        if isinstance(expr, Literal):
            return expr.value
        if isinstance(expr, Access):
            return bindings[expr.tensor][tuple(env[v] for v in expr.ivars)]
        if isinstance(expr, Add):
            return value(expr.left) + value(expr.right)
        if isinstance(expr, Mul):
            return value(expr.left) * value(expr.right)
        raise TypeError(type(expr))

    def loop(k: int):
        if k == len(all_vars):
            out_coords = tuple(env[v] for v in out_vars)
            result[out_coords] = result[out_coords] + value(assignment.rhs)
            return
        v = all_vars[k]
        for c in range(var_extents[v]):
            env[v] = c
            loop(k + 1)

    loop(0)
    return result
