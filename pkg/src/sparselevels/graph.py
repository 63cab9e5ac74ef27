"""Iteration graphs: ordering index variables so every tensor path descends.

Each tensor access contributes a path of loop variables, one per storage
level of its format.  Blocked formats split a logical variable into a block
part and an inner part (shared between accesses when the split factor
agrees); diagonal and slot levels contribute structural variables private to
the access.  The variable order is the first topological order of the union
of path constraints, breaking ties by first appearance in the expression.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import CycleError, UnsupportedMergeError
from .formats import TensorFormat
from .notation import Access, CheckedExpr


@dataclass(frozen=True)
class LoopVar:
    """One loop in the eventual loop nest.

    kind 'whole' iterates a logical variable directly; 'block'/'inner' are the
    two halves of a split variable (logical = block * factor + inner);
    'struct' variables are private structural dimensions (diagonals, slots).
    """

    name: str
    kind: str = "whole"
    base: str = ""      # the logical variable this contributes to ('' for struct)
    factor: int = 1     # block multiplier for 'block' vars

    def __str__(self):
        return self.name


@dataclass
class TensorPath:
    access: Access
    vars: Tuple[LoopVar, ...]   # one per storage level, in storage order


@dataclass
class IterationGraph:
    paths: List[TensorPath]
    loop_vars: List[LoopVar]            # all loop vars (unordered collection)
    var_order: Tuple[LoopVar, ...]      # resolved total order
    resolve_at: Dict[str, LoopVar]      # logical var -> loop var that completes it
    edges: List[Tuple[LoopVar, LoopVar]]

    def order_names(self) -> Tuple[str, ...]:
        return tuple(v.name for v in self.var_order)

    def describe(self) -> str:
        lines = [f"order: {' '.join(self.order_names())}"]
        for path in self.paths:
            chain = " -> ".join(v.name for v in path.vars) or "(scalar)"
            lines.append(f"{path.access.tensor}: {chain}")
        return "\n".join(lines)


def path_vars(access: Access, fmt: TensorFormat, splits: Dict[str, int]) -> Tuple[LoopVar, ...]:
    """Loop variables for one access, one per storage level."""
    out: List[LoopVar] = []
    struct_n = 0
    for role in fmt.roles:
        if role.part == "whole":
            v = access.ivars[role.mode]
            if v in splits:
                raise UnsupportedMergeError(
                    f"variable {v!r} is blocked with factor {splits[v]} in another "
                    f"access but {access.tensor} stores it unsplit; no sound merge")
            out.append(LoopVar(v, "whole", v))
        elif role.part == "block":
            v = access.ivars[role.mode]
            out.append(LoopVar(f"{v}.b{role.factor}", "block", v, role.factor))
        elif role.part == "inner":
            v = access.ivars[role.mode]
            out.append(LoopVar(f"{v}.i{role.factor}", "inner", v, role.factor))
        else:  # diag / slot: structural, private to this access
            struct_n += 1
            out.append(LoopVar(f"{role.part}${access.tensor}{access.uid}",
                               "struct"))
    return tuple(out)


def build(checked: CheckedExpr, bindings: Dict[str, Tuple[TensorFormat, Sequence[int]]],
          out_format: Optional[TensorFormat] = None) -> IterationGraph:
    """Build the iteration graph for a checked expression.

    The result path participates unless the output format is structured, in
    which case the result is assembled out of loop order and imposes no
    ordering constraints.
    """
    splits: Dict[str, int] = {}

    def scan_split(access: Access, fmt: TensorFormat):
        for role in fmt.roles:
            if role.part == "block":
                v = access.ivars[role.mode]
                prior = splits.setdefault(v, role.factor)
                if prior != role.factor:
                    raise UnsupportedMergeError(
                        f"variable {v!r} is blocked with factors {prior} and "
                        f"{role.factor} in different accesses; no sound merge")

    for acc in checked.accesses:
        scan_split(acc, bindings[acc.tensor][0])
    if out_format is not None and not out_format.structured:
        pass  # whole-variable outputs never split
    elif out_format is not None and out_format.structured:
        out_format = None  # assembled via reordering; no constraints

    paths: List[TensorPath] = []
    for acc in checked.accesses:
        fmt = bindings[acc.tensor][0]
        paths.append(TensorPath(acc, path_vars(acc, fmt, splits)))
    if out_format is not None:
        paths.append(TensorPath(checked.output,
                                path_vars(checked.output, out_format, splits)))

    # collect loop vars; whole vars that were split elsewhere are rejected in
    # path_vars, so remaining whole vars are genuinely unsplit
    by_name: Dict[str, LoopVar] = {}
    appearance: List[str] = []

    def note(v: LoopVar):
        if v.name not in by_name:
            by_name[v.name] = v
            appearance.append(v.name)

    # logical variables that some access splits still need both halves even if
    # another access resolves them by locate only
    for path in paths:
        for v in path.vars:
            note(v)
    # logical vars accessed only by locate-riders (e.g. dense operands of a
    # blocked product) would be missing; give them whole loop vars
    for v in checked.appearance:
        if v in splits:
            continue
        if v not in by_name:
            note(LoopVar(v, "whole", v))

    edges: List[Tuple[LoopVar, LoopVar]] = []
    seen_edges = set()
    for path in paths:
        for a, b in zip(path.vars, path.vars[1:]):
            if a.name == b.name:
                continue
            key = (a.name, b.name)
            if key not in seen_edges:
                seen_edges.add(key)
                edges.append((a, b))
    # a block var always precedes its inner var even when separated
    for v in splits:
        a, b = by_name.get(f"{v}.b{splits[v]}"), by_name.get(f"{v}.i{splits[v]}")
        if a and b and (a.name, b.name) not in seen_edges:
            seen_edges.add((a.name, b.name))
            edges.append((a, b))

    order = order_vars(list(by_name.values()), edges, appearance)

    resolve_at: Dict[str, LoopVar] = {}
    for v in order:
        if v.kind == "whole":
            resolve_at[v.base] = v
        elif v.kind == "inner":
            resolve_at[v.base] = v

    return IterationGraph(paths, list(by_name.values()), order, resolve_at, edges)


def order_vars(vars_: List[LoopVar], edges: List[Tuple[LoopVar, LoopVar]],
               appearance: List[str]) -> Tuple[LoopVar, ...]:
    """Topological order with deterministic tie-break by first appearance."""
    rank = {name: i for i, name in enumerate(appearance)}
    indeg: Dict[str, int] = {v.name: 0 for v in vars_}
    succ: Dict[str, List[str]] = {v.name: [] for v in vars_}
    for a, b in edges:
        succ[a.name].append(b.name)
        indeg[b.name] += 1
    by_name = {v.name: v for v in vars_}
    ready = sorted([n for n, d in indeg.items() if d == 0],
                   key=lambda n: rank.get(n, len(rank)))
    out: List[LoopVar] = []
    while ready:
        n = ready.pop(0)
        out.append(by_name[n])
        for m in succ[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                ready.append(m)
        ready.sort(key=lambda x: rank.get(x, len(rank)))
    if len(out) != len(vars_):
        cycle = [n for n, d in indeg.items() if d > 0]
        raise CycleError(
            "tensor paths impose a cyclic variable order "
            f"(involving {', '.join(sorted(cycle))}); change a tensor's mode "
            "ordering to break the cycle", cycle)
    return tuple(out)
