"""Sparse tensor algebra over composable per-dimension level formats.

Tensor formats are compositions of six level kinds behind a fixed
capability/property interface.  Index-notation expressions are evaluated
directly over any mix of formats (interpreter) or lowered to specialized C
kernels with the level functions inlined (code generator).
"""

from .errors import (
    AssemblyError,
    CodegenError,
    CycleError,
    FormatError,
    HashSegmentFullError,
    NotationError,
    SparseLevelsError,
    UnsupportedCapabilityError,
    UnsupportedMergeError,
    UnsupportedOutputError,
    ValidationError,
)
from .levels import LevelKind, LevelSpec, LevelStorage, PropertySet, make_properties
from .formats import (
    CoordList,
    TensorFormat,
    TensorStorage,
    assemble,
    canonicalize,
    convert,
    densify,
    enumerate_storage,
    preset,
)
from .notation import parse, pretty, validate
from .engine import evaluate, EvalStats
from .io import DenseTensor, oracle_eval, read_mtx, read_tns, synth, write_mtx, write_tns

__all__ = [
    "AssemblyError", "CodegenError", "CycleError", "FormatError",
    "HashSegmentFullError", "NotationError", "SparseLevelsError",
    "UnsupportedCapabilityError", "UnsupportedMergeError",
    "UnsupportedOutputError", "ValidationError",
    "LevelKind", "LevelSpec", "LevelStorage", "PropertySet", "make_properties",
    "CoordList", "TensorFormat", "TensorStorage", "assemble", "canonicalize",
    "convert", "densify", "enumerate_storage", "preset",
    "parse", "pretty", "validate",
    "evaluate", "EvalStats",
    "DenseTensor", "oracle_eval", "read_mtx", "read_tns", "synth",
    "write_mtx", "write_tns",
]
