from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..numerics import ShapeMismatch

__all__ = [
    "KernelError", "IndexOutOfBounds", "DimensionUnsupported", "ExceptionalValue", "ShapeMismatch",
    "KernelInput", "KernelOutput", "InvocationContext", "KernelImpl",
]


class KernelError(Exception):
    kind = "KERNEL_ERROR"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "message": str(self)}


class IndexOutOfBounds(KernelError, IndexError):
    kind = "INDEX_OUT_OF_BOUNDS"

    def __init__(self, index: int, bound: int):
        self.index, self.bound = int(index), int(bound)
        super().__init__(f"index {self.index} outside [0, {self.bound})")


class DimensionUnsupported(KernelError):
    kind = "DIMENSION_UNSUPPORTED"

    def __init__(self, dim: int, supported):
        self.dim, self.supported = int(dim), tuple(supported)
        super().__init__(f"head dimension {self.dim} not in {self.supported}")


class ExceptionalValue(KernelError, FloatingPointError):
    kind = "EXCEPTIONAL_VALUE"

    def __init__(self, position: int):
        self.position = int(position)
        super().__init__(f"non-finite input at flat position {self.position}")


@dataclass
class KernelInput:
    """Named tensors (already on their format's grid) plus op attributes."""

    tensors: dict[str, np.ndarray]
    formats: dict[str, str] = field(default_factory=dict)
    attributes: dict = field(default_factory=dict)

    def fmt(self, name: str, default: str = "FP32") -> str:
        return self.formats.get(name, default)


@dataclass
class KernelOutput:
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    exception: KernelError | None = None

    @property
    def y(self) -> np.ndarray:
        return self.tensors["y"]

    @property
    def raised(self) -> bool:
        return self.exception is not None


@dataclass(frozen=True)
class InvocationContext:
    """Per-call context.  ``seed`` feeds any emulated nondeterminism;
    ``schedule`` selects a block schedule for tunable kernels."""

    seed: int = 0
    schedule: int | None = None

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


@dataclass(frozen=True)
class KernelImpl:
    id: str
    kernel: str
    op_class: str
    calibration_state: str  # good | bad | baseline
    declared: dict = field(default_factory=dict, hash=False)
    entry: Callable[[KernelInput, InvocationContext], KernelOutput] = field(default=None, compare=False,
                                                                           hash=False, repr=False)
    description: str = ""

    def __call__(self, inp: KernelInput, ctx: InvocationContext | None = None) -> KernelOutput:
        return self.entry(inp, ctx or InvocationContext())

    def declared_json(self) -> str:
        return json.dumps(dict(self.declared), sort_keys=True)

    def to_dict(self) -> dict:
        return {"id": self.id, "kernel": self.kernel, "op_class": self.op_class,
                "calibration_state": self.calibration_state, "declared": dict(self.declared),
                "description": self.description}
