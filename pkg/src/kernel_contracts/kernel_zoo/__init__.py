"""CPU kernels with good, bad and baseline variants per contract class."""

from . import kernels
from .base import (
    DimensionUnsupported,
    ExceptionalValue,
    IndexOutOfBounds,
    InvocationContext,
    KernelError,
    KernelImpl,
    KernelInput,
    KernelOutput,
)
from .registry import REGISTRY, STATES, TRIPLES, UnknownImpl, get_impl, list_impls, smoke_test, triple_for

__all__ = [
    "kernels", "KernelError", "IndexOutOfBounds", "DimensionUnsupported", "ExceptionalValue",
    "KernelInput", "KernelOutput", "InvocationContext", "KernelImpl",
    "REGISTRY", "STATES", "TRIPLES", "UnknownImpl", "get_impl", "list_impls", "smoke_test", "triple_for",
]
