"""Executable kernel contracts: a contract language, emulated number
formats, a kernel zoo with calibration triples, a conformance harness,
Freivalds matmul verification, and JSONL traces."""

__version__ = "0.1.0"
