"""Deterministic seed derivation for reproducible multi-stage pipelines.

A single master seed fans out to independent child seeds, one per
(module, run, ...) label path, using a splitmix64 chain. The derivation is
pure integer arithmetic, so the same master seed and labels produce the
same child seed on any platform, and child streams never depend on the
order in which other children are created.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def splitmix64(state: int) -> int:
    """One splitmix64 step: maps a 64-bit state to a well-mixed 64-bit value."""
    z = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _fnv1a(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def derive_seed(master: int, *labels) -> int:
    """Derive a child seed from a master seed and a label path.

    Labels may be strings or integers; they are folded into the splitmix64
    chain one at a time, so ("twin", 3) and ("twin3",) give distinct seeds.
    """
    state = splitmix64(master & _MASK64)
    for label in labels:
        state = splitmix64(state ^ _fnv1a(str(label).encode("utf-8")))
    return state


def child_rng(master: int, *labels) -> np.random.Generator:
    """A numpy Generator seeded by ``derive_seed(master, *labels)``."""
    return np.random.default_rng(derive_seed(master, *labels))
