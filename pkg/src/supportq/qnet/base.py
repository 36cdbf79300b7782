"""Shared pieces of the scorer backends."""

from __future__ import annotations

import numpy as np


class BackendMismatch(TypeError):
    """Operation requires the other scorer backend."""


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], scale: float, dtype) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape).astype(dtype)


def argmax_smallest_id(values: np.ndarray) -> int:
    """Strategy id (1-based) of the maximum entry; ties go to the smallest id."""
    return int(np.argmax(values)) + 1
