"""Deterministic smooth radial profiles for tests and the verify suite.

Profiles are defined as closed-form expressions with seeded coefficients and
evaluated on whatever grid is supplied, so the same continuum function can
be sampled at several resolutions for convergence studies.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .geometry import RadialGrid, RadialField

__all__ = [
    "bump",
    "random_smooth",
    "random_positive",
    "random_conformal_factor",
]


def bump(grid: RadialGrid, center: float = 1.0, width: float = 0.5, amp: float = 1.0) -> RadialField:
    return RadialField(grid, amp * np.exp(-((grid.r - center) / width) ** 2))


def _seeded_expression(seed: int, n_bumps: int, span: float) -> Callable[[np.ndarray], np.ndarray]:
    rng = np.random.default_rng(seed)
    amps = rng.uniform(-1.0, 1.0, n_bumps)
    centers = rng.uniform(0.2 * span, span, n_bumps)
    widths = rng.uniform(0.25 * span, 0.8 * span, n_bumps)

    def fn(r: np.ndarray) -> np.ndarray:
        out = np.zeros_like(r)
        for a, c, w in zip(amps, centers, widths):
            out += a * np.exp(-((r - c) / w) ** 2)
        return out

    return fn


def random_smooth(
    grid: RadialGrid, seed: int, n_bumps: int = 4, span: float = 2.0, amp: float = 1.0
) -> RadialField:
    """Sum of seeded Gaussian bumps; decays at infinity, smooth at the origin
    in the weak sense of having O(r) odd part (adequate for interior-window
    checks)."""
    fn = _seeded_expression(seed, n_bumps, span)
    return RadialField(grid, amp * fn(grid.r))


def random_positive(
    grid: RadialGrid, seed: int, floor: float = 1.0, amp: float = 0.3, span: float = 2.0
) -> RadialField:
    """Positive profile floor + amp * bumps, bounded away from zero."""
    fn = _seeded_expression(seed, 4, span)
    vals = floor + amp * fn(grid.r)
    return RadialField(grid, np.maximum(vals, 0.1 * floor))


def random_conformal_factor(grid: RadialGrid, seed: int, amp: float = 0.2) -> RadialField:
    """Small smooth log-conformal factor, decaying at both ends."""
    fn = _seeded_expression(seed, 3, 1.5)
    return RadialField(grid, amp * fn(grid.r))
