"""
Blowup Lab, a numerical laboratory for large radial solutions of elliptic equations with convection
Copyright (C) 2026 Blowup Lab contributors

This program is free software; you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation; either version 2 of the License, or
(at your option) any later version.

This program is distributed in the hope that it will be useful,
but WITHOUT ANY WARRANTY; without even the implied warranty of
MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
GNU General Public License for more details.

You should have received a copy of the GNU General Public License along
with this program; if not, write to the Free Software Foundation, Inc.,
51 Franklin Street, Fifth Floor, Boston, MA 02110-1301 USA.
"""

from __future__ import annotations

import math
import warnings
from collections.abc import Callable
from typing import Any, NamedTuple

import numpy as np

from blowuplab.errors import NumericalFailure, NumericalWarning
from blowuplab.exprdsl import DomainError

GAUSS_ORDER = 10
LOCAL_GAUSS_ORDER = 16
MAX_DEPTH = 48
MAX_PANELS = 50_000

# Geometric block tests
DECAY_RATIO = 0.95
DECAY_WINDOW = 8

_NODES, _WEIGHTS = np.polynomial.legendre.leggauss(GAUSS_ORDER)
_LOCAL_NODES, _LOCAL_WEIGHTS = np.polynomial.legendre.leggauss(LOCAL_GAUSS_ORDER)

Integrand = Callable[[np.ndarray], Any]


class QuadratureFailure(NumericalFailure):
    """Raised when an integral does not reach its tolerance within the bisection budget."""


class BlockSeries(NamedTuple):
    converged: bool
    value: float
    blocks: list[float]
    ratios: list[float]


def gauss_panel(integrand: Integrand, a: float, b: float) -> float:
    """Fixed-order Gauss-Legendre estimate of the integral over one panel."""
    return _gauss(integrand, a, b, _NODES, _WEIGHTS)


def gauss_local(integrand: Integrand, a: Any, b: Any) -> Any:
    """16-point Gauss-Legendre rule, vectorized over arrays of panel endpoints."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    half = 0.5 * (b - a)
    points = (0.5 * (a + b))[..., None] + half[..., None] * _LOCAL_NODES
    values = np.asarray(integrand(points), dtype=float)
    _require_finite(values, float(np.min(a)), float(np.max(b)))
    result = half * (values @ _LOCAL_WEIGHTS)
    return float(result) if result.ndim == 0 else result


def _gauss(integrand: Integrand, a: float, b: float, nodes: np.ndarray, weights: np.ndarray) -> float:
    half = 0.5 * (b - a)
    values = np.asarray(integrand(0.5 * (a + b) + half * nodes), dtype=float)
    _require_finite(values, a, b)
    return float(half * np.dot(weights, values))


def _require_finite(values: np.ndarray, a: float, b: float) -> None:
    if not np.all(np.isfinite(values)):
        raise DomainError(f"Integrand is not finite on [{a!r}, {b!r}]")


def adaptive_integrate(integrand: Integrand, a: float, b: float, tol: float) -> float:
    """Integrates a vectorized integrand over [a, b] to relative accuracy `tol`.

    Panels are bisected until the 10-point Gauss estimate of a panel agrees with the sum of
    its halves. Panels carrying a negligible share of the first estimate are accepted
    against that share instead of their own size.

    Raises:
        QuadratureFailure: If a panel needs more than MAX_DEPTH bisections, or the panel
            count exceeds MAX_PANELS.
    """
    if not a < b:
        if a == b:
            return 0.0
        raise ValueError(f"Invalid interval: [{a}, {b}]. Lower limit must not exceed upper limit")

    whole = gauss_panel(integrand, a, b)
    floor_density = 1e-3 * abs(whole) / (b - a)
    accepted: list[tuple[float, float]] = []
    stack = [(a, b, whole, 0)]
    while stack:
        left, right, estimate, depth = stack.pop()
        middle = 0.5 * (left + right)
        first = gauss_panel(integrand, left, middle)
        second = gauss_panel(integrand, middle, right)
        refined = first + second
        scale = max(abs(refined), floor_density * (right - left))
        if abs(refined - estimate) <= tol * scale or abs(refined - estimate) <= 1e-300:
            accepted.append((left, refined))
            continue
        if depth + 1 > MAX_DEPTH:
            raise QuadratureFailure(
                f"Quadrature tolerance {tol} not met on [{left!r}, {right!r}] within {MAX_DEPTH} bisections"
            )
        if len(accepted) + len(stack) > MAX_PANELS:
            raise QuadratureFailure(f"Quadrature on [{a!r}, {b!r}] exceeded {MAX_PANELS} panels")
        stack.append((middle, right, second, depth + 1))
        stack.append((left, middle, first, depth + 1))

    accepted.sort()
    return math.fsum(value for _, value in accepted)


def sum_geometric_blocks(
    block: Callable[[int], float],
    max_blocks: int,
    tol: float,
    decay_ratio: float = DECAY_RATIO,
    window: int = DECAY_WINDOW,
) -> BlockSeries:
    """Sums block(0) + block(1) + ... for blocks expected to decay geometrically.

    The series is declared divergent once `window` consecutive ratios |b_k / b_(k-1)| are
    at least `decay_ratio`. It is converged once the last `window` ratios are below
    `decay_ratio` and the geometric remainder estimate is within `tol` of the sum, or
    the extrapolated value has settled. The returned value includes the remainder.
    """
    blocks: list[float] = []
    ratios: list[float] = []
    history: list[float] = []
    for k in range(max_blocks):
        current = float(block(k))
        blocks.append(current)
        total = math.fsum(blocks)
        if k == 0:
            continue

        previous = blocks[-2]
        if previous == 0.0:
            ratios.append(0.0 if current == 0.0 else math.inf)
        else:
            ratios.append(abs(current / previous))

        if current == 0.0 and previous == 0.0:
            return BlockSeries(True, total, blocks, ratios)
        if len(ratios) < window:
            continue

        recent = ratios[-window:]
        if all(ratio >= decay_ratio for ratio in recent):
            return BlockSeries(False, total, blocks, ratios)
        if all(ratio < decay_ratio for ratio in recent):
            rho = max(ratios[-2:])
            remainder = current * rho / (1.0 - rho)
            extrapolated = total + remainder
            history.append(extrapolated)
            if abs(remainder) <= tol * abs(total):
                return BlockSeries(True, extrapolated, blocks, ratios)
            if len(history) >= 3 and all(
                abs(history[-1] - earlier) <= tol * abs(history[-1]) for earlier in history[-3:-1]
            ):
                return BlockSeries(True, extrapolated, blocks, ratios)
        else:
            history.clear()

    recent = ratios[-window:]
    if recent and all(ratio < decay_ratio for ratio in recent):
        warnings.warn(
            f"Block budget of {max_blocks} exhausted before the remainder met tolerance {tol}; "
            "reporting the geometric extrapolation",
            NumericalWarning,
        )
        return BlockSeries(True, history[-1] if history else math.fsum(blocks), blocks, ratios)

    warnings.warn(
        f"Blocks neither decayed nor stalled within {max_blocks} blocks; treating the series as divergent",
        NumericalWarning,
    )
    return BlockSeries(False, math.fsum(blocks), blocks, ratios)
