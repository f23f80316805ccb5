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

import csv
import math
from pathlib import Path
from typing import Any, Literal, NamedTuple

import numpy as np
from scipy.sparse import diags, identity, kron
from scipy.sparse.linalg import spsolve

from blowuplab.errors import NumericalFailure
from blowuplab.exprdsl import ExprAst, derivative_estimate, eval_expr
from blowuplab.transform import OutOfRange, ProblemSpec, RadialProfile

JSON = dict[str, Any]
Init = Literal["radial", "perturbed"]

MIN_RINGS = 8
MIN_ANGLES = 8
LINE_SEARCH_HALVINGS = 30
MONOTONE_SAMPLES = 16


class NewtonDivergence(NumericalFailure):
    """Raised when damped Newton fails to reduce the residual within its budget."""


class WrongMode(NumericalFailure):
    """Raised when a polar-grid operation is applied to a radial-only solution."""


class RangeMismatch(OutOfRange):
    """Raised when a radial profile does not cover the annulus."""


class OracleControl(NamedTuple):
    tol: float = 1e-10
    max_iterations: int = 50


class AnnulusGrid(NamedTuple):
    r_in: float
    r_out: float
    Nr: int
    Ntheta: int
    n: int

    @property
    def radii(self) -> np.ndarray:
        """Nr + 1 uniform radii, boundary rings included."""
        return np.linspace(self.r_in, self.r_out, self.Nr + 1)

    @property
    def angles(self) -> np.ndarray:
        return 2.0 * math.pi * np.arange(self.Ntheta) / self.Ntheta

    @property
    def dr(self) -> float:
        return (self.r_out - self.r_in) / self.Nr

    @property
    def radial_only(self) -> bool:
        return self.Ntheta == 1


class AnnulusSolution(NamedTuple):
    grid: AnnulusGrid
    u: np.ndarray
    residual: float
    iterations: int
    theta_variation: np.ndarray
    radial_profile: RadialProfile

    def rows(self) -> list[tuple[float, float, float]]:
        """(r, theta, u) for every node, ring by ring."""
        return [
            (float(r), float(theta), float(self.u[i, j]))
            for i, r in enumerate(self.grid.radii)
            for j, theta in enumerate(self.grid.angles)
        ]

    def to_json(self) -> JSON:
        return {
            "r_in": self.grid.r_in,
            "r_out": self.grid.r_out,
            "Nr": self.grid.Nr,
            "Ntheta": self.grid.Ntheta,
            "residual": self.residual,
            "iterations": self.iterations,
            "theta_variation": float(np.max(self.theta_variation)),
        }


def make_annulus_grid(spec: ProblemSpec, r_in: float, r_out: float, Nr: int, Ntheta: int = 1) -> AnnulusGrid:
    """Validates and builds a polar grid. Ntheta = 1 selects the radial-only mode."""
    if not 0.0 < r_in < r_out:
        raise ValueError(f"Invalid annulus: [{r_in}, {r_out}]. Expected 0 < r_in < r_out")
    if r_in < spec.r0:
        raise ValueError(f"Invalid annulus: r_in = {r_in} is below r0 = {spec.r0}")
    if Nr < MIN_RINGS:
        raise ValueError(f"Invalid Nr: {Nr}. Expected at least {MIN_RINGS}")
    if Ntheta != 1 and Ntheta < MIN_ANGLES:
        raise ValueError(f"Invalid Ntheta: {Ntheta}. Expected 1 or at least {MIN_ANGLES}")
    if Ntheta != 1 and spec.n != 2:
        raise ValueError(f"Polar grids are only supported for n = 2, got n = {spec.n}. Use Ntheta = 1")
    return AnnulusGrid(float(r_in), float(r_out), int(Nr), int(Ntheta), spec.n)


def from_nodal_values(grid: AnnulusGrid, u: Any, residual: float = 0.0, iterations: int = 0) -> AnnulusSolution:
    """Wraps an (Nr + 1, Ntheta) nodal field with its ring statistics."""
    u = np.asarray(u, dtype=float).reshape(grid.Nr + 1, grid.Ntheta)
    variation = np.max(u, axis=1) - np.min(u, axis=1)
    average = np.mean(u, axis=1)
    profile = RadialProfile(grid.radii, average, np.gradient(average, grid.radii))
    return AnnulusSolution(grid, u, float(residual), int(iterations), variation, profile)


def _boundary(value: Any, grid: AnnulusGrid, name: str) -> np.ndarray:
    table = np.asarray(value, dtype=float)
    if table.ndim == 0:
        return np.full(grid.Ntheta, float(table))
    if table.shape != (grid.Ntheta,):
        raise ValueError(f"Invalid {name}: expected a scalar or {grid.Ntheta} values, got shape {table.shape}")
    return table.copy()


def _operator(spec: ProblemSpec, grid: AnnulusGrid):
    """Sparse discrete operator on interior nodes and the boundary coefficients of the first and last ring."""
    radii = grid.radii[1:-1]
    dr = grid.dr
    h_prime = np.asarray(derivative_estimate(spec.h, "r", {"r": radii}, 1e-6 * radii))
    drift = (spec.n - 1) / radii + np.broadcast_to(h_prime, radii.shape)
    below = 1.0 / dr**2 - drift / (2.0 * dr)
    above = 1.0 / dr**2 + drift / (2.0 * dr)
    count = len(radii)
    radial = diags([below[1:], np.full(count, -2.0 / dr**2), above[:-1]], [-1, 0, 1], format="csr")
    if grid.radial_only:
        return radial, below[0], above[-1]

    dtheta = 2.0 * math.pi / grid.Ntheta
    m = grid.Ntheta
    ring = diags([np.ones(m - 1), np.full(m, -2.0), np.ones(m - 1)], [-1, 0, 1], format="lil")
    ring[0, m - 1] = 1.0
    ring[m - 1, 0] = 1.0
    ring = ring.tocsr() / dtheta**2
    operator = kron(radial, identity(m, format="csr")) + kron(diags(1.0 / radii**2), ring)
    return operator.tocsr(), below[0], above[-1]


def _check_monotone(spec: ProblemSpec, grid: AnnulusGrid, low: float, high: float) -> None:
    radii = grid.radii[:, None]
    values = np.linspace(low, high, MONOTONE_SAMPLES)[None, :]
    step = 1e-6 * max(1.0, abs(low), abs(high))
    slope = np.asarray(derivative_estimate(spec.f, "s", {"r": radii, "s": values}, step))
    scale = max(1.0, float(np.max(np.abs(slope))))
    if np.any(slope < -1e-8 * scale):
        index = np.unravel_index(np.argmin(slope), slope.shape)
        raise ValueError(
            f"f_s must be nonnegative on the annulus; f_s({float(grid.radii[index[0]])!r}, "
            f"{float(values[0, index[1]])!r}) = {float(slope[index])!r}"
        )


def solve_annulus(
    spec: ProblemSpec,
    grid: AnnulusGrid,
    bc_in: Any,
    bc_out: Any,
    init: Init = "radial",
    epsilon: float = 0.0,
    rhs_override: ExprAst | None = None,
    ctrl: OracleControl = OracleControl(),
) -> AnnulusSolution:
    """Solves u_rr + ((n-1)/r + h'(r)) u_r + u_thth / r^2 = f(r, u) with Dirichlet data on the annulus.

    Second-order central differences, periodic in theta; the theta term is dropped in
    radial-only mode. Damped Newton starts from the linear interpolation of the mean
    boundary data, plus epsilon sin(theta) for init="perturbed". rhs_override, an
    expression in r, replaces f for manufactured solutions.

    The iteration stops when the residual sup-norm is within tol * max(1, max|u| / dr^2)
    and the last update is within tol * max(1, max|u|).

    Raises:
        NewtonDivergence: If the line search or the iteration budget is exhausted.
        EvalError: If f cannot be evaluated on an iterate.
    """
    inner = _boundary(bc_in, grid, "bc_in")
    outer = _boundary(bc_out, grid, "bc_out")
    if init not in ("radial", "perturbed"):
        raise ValueError(f"Invalid init: {init}. Valid options: radial, perturbed")

    radii = grid.radii
    interior_r = radii[1:-1, None]
    start = float(np.mean(inner)) + (radii[:, None] - grid.r_in) / (grid.r_out - grid.r_in) * (
        float(np.mean(outer)) - float(np.mean(inner))
    )
    u = np.broadcast_to(start, (grid.Nr + 1, grid.Ntheta)).copy()
    if init == "perturbed":
        u[1:-1] += epsilon * np.sin(grid.angles)[None, :]
    u[0], u[-1] = inner, outer

    if rhs_override is None:
        low = min(float(np.min(u)), float(np.min(inner)), float(np.min(outer)))
        high = max(float(np.max(u)), float(np.max(inner)), float(np.max(outer)))
        _check_monotone(spec, grid, low, high)

    operator, first, last = _operator(spec, grid)
    boundary = np.zeros((grid.Nr - 1, grid.Ntheta))
    boundary[0] += first * inner
    boundary[-1] += last * outer
    boundary = boundary.reshape(-1)
    shape = (grid.Nr - 1, grid.Ntheta)

    def source(values: np.ndarray) -> np.ndarray:
        if rhs_override is not None:
            forcing = np.asarray(eval_expr(rhs_override, {"r": interior_r}))
            return np.broadcast_to(forcing, shape).reshape(-1)
        return np.asarray(eval_expr(spec.f, {"r": interior_r, "s": values.reshape(shape)})).reshape(-1)

    def slope(values: np.ndarray) -> np.ndarray:
        if rhs_override is not None:
            return np.zeros(values.size)
        step = 1e-6 * max(1.0, float(np.max(np.abs(values))))
        point = {"r": interior_r, "s": values.reshape(shape)}
        return np.asarray(derivative_estimate(spec.f, "s", point, step)).reshape(-1)

    def residual(values: np.ndarray) -> np.ndarray:
        return operator @ values + boundary - source(values)

    x = u[1:-1].reshape(-1)
    current = residual(x)
    update = math.inf
    for iteration in range(ctrl.max_iterations + 1):
        size = max(1.0, float(np.max(np.abs(x))), float(np.max(np.abs(inner))), float(np.max(np.abs(outer))))
        norm = float(np.max(np.abs(current)))
        if norm <= ctrl.tol * size / grid.dr**2 and update <= ctrl.tol * size:
            u[1:-1] = x.reshape(shape)
            return from_nodal_values(grid, u, norm, iteration)
        if iteration == ctrl.max_iterations:
            break

        jacobian = operator - diags(slope(x), format="csr")
        delta = spsolve(jacobian.tocsc(), -current)
        if not np.all(np.isfinite(delta)):
            raise NewtonDivergence(f"Newton step is not finite at iteration {iteration}")
        damping = 1.0
        for _ in range(LINE_SEARCH_HALVINGS):
            trial = x + damping * delta
            trial_residual = residual(trial)
            trial_norm = float(np.max(np.abs(trial_residual)))
            if trial_norm < norm or trial_norm <= ctrl.tol * size / grid.dr**2:
                break
            damping *= 0.5
        else:
            raise NewtonDivergence(
                f"Residual {norm:.3e} did not decrease after {LINE_SEARCH_HALVINGS} halvings at iteration {iteration}"
            )
        x, current = trial, trial_residual
        update = damping * float(np.max(np.abs(delta)))

    raise NewtonDivergence(f"Newton did not converge within {ctrl.max_iterations} iterations (residual {norm:.3e})")


def symmetry_deviation(solution: AnnulusSolution) -> tuple[float, np.ndarray]:
    """Largest per-ring theta variation, and the per-ring table."""
    if solution.grid.radial_only:
        raise WrongMode("Symmetry deviation needs a polar solution, got a radial-only one")
    return float(np.max(solution.theta_variation)), solution.theta_variation.copy()


def compare_with_radial(solution: AnnulusSolution, profile: RadialProfile) -> float:
    """max |u_ring - u_profile| / max(1, |u_profile|) over the grid radii, ring averages against the profile."""
    radii = solution.grid.radii
    if profile.r[0] > radii[0] or profile.r[-1] < radii[-1]:
        raise RangeMismatch(
            f"Profile covers [{profile.r[0]!r}, {profile.r[-1]!r}], annulus is [{radii[0]!r}, {radii[-1]!r}]"
        )
    expected = np.asarray(profile.at(radii))
    deviation = np.abs(solution.radial_profile.u - expected) / np.maximum(1.0, np.abs(expected))
    return float(np.max(deviation))


def write_field_csv(path: Path, solution: AnnulusSolution) -> None:
    with open(path, "w", newline="") as file:
        writer = csv.writer(file, lineterminator="\n")
        writer.writerow(["r", "theta", "u"])
        for row in solution.rows():
            writer.writerow([format(value, ".17g") for value in row])
