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
from scipy.interpolate import PchipInterpolator

from blowuplab.errors import InputError, NumericalFailure
from blowuplab.exprdsl import DomainError, ExprAst, eval_expr, parse_expr, scaled_expr
from blowuplab.quadrature import QuadratureFailure, adaptive_integrate, gauss_local, sum_geometric_blocks

JSON = dict[str, Any]
TailKind = Literal["power", "exponential", "negligible"]
Which = Literal["f", "l"]

GRID_POINTS = 512
TAIL_FIT_POINTS = 32
CUTOFF_POINTS = 4096
CUTOFF_FACTOR = 1e-3
MAX_GROWTH_BLOCKS = 64
MAX_INVERSE_ITERATIONS = 100
DEFAULT_QUAD_TOL = 1e-10
DEFAULT_R_BIG_FACTOR = 1e6
GROWTH_NOTE = "numerical evidence"


class InvalidSpec(InputError):
    """Raised when a ProblemSpec violates its invariants."""


class GrowthViolated(NumericalFailure):
    """Raised when the integral of exp(-h(r)) r^(1-n) does not converge at infinity."""


class OutOfRange(NumericalFailure):
    """Raised when a radius or transformed time lies outside a TransformMap's range."""


class ProblemSpec(NamedTuple):
    n: int
    h: ExprAst
    f: ExprAst
    g: ExprAst | None
    r0: float
    s0: float
    quad_tol: float
    r_big: float


class GrowthVerdict(NamedTuple):
    finite: bool
    value: float | None
    evidence: list[float]
    ratios: list[float]
    radius: float
    note: str = GROWTH_NOTE

    def to_json(self) -> JSON:
        return {
            "status": "finite" if self.finite else "divergent",
            "value": self.value,
            "radius": self.radius,
            "evidence": list(self.evidence),
            "note": self.note,
        }


class TailModel(NamedTuple):
    kind: TailKind
    r_big: float
    g_big: float
    exponent: float
    residual: float

    def integral_from(self, r: Any) -> Any:
        """Integral of the fitted integrand from r (>= r_big) to infinity."""
        r = np.asarray(r, dtype=float)
        if self.kind == "power":
            value = self.g_big * self.r_big / (-self.exponent - 1.0) * (r / self.r_big) ** (self.exponent + 1.0)
        elif self.kind == "exponential":
            value = self.g_big / self.exponent * np.exp(-self.exponent * (r - self.r_big))
        else:
            value = np.zeros_like(r)
        return float(value) if value.ndim == 0 else value

    def inverse(self, remaining: Any) -> Any:
        """Radius r >= r_big whose tail integral equals `remaining`."""
        remaining = np.asarray(remaining, dtype=float)
        if self.kind == "power":
            scale = self.g_big * self.r_big / (-self.exponent - 1.0)
            value = self.r_big * (remaining / scale) ** (1.0 / (self.exponent + 1.0))
        elif self.kind == "exponential":
            value = self.r_big - np.log(remaining * self.exponent / self.g_big) / self.exponent
        else:
            raise OutOfRange("The transform has no tail beyond r_big")
        return float(value) if value.ndim == 0 else value


class TransformMap(NamedTuple):
    spec: ProblemSpec
    r_min: float
    r: np.ndarray
    t: np.ndarray
    p_prime: np.ndarray
    tail: TailModel
    quad_tol: float
    seed: PchipInterpolator

    @property
    def t_min(self) -> float:
        return float(self.t[0])

    @property
    def t_last(self) -> float:
        return float(self.t[-1])

    @property
    def r_top(self) -> float:
        """Last table radius; the tail model takes over beyond it."""
        return float(self.r[-1])


class RadialProfile(NamedTuple):
    r: np.ndarray
    u: np.ndarray
    du_dr: np.ndarray

    def at(self, r: Any) -> Any:
        """Monotone cubic resampling of u."""
        r = np.asarray(r, dtype=float)
        if np.any(r < self.r[0]) or np.any(r > self.r[-1]):
            raise OutOfRange(f"Radius outside profile range [{self.r[0]!r}, {self.r[-1]!r}]")
        value = PchipInterpolator(self.r, self.u)(r)
        return float(value) if value.ndim == 0 else value


def make_problem_spec(
    n: int,
    h: str | ExprAst,
    f: str | ExprAst,
    g: str | ExprAst | None = None,
    r0: float = 1.0,
    s0: float = 1.0,
    quad_tol: float = DEFAULT_QUAD_TOL,
    r_big: float | None = None,
) -> ProblemSpec:
    """Builds a ProblemSpec, parsing expression sources where needed.

    Raises:
        InvalidSpec: If n < 2, r0 <= 0, s0 <= 0, quad_tol is outside (0, 1e-3] or r_big <= 10 r0.
    """
    if isinstance(h, str):
        h = parse_expr(h, ("r",))
    if isinstance(f, str):
        f = parse_expr(f, ("r", "s"))
    if isinstance(g, str):
        g = parse_expr(g, ("r", "s"))
    if r_big is None:
        r_big = DEFAULT_R_BIG_FACTOR * r0

    _validate_spec(n, h, f, g, r0, s0, quad_tol, r_big)
    return ProblemSpec(int(n), h, f, g, float(r0), float(s0), float(quad_tol), float(r_big))


def _validate_spec(
    n: int, h: ExprAst, f: ExprAst, g: ExprAst | None, r0: float, s0: float, quad_tol: float, r_big: float
) -> None:
    if int(n) != n or n < 2:
        raise InvalidSpec(f"Invalid dimension: {n}. Dimension must be an integer >= 2")
    if not r0 > 0 or not s0 > 0:
        raise InvalidSpec(f"Invalid corner: r0={r0}, s0={s0}. Both must be positive")
    if not 0 < quad_tol <= 1e-3:
        raise InvalidSpec(f"Invalid quad_tol: {quad_tol}. Valid range: (0, 1e-3]")
    if not r_big > 10 * r0:
        raise InvalidSpec(f"Invalid r_big: {r_big}. r_big must exceed 10 * r0 = {10 * r0}")
    if h.variables - {"r"}:
        raise InvalidSpec(f"h may only depend on r, declared: {', '.join(sorted(h.variables))}")
    for name, expr in (("f", f), ("g", g)):
        if expr is not None and expr.variables - {"r", "s"}:
            raise InvalidSpec(f"{name} may only depend on r and s, declared: {', '.join(sorted(expr.variables))}")


def osserman_spec(n: int, beta: float, power: float = 3.0, **kwargs: Any) -> ProblemSpec:
    """Scenario h(r) = beta log(r), f = s^power. At beta = 2 - n the growth condition fails."""
    h = f"{format(beta, '.17g')} * log(r)"
    f = f"s^{format(power, '.17g')}"
    return make_problem_spec(n, h, f, **kwargs)


def comparison_expr(spec: ProblemSpec) -> ExprAst:
    """The comparison function l(r, s) = g(r, s) / 2."""
    if spec.g is None:
        raise ValueError("The problem has no comparison function g")
    return scaled_expr(spec.g, 0.5)


def p_prime(spec: ProblemSpec, r: Any) -> Any:
    """exp(-h(r)) r^(1-n), the integrand of the growth condition."""
    r = np.asarray(r, dtype=float)
    with np.errstate(over="ignore", under="ignore"):
        value = np.exp(-np.asarray(eval_expr(spec.h, {"r": r}))) * r ** (1.0 - spec.n)
    if not np.all(np.isfinite(value)):
        raise DomainError("exp(-h(r)) r^(1-n) overflowed")
    return float(value) if value.ndim == 0 else value


def check_growth(spec: ProblemSpec, R: float) -> GrowthVerdict:
    """Decides whether the integral of exp(-h(r)) r^(1-n) over [R, inf) is finite.

    Integrals over the doubling blocks [2^k R, 2^(k+1) R] are summed until they decay
    geometrically or fail to. A Divergent verdict is numerical evidence, not proof.

    Args:
        spec (ProblemSpec): The problem.
        R (float): Lower limit, at least spec.r0.

    Returns:
        GrowthVerdict: Finite with the tail integral, or Divergent with the block sequence.
    """
    if R < spec.r0:
        raise ValueError(f"Invalid radius: {R}. Radius must be at least r0 = {spec.r0}")

    def block(k: int) -> float:
        a = R * 2.0**k
        return adaptive_integrate(lambda r: p_prime(spec, r), a, 2.0 * a, spec.quad_tol)

    series = sum_geometric_blocks(block, MAX_GROWTH_BLOCKS, spec.quad_tol)
    value = series.value if series.converged else None
    return GrowthVerdict(series.converged, value, series.blocks, series.ratios, float(R))


def fit_tail(spec: ProblemSpec, r_big: float, r_low: float | None = None) -> TailModel:
    """Fits a power law or exponential to the growth integrand on [r_low, r_big].

    r_low defaults to r_big / 10.

    Raises:
        GrowthViolated: If neither an integrable power law (exponent < -1) nor a decaying
            exponential describes the last decade.
    """
    r_low = r_big / 10.0 if r_low is None else r_low
    radii = np.geomspace(r_low, r_big, TAIL_FIT_POINTS)
    values = np.asarray(p_prime(spec, radii))
    g_big = float(values[-1])
    if g_big == 0.0 or np.count_nonzero(values > 0.0) < TAIL_FIT_POINTS // 4:
        return TailModel("negligible", r_big, 0.0, 0.0, 0.0)

    keep = values > 0.0
    log_values = np.log(values[keep])
    candidates = []

    x = np.log(radii[keep] / r_big)
    slope, intercept = np.polyfit(x, log_values, 1)
    residual = float(np.max(np.abs(slope * x + intercept - log_values)))
    if slope < -1.0:
        candidates.append(TailModel("power", r_big, g_big, float(slope), residual))

    x = radii[keep] - r_big
    slope, intercept = np.polyfit(x, log_values, 1)
    residual = float(np.max(np.abs(slope * x + intercept - log_values)))
    if slope < 0.0:
        candidates.append(TailModel("exponential", r_big, g_big, float(-slope), residual))

    if not candidates:
        raise GrowthViolated(f"No integrable tail model fits exp(-h(r)) r^(1-n) on [{r_low!r}, {r_big!r}]")
    return min(candidates, key=lambda model: model.residual)


def table_end(spec: ProblemSpec, r_min: float, total: float) -> float:
    """The radius where the transform table stops.

    This is r_big, unless r p'(r) stays below CUTOFF_FACTOR * quad_tol * total from some
    radius on. The table then stops at that radius, so rapidly decaying integrands such as
    exp(-r) never underflow inside the table.
    """
    radii = np.geomspace(r_min, spec.r_big, CUTOFF_POINTS)
    radii[0], radii[-1] = r_min, spec.r_big
    weight = np.asarray(p_prime(spec, radii)) * radii
    large = np.flatnonzero(weight >= CUTOFF_FACTOR * spec.quad_tol * total)
    if len(large) == 0:
        return float(radii[1])
    return float(radii[min(int(large[-1]) + 1, CUTOFF_POINTS - 1)])


def build_transform(spec: ProblemSpec, r_min: float | None = None) -> TransformMap:
    """Tabulates t = p(r) = -integral of exp(-h) z^(1-n) from r to infinity.

    The table lives on GRID_POINTS geometric radii in [r_min, table_end(...)]. Panel integrals
    are accumulated from the right, starting from the fitted tail beyond the last radius.

    Raises:
        GrowthViolated: If check_growth(spec, r_min) is Divergent.
        QuadratureFailure: If a panel misses quad_tol or the table is not strictly increasing.
    """
    r_min = spec.r0 if r_min is None else float(r_min)
    if r_min < spec.r0:
        raise ValueError(f"Invalid r_min: {r_min}. r_min must be at least r0 = {spec.r0}")
    if not r_min < spec.r_big:
        raise ValueError(f"Invalid r_min: {r_min}. r_min must be below r_big = {spec.r_big}")

    growth = check_growth(spec, r_min)
    if not growth.finite:
        raise GrowthViolated(
            f"exp(-h(r)) r^(1-n) is not integrable on [{r_min!r}, inf) ({growth.note}): "
            f"doubling blocks {growth.evidence[-3:]}"
        )

    r_top = table_end(spec, r_min, growth.value)
    tail = fit_tail(spec, r_top, max(r_top / 10.0, r_min))
    radii = np.geomspace(r_min, r_top, GRID_POINTS)
    radii[0], radii[-1] = r_min, r_top
    panels = np.array(
        [
            adaptive_integrate(lambda r: p_prime(spec, r), radii[i], radii[i + 1], spec.quad_tol)
            for i in range(GRID_POINTS - 1)
        ]
    )
    tail_integral = tail.integral_from(r_top)
    remaining = tail_integral + np.concatenate([np.cumsum(panels[::-1])[::-1], [0.0]])
    t = -remaining

    if not np.all(t < 0.0) or not np.all(np.diff(t) > 0.0):
        raise QuadratureFailure(
            "Transform table is not strictly increasing and negative; "
            f"exp(-h(r)) r^(1-n) underflows before r = {r_top!r}"
        )
    derivative = np.asarray(p_prime(spec, radii))
    if not np.all(derivative > 0.0):
        raise QuadratureFailure("p'(r) = exp(-h(r)) r^(1-n) is not positive on the grid")

    for array in (radii, t, derivative):
        array.setflags(write=False)
    seed = PchipInterpolator(t, np.log(radii))
    return TransformMap(spec, r_min, radii, t, derivative, tail, spec.quad_tol, seed)


def eval_p(transform: TransformMap, r: Any) -> Any:
    """p(r) for r >= r_min: table node plus a local Gauss correction, tail model beyond r_top."""
    r = np.asarray(r, dtype=float)
    if np.any(r < transform.r_min):
        raise OutOfRange(f"Radius {np.min(r)!r} is below r_min = {transform.r_min!r}")

    result = np.empty_like(r)
    beyond = r >= transform.r_top
    if np.any(beyond):
        result[beyond] = -np.asarray(transform.tail.integral_from(r[beyond]))
    inside = ~beyond
    if np.any(inside):
        ri = r[inside]
        index = np.clip(np.searchsorted(transform.r, ri, side="right") - 1, 0, len(transform.r) - 2)
        node = transform.r[index]
        correction = gauss_local(lambda x: p_prime(transform.spec, x), node, ri)
        result[inside] = transform.t[index] + correction
    return float(result) if result.ndim == 0 else result


def eval_p_inverse(transform: TransformMap, t: Any) -> Any:
    """p^(-1)(t) for p(r_min) <= t < 0, by safeguarded Newton inside the bracketing table cell.

    Times up to 8 quad_tol |p(r_min)| below p(r_min) are quadrature roundoff and map onto r_min.

    Raises:
        OutOfRange: If t >= 0 or t lies further below p(r_min).
    """
    t = np.asarray(t, dtype=float)
    if np.any(t >= 0.0):
        raise OutOfRange(f"Transformed time {np.max(t)!r} is not negative")
    slack = 8.0 * transform.quad_tol * abs(transform.t_min)
    if np.any(t < transform.t_min - slack):
        raise OutOfRange(f"Transformed time {np.min(t)!r} is below p(r_min) = {transform.t_min!r}")
    # roundoff below p(r_min) maps onto r_min
    t = np.maximum(t, transform.t_min)

    flat = t.reshape(-1)
    result = np.empty_like(flat)
    beyond = flat >= transform.t_last
    if np.any(beyond):
        result[beyond] = transform.tail.inverse(-flat[beyond])
    for position in np.flatnonzero(~beyond):
        result[position] = _invert_one(transform, float(flat[position]))
    result = result.reshape(t.shape)
    return float(result) if result.ndim == 0 else result


def _invert_one(transform: TransformMap, t: float) -> float:
    index = int(np.clip(np.searchsorted(transform.t, t, side="right") - 1, 0, len(transform.t) - 2))
    low, high = float(transform.r[index]), float(transform.r[index + 1])
    if t == transform.t[index]:
        return low
    r = min(max(math.exp(float(transform.seed(t))), low), high)
    tolerance = 0.1 * transform.quad_tol * abs(t)

    for _ in range(MAX_INVERSE_ITERATIONS):
        residual = eval_p(transform, r) - t
        if abs(residual) <= tolerance:
            return r
        if residual > 0.0:
            high = r
        else:
            low = r
        candidate = r - residual / p_prime(transform.spec, r)
        if not low < candidate < high:
            candidate = 0.5 * (low + high)
        if candidate == r or high - low <= 4.0 * np.finfo(float).eps * high:
            return candidate
        r = candidate
    raise QuadratureFailure(f"Inverse transform did not converge at t = {t!r}")


def eval_F(transform: TransformMap, spec: ProblemSpec, t: Any, z: Any, which: Which = "f") -> Any:
    """F(t, z) = (p^(-1)(t))^(2n-2) exp(2 h(p^(-1)(t))) f(p^(-1)(t), z).

    With which="l" the comparison function g/2 replaces f.
    """
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0.0):
        raise DomainError(f"F(t, z) requires z > 0, got {np.min(z)!r}")
    expr = spec.f if which == "f" else comparison_expr(spec)
    r = np.asarray(eval_p_inverse(transform, t))
    h = np.asarray(eval_expr(spec.h, {"r": r}))
    with np.errstate(over="ignore"):
        weight = r ** (2 * spec.n - 2) * np.exp(2.0 * h)
    value = weight * np.asarray(eval_expr(expr, {"r": r, "s": z}))
    if not np.all(np.isfinite(value)):
        raise DomainError(f"F(t, z) is not finite at t = {t!r}")
    return float(value) if value.ndim == 0 else value


class TransformedField:
    """Callable F(t, z) of a spec and its transform, usable by the ODE solvers."""

    z_floor = 0.0

    def __init__(self, transform: TransformMap, which: Which = "f", scale: float = 1.0):
        self.transform = transform
        self.spec = transform.spec
        self.which = which
        self.scale = scale

    def __call__(self, t: Any, z: Any) -> Any:
        return self.scale * eval_F(self.transform, self.spec, t, z, self.which)

    def __repr__(self) -> str:
        return f"TransformedField(which={self.which!r}, n={self.spec.n}, f={self.spec.f.source!r})"


def lift_to_radial(transform: TransformMap, ode: Any) -> RadialProfile:
    """Maps a trajectory z(t) back to u(r) = z(p(r)), with du/dr = z'(t) p'(r)."""
    t = np.asarray(ode.t, dtype=float)
    if t.size == 0:
        raise OutOfRange("Cannot lift an empty trajectory")
    r = np.atleast_1d(eval_p_inverse(transform, t))
    du_dr = np.asarray(ode.zprime, dtype=float) * np.atleast_1d(p_prime(transform.spec, r))
    return RadialProfile(r, np.array(ode.z, dtype=float), du_dr)


def transform_table(transform: TransformMap, radii: Any) -> list[tuple[float, float, float]]:
    """Rows (r, t, p_prime) for the requested radii."""
    radii = np.atleast_1d(np.asarray(radii, dtype=float))
    t = np.atleast_1d(eval_p(transform, radii))
    derivative = np.atleast_1d(p_prime(transform.spec, radii))
    return [(float(a), float(b), float(c)) for a, b, c in zip(radii, t, derivative)]


def write_profile_csv(path: Path, profile: RadialProfile) -> None:
    with open(path, "w", newline="") as file:
        writer = csv.writer(file, lineterminator="\n")
        writer.writerow(["r", "u", "du_dr"])
        for row in zip(profile.r, profile.u, profile.du_dr):
            writer.writerow([format(value, ".17g") for value in row])


def read_profile_csv(path: Path) -> RadialProfile:
    """Reads a profile written by write_profile_csv, or any CSV with r and u (or z) columns."""
    with open(path, newline="") as file:
        rows = list(csv.DictReader(file))
    if not rows or "r" not in rows[0]:
        raise InputError(f"Profile {path} has no 'r' column")
    column = "u" if "u" in rows[0] else "z"
    r = np.array([float(row["r"]) for row in rows])
    u = np.array([float(row[column]) for row in rows])
    du_dr = np.array([float(row.get("du_dr") or "nan") for row in rows])
    order = np.argsort(r)
    return RadialProfile(r[order], u[order], du_dr[order])
