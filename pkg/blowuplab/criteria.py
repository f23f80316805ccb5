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
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Literal, NamedTuple

import numpy as np
from scipy.special import gamma

from blowuplab.errors import BlowupLabError, InputError, NumericalFailure
from blowuplab.exprdsl import ExprAst, derivative_estimate, eval_expr
from blowuplab.odesolver import OdeSolution, SolverControl, dirichlet_extension_experiment, worker_count
from blowuplab.quadrature import adaptive_integrate, sum_geometric_blocks
from blowuplab.transform import (
    GROWTH_NOTE,
    GrowthVerdict,
    ProblemSpec,
    TransformedField,
    TransformMap,
    Which,
    build_transform,
    check_growth,
    comparison_expr,
    eval_F,
    eval_p,
    eval_p_inverse,
)

JSON = dict[str, Any]
Region = tuple[float, float, float, float]
Direction = Literal["increasing", "decreasing", "fail"]
Verdict = Literal["ExistsRadial", "NoSolutionExpected", "Inconclusive"]

SCALE_FACTORS = (2.0, 4.0, 8.0)
SUPERLINEAR_MARGIN = 1e-6
SIGN_TOLERANCE = 1e-12
EXISTENCE_BLOCKS = 40
IDENTITY_BLOCKS = 64
DEFAULT_GRID = 24
DEFAULT_REGION_FACTOR = 1e3

VERDICT_EXIT_CODES: dict[str, int] = {"ExistsRadial": 0, "NoSolutionExpected": 3, "Inconclusive": 4}


class NonPositiveSample(InputError):
    """Raised when a nonlinearity is not positive at a sampled point."""

    def __init__(self, message: str, r: float, s: float):
        super().__init__(message)
        self.r = r
        self.s = s


class DivergentSide(NumericalFailure):
    """Raised when one side of the integral identity does not converge."""


class CheckError(NamedTuple):
    kind: str
    message: str

    def to_json(self) -> JSON:
        return {"error": self.kind, "message": self.message}


class PositivityVerdict(NamedTuple):
    passed: bool
    witness: tuple[float, float] | None
    samples: int

    def to_json(self) -> JSON:
        return {
            "status": "pass" if self.passed else "fail",
            "witness": None if self.witness is None else list(self.witness),
            "samples": self.samples,
        }


class SuperlinearityVerdict(NamedTuple):
    passed: bool
    lambda_hat: float
    witness: tuple[float, float, float]

    def to_json(self) -> JSON:
        return {"status": "pass" if self.passed else "fail", "lambda_hat": self.lambda_hat, "witness": list(self.witness)}


class MonotonicityVerdict(NamedTuple):
    direction: Direction
    witness: tuple[tuple[float, float], tuple[float, float]] | None

    def to_json(self) -> JSON:
        witness = None if self.witness is None else [list(point) for point in self.witness]
        return {"status": self.direction, "witness": witness}


class ExistenceResult(NamedTuple):
    s: float
    finite: bool
    value: float | None
    evidence: list[float]
    note: str = GROWTH_NOTE

    def to_json(self) -> JSON:
        return {
            "s": self.s,
            "status": "finite" if self.finite else "divergent",
            "value": self.value,
            "evidence": list(self.evidence),
            "note": self.note,
        }


class ExtensionResult(NamedTuple):
    t2: float | None
    r2: float | None
    solution: OdeSolution

    def to_json(self) -> JSON:
        return {"t2": self.t2, "r2": self.r2, "solution": self.solution.to_json()}


LineItem = Any


class CriterionReport(NamedTuple):
    growth: GrowthVerdict
    c1_positive: LineItem
    c2_superlinear: LineItem
    c3_monotone: LineItem
    c3_f_monotone: LineItem
    existence: list[ExistenceResult] | CheckError
    threshold: float | None
    klk_residual: LineItem
    f_superlinear: LineItem
    f_dominates_l: LineItem
    F_superlinear: LineItem
    F_z_superlinear: LineItem
    F_monotone_t: LineItem
    verdict: Verdict

    @property
    def exit_code(self) -> int:
        return VERDICT_EXIT_CODES[self.verdict]

    def to_json(self) -> JSON:
        def item(value: LineItem) -> Any:
            if isinstance(value, list):
                return [item(entry) for entry in value]
            return value.to_json() if hasattr(value, "to_json") else value

        return {
            "growth": self.growth.to_json(),
            "c1_positive": item(self.c1_positive),
            "c2_superlinear": item(self.c2_superlinear),
            "c3_monotone": item(self.c3_monotone),
            "c3_f_monotone": item(self.c3_f_monotone),
            "existence": item(self.existence),
            "threshold": self.threshold,
            "klk_residual": item(self.klk_residual),
            "f_superlinear": item(self.f_superlinear),
            "f_dominates_l": item(self.f_dominates_l),
            "F_superlinear": item(self.F_superlinear),
            "F_z_superlinear": item(self.F_z_superlinear),
            "F_monotone_t": item(self.F_monotone_t),
            "verdict": self.verdict,
        }


def sigma_n(n: int) -> float:
    """Surface measure of the unit sphere in R^n."""
    if n < 1:
        raise ValueError(f"Invalid dimension: {n}")
    return float(2.0 * math.pi ** (n / 2.0) / gamma(n / 2.0))


def comparison_field(transform: TransformMap) -> TransformedField:
    """Transformed field of the comparison function l = g / 2."""
    comparison_expr(transform.spec)
    return TransformedField(transform, which="l")


def _grid(region: Region, grid: int) -> tuple[np.ndarray, np.ndarray]:
    r_low, s_low, r_high, s_high = region
    if grid < 2:
        raise ValueError(f"Invalid grid size: {grid}. Expected at least 2")
    if not (0.0 < r_low <= r_high and 0.0 < s_low <= s_high):
        raise ValueError(f"Invalid region: {region}. Expected 0 < r0 <= r1 and 0 < s0 <= s1")
    return np.geomspace(r_low, r_high, grid), np.geomspace(s_low, s_high, grid)


def _superlinearity(evaluate: Callable[[np.ndarray, np.ndarray], Any], xs: np.ndarray, ys: np.ndarray):
    x, y = np.meshgrid(xs, ys, indexing="ij")
    base = np.asarray(evaluate(x, y), dtype=float)
    _require_positive(base, x, y)
    best = (math.inf, (math.nan, math.nan, math.nan))
    for v in SCALE_FACTORS:
        scaled = np.asarray(evaluate(x, v * y), dtype=float)
        _require_positive(scaled, x, v * y)
        exponents = np.log(scaled / base) / math.log(v)
        index = np.unravel_index(np.argmin(exponents), exponents.shape)
        if exponents[index] < best[0]:
            best = (float(exponents[index]), (float(x[index]), float(y[index]), v))
    lambda_hat, witness = best
    return SuperlinearityVerdict(lambda_hat > 1.0 + SUPERLINEAR_MARGIN, lambda_hat, witness)


def _require_positive(values: np.ndarray, x: np.ndarray, y: np.ndarray) -> None:
    bad = ~(values > 0.0)
    if np.any(bad):
        index = np.unravel_index(np.argmax(bad), bad.shape)
        r, s = float(x[index]), float(y[index])
        raise NonPositiveSample(f"Nonlinearity is not positive at ({r!r}, {s!r})", r, s)


def check_superlinearity(expr: ExprAst, region: Region, grid: int = DEFAULT_GRID) -> SuperlinearityVerdict:
    """Estimates lambda with expr(r, v s) >= v^lambda expr(r, s) for v in {2, 4, 8}.

    lambda_hat is the smallest log(expr(r, v s) / expr(r, s)) / log(v) over a geometric
    grid of the region (r0, s0, r1, s1); the check passes when lambda_hat > 1.

    Raises:
        NonPositiveSample: If expr is not positive at a sample, including the scaled ones.
        EvalError: If expr cannot be evaluated on the region.
    """
    radii, values = _grid(region, grid)
    return _superlinearity(lambda r, s: eval_expr(expr, {"r": r, "s": s}), radii, values)


def check_field_superlinearity(
    field: Callable[[Any, Any], Any], t_values: Sequence[float], z_values: Sequence[float], derivative: bool = False
) -> SuperlinearityVerdict:
    """Superlinearity in z of a transformed field F(t, z), or of F_z with derivative=True.

    The witness reports (t, z, v).
    """
    t_values = np.asarray(t_values, dtype=float)
    z_values = np.asarray(z_values, dtype=float)
    if derivative:

        def evaluate(t: np.ndarray, z: np.ndarray) -> np.ndarray:
            step = 1e-6 * z
            return (np.asarray(field(t, z + step)) - np.asarray(field(t, z - step))) / (2.0 * step)

    else:
        evaluate = field
    return _superlinearity(evaluate, t_values, z_values)


def _direction(x: np.ndarray, values: np.ndarray, columns: np.ndarray) -> MonotonicityVerdict:
    """Uniform sign of the differences along axis 0, ignoring steps below SIGN_TOLERANCE |q|."""
    steps = np.diff(values, axis=0)
    ignore = np.abs(steps) <= SIGN_TOLERANCE * np.maximum(np.abs(values[1:]), np.abs(values[:-1]))
    rising = (steps > 0.0) & ~ignore
    falling = (steps < 0.0) & ~ignore
    if not np.any(falling):
        return MonotonicityVerdict("increasing", None)
    if not np.any(rising):
        return MonotonicityVerdict("decreasing", None)
    up = np.unravel_index(np.argmax(rising), rising.shape)
    down = np.unravel_index(np.argmax(falling), falling.shape)
    witness = ((float(x[up[0]]), float(columns[up[1]])), (float(x[down[0]]), float(columns[down[1]])))
    return MonotonicityVerdict("fail", witness)


def check_c3_monotonicity(
    spec: ProblemSpec,
    transform: TransformMap,
    which: Literal["f", "g"] = "g",
    region: Region | None = None,
    grid: int = DEFAULT_GRID,
) -> MonotonicityVerdict:
    """Direction in r of q(r, s) = p(r) exp(h(r)) expr(r, s) at every sampled s.

    A failure carries a witness pair ((r, s), (r', s)) of one rising and one falling step.

    Raises:
        OutOfRange: If the region starts below the transform's r_min.
        EvalError: If the expression cannot be evaluated on the region.
    """
    if which == "g" and spec.g is None:
        raise ValueError("The problem has no comparison function g")
    expr = spec.g if which == "g" else spec.f
    region = default_region(spec, transform) if region is None else region
    radii, values = _grid(region, grid)
    r, s = np.meshgrid(radii, values, indexing="ij")
    weight = np.asarray(eval_p(transform, radii)) * np.exp(np.asarray(eval_expr(spec.h, {"r": radii})))
    q = weight[:, None] * np.asarray(eval_expr(expr, {"r": r, "s": s}))
    return _direction(radii, q, values)


def check_positivity(spec: ProblemSpec, region: Region, grid: int = DEFAULT_GRID) -> PositivityVerdict:
    """Samples g (or f without g) and its s-derivative: g > 0 and g_s finite on the region."""
    expr = spec.g if spec.g is not None else spec.f
    radii, values = _grid(region, grid)
    r, s = np.meshgrid(radii, values, indexing="ij")
    sampled = np.asarray(eval_expr(expr, {"r": r, "s": s}))
    slope = np.asarray(derivative_estimate(expr, "s", {"r": r, "s": s}, 1e-6 * float(values[0])))
    bad = ~((sampled > 0.0) & np.isfinite(slope))
    if np.any(bad):
        index = np.unravel_index(np.argmax(bad), bad.shape)
        return PositivityVerdict(False, (float(r[index]), float(s[index])), int(bad.size))
    return PositivityVerdict(True, None, int(bad.size))


def check_dominance(spec: ProblemSpec, region: Region, grid: int = DEFAULT_GRID) -> PositivityVerdict:
    """f >= l = g / 2 on the sampled region; the witness is the first violating (r, s)."""
    radii, values = _grid(region, grid)
    r, s = np.meshgrid(radii, values, indexing="ij")
    gap = np.asarray(eval_expr(spec.f, {"r": r, "s": s})) - np.asarray(
        eval_expr(comparison_expr(spec), {"r": r, "s": s})
    )
    bad = ~(gap >= 0.0)
    if np.any(bad):
        index = np.unravel_index(np.argmax(bad), bad.shape)
        return PositivityVerdict(False, (float(r[index]), float(s[index])), int(bad.size))
    return PositivityVerdict(True, None, int(bad.size))


def check_field_monotonicity(
    field: Callable[[Any, Any], Any], t_values: Sequence[float], z_values: Sequence[float]
) -> MonotonicityVerdict:
    """Direction of F(t, z) in t at every sampled z."""
    t_values = np.sort(np.asarray(t_values, dtype=float))
    z_values = np.asarray(z_values, dtype=float)
    t, z = np.meshgrid(t_values, z_values, indexing="ij")
    return _direction(t_values, np.asarray(field(t, z), dtype=float), z_values)


def _existence_one(transform: TransformMap, spec: ProblemSpec, s: float, t0: float) -> ExistenceResult:
    def block(k: int) -> float:
        a = t0 * 2.0**-k
        return adaptive_integrate(lambda t: -t * eval_F(transform, spec, t, s), a, 0.5 * a, spec.quad_tol)

    series = sum_geometric_blocks(block, EXISTENCE_BLOCKS, spec.quad_tol)
    return ExistenceResult(float(s), series.converged, series.value if series.converged else None, series.blocks)


def existence_criterion(
    transform: TransformMap, spec: ProblemSpec, s_values: Sequence[float], t0: float | None = None
) -> list[ExistenceResult]:
    """Tests finiteness of the integral of -t F(t, s) over [t0, 0) for each s.

    The integral is summed over the halving blocks [2^-k t0, 2^-(k+1) t0], k < 40. A
    Divergent result carries the non-decaying blocks as numerical evidence. The values
    are computed on a thread pool of worker_count() threads, in input order.
    """
    t0 = transform.t_min if t0 is None else float(t0)
    if not transform.t_min <= t0 < 0.0:
        raise ValueError(f"Invalid t0: {t0}. Expected p(r_min) = {transform.t_min} <= t0 < 0")
    for s in s_values:
        if not s >= spec.s0:
            raise ValueError(f"Invalid s: {s}. Expected s >= s0 = {spec.s0}")

    with ThreadPoolExecutor(max_workers=worker_count()) as executor:
        return list(executor.map(lambda s: _existence_one(transform, spec, s, t0), s_values))


def existence_threshold(results: Sequence[ExistenceResult]) -> float | None:
    """Smallest tested s with a finite criterion. Never extrapolated below the tested values."""
    finite = [result.s for result in results if result.finite]
    return min(finite) if finite else None


def klk_identity_residual(spec: ProblemSpec, transform: TransformMap, R: float, s: float) -> float:
    """Relative gap between the radial and transformed forms of the same integral.

    LHS = -sigma_n int_R^inf r^(n-1) p(r) exp(h(r)) f(r, s) dr over doubling blocks in r,
    RHS = -sigma_n int_p(R)^0 t F(t, s) dt over halving blocks in t.

    Raises:
        DivergentSide: If either series fails to converge.
    """
    if R < transform.r_min:
        raise ValueError(f"Invalid radius: {R}. Expected R >= r_min = {transform.r_min}")
    sigma = sigma_n(spec.n)

    def radial(r: np.ndarray) -> np.ndarray:
        weight = np.exp(np.asarray(eval_expr(spec.h, {"r": r}))) * r ** (spec.n - 1)
        return -np.asarray(eval_p(transform, r)) * weight * np.asarray(eval_expr(spec.f, {"r": r, "s": s}))

    def radial_block(k: int) -> float:
        a = R * 2.0**k
        return adaptive_integrate(radial, a, 2.0 * a, spec.quad_tol)

    t0 = float(eval_p(transform, R))

    def transformed_block(k: int) -> float:
        a = t0 * 2.0**-k
        return adaptive_integrate(lambda t: -t * eval_F(transform, spec, t, s), a, 0.5 * a, spec.quad_tol)

    left = sum_geometric_blocks(radial_block, IDENTITY_BLOCKS, spec.quad_tol)
    if not left.converged:
        raise DivergentSide(f"The radial side diverges at R = {R!r}, s = {s!r}: blocks {left.blocks[-3:]}")
    right = sum_geometric_blocks(transformed_block, IDENTITY_BLOCKS, spec.quad_tol)
    if not right.converged:
        raise DivergentSide(f"The transformed side diverges at R = {R!r}, s = {s!r}: blocks {right.blocks[-3:]}")

    lhs, rhs = sigma * left.value, sigma * right.value
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs))


def default_region(spec: ProblemSpec, transform: TransformMap | None = None) -> Region:
    r_low = spec.r0 if transform is None else transform.r_min
    return (r_low, spec.s0, DEFAULT_REGION_FACTOR * spec.r0, DEFAULT_REGION_FACTOR * spec.s0)


def _guarded(check: Callable[[], Any]) -> Any:
    try:
        return check()
    except BlowupLabError as error:
        return CheckError(type(error).__name__, str(error))


def _decide(growth: GrowthVerdict, existence: LineItem, c2: LineItem) -> Verdict:
    if not growth.finite:
        return "NoSolutionExpected"
    if isinstance(existence, CheckError) or not existence:
        return "Inconclusive"
    if not any(result.finite for result in existence):
        return "NoSolutionExpected"
    c2_passed = isinstance(c2, SuperlinearityVerdict) and c2.passed
    if all(result.finite for result in existence) and c2_passed:
        return "ExistsRadial"
    return "Inconclusive"


def assemble_report(
    spec: ProblemSpec,
    r_min: float | None = None,
    t0: float | None = None,
    s_values: Sequence[float] | None = None,
    region: Region | None = None,
    grid: int = DEFAULT_GRID,
) -> CriterionReport:
    """Runs every hypothesis check on a spec and classifies it.

    The verdict is ExistsRadial when the growth condition and the existence criterion at
    every tested s are finite and c2 passes, NoSolutionExpected when growth or the
    criterion at every tested s diverges, and Inconclusive otherwise. A check that raises
    is reported as a CheckError line item.
    """
    r_min = spec.r0 if r_min is None else float(r_min)
    s_values = [2.0 * spec.s0, 4.0 * spec.s0, 8.0 * spec.s0] if s_values is None else list(s_values)
    region = default_region(spec) if region is None else region
    region = (max(region[0], r_min), region[1], max(region[2], r_min), region[3])
    source = spec.g if spec.g is not None else spec.f
    has_g = spec.g is not None

    items: dict[str, Any] = {
        "growth": check_growth(spec, r_min),
        "c1_positive": _guarded(lambda: check_positivity(spec, region, grid)),
        "c2_superlinear": _guarded(lambda: check_superlinearity(source, region, grid)),
        "c3_monotone": None,
        "c3_f_monotone": None,
        "existence": [],
        "threshold": None,
        "klk_residual": None,
        "f_superlinear": _guarded(lambda: check_superlinearity(spec.f, region, grid)) if has_g else None,
        "f_dominates_l": _guarded(lambda: check_dominance(spec, region, grid)) if has_g else None,
        "F_superlinear": None,
        "F_z_superlinear": None,
        "F_monotone_t": None,
    }
    if not items["growth"].finite:
        return CriterionReport(**items, verdict="NoSolutionExpected")

    try:
        transform = build_transform(spec, r_min)
    except BlowupLabError as error:
        failure = CheckError(type(error).__name__, str(error))
        items.update(existence=failure, klk_residual=failure)
        return CriterionReport(**items, verdict="Inconclusive")

    items["c3_monotone"] = _guarded(lambda: check_c3_monotonicity(spec, transform, "g" if has_g else "f", region, grid))
    if has_g:
        items["c3_f_monotone"] = _guarded(lambda: check_c3_monotonicity(spec, transform, "f", region, grid))
    existence = _guarded(lambda: existence_criterion(transform, spec, s_values, t0))
    items["existence"] = existence
    if not isinstance(existence, CheckError):
        threshold = existence_threshold(existence)
        items["threshold"] = threshold
        if threshold is not None:
            items["klk_residual"] = _guarded(lambda: klk_identity_residual(spec, transform, r_min, threshold))

    field = TransformedField(transform)
    radii, values = _grid(region, grid)
    t_values = np.asarray(eval_p(transform, radii))
    items["F_superlinear"] = _guarded(lambda: check_field_superlinearity(field, t_values, values))
    items["F_z_superlinear"] = _guarded(lambda: check_field_superlinearity(field, t_values, values, derivative=True))
    items["F_monotone_t"] = _guarded(lambda: check_field_monotonicity(field, t_values, values))
    return CriterionReport(**items, verdict=_decide(items["growth"], existence, items["c2_superlinear"]))


def extension_experiment(
    transform: TransformMap, t0: float, t1: float, s1: float, ctrl: SolverControl = SolverControl(), which: Which = "l"
) -> ExtensionResult:
    """Dirichlet problem with equal data s1 on [t0, t1], continued until it blows up.

    Uses the comparison field l = g / 2 by default. A blow-up at t2 < 0 is reported
    with its radius r2 = p^(-1)(t2), the outer radius of a blow-up annulus.
    """
    field = comparison_field(transform) if which == "l" else TransformedField(transform)
    t2, solution = dirichlet_extension_experiment(field, t0, t1, s1, ctrl)
    r2 = None
    if t2 is not None and t2 < 0.0:
        r2 = float(eval_p_inverse(transform, t2))
    return ExtensionResult(t2, r2, solution)
