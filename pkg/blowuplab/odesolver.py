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
import os
import warnings
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Literal, NamedTuple

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import CubicHermiteSpline
from scipy.sparse import diags
from scipy.sparse.linalg import spsolve

from blowuplab.errors import InputError, NumericalFailure, NumericalWarning
from blowuplab.exprdsl import DomainError

JSON = dict[str, Any]
Field = Callable[[Any, Any], Any]
Classification = Literal["reached_end", "bounded_at_zero", "blow_up", "left_domain"]
TrialSide = Literal["bounded", "early", "left"]

THREADS_ENV = "BLOWUP_LAB_THREADS"

# Dormand-Prince 5(4) tableau
DOPRI_C = (0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0)
DOPRI_A = (
    (),
    (1.0 / 5.0,),
    (3.0 / 40.0, 9.0 / 40.0),
    (44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0),
    (19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0),
    (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0),
    (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0),
)
DOPRI_E = (
    35.0 / 384.0 - 5179.0 / 57600.0,
    0.0,
    500.0 / 1113.0 - 7571.0 / 16695.0,
    125.0 / 192.0 - 393.0 / 640.0,
    -2187.0 / 6784.0 + 92097.0 / 339200.0,
    11.0 / 84.0 - 187.0 / 2100.0,
    -1.0 / 40.0,
)

SAFETY = 0.9
MIN_FACTOR = 0.1
MAX_FACTOR = 4.0
STEP_UNDERFLOW = 1e-14
BLOWUP_STEP_FRACTION = 0.1
BLOWUP_FIT_STEPS = 5
LINE_SEARCH_HALVINGS = 30
ORDERING_FACTOR = 10.0


class StepUnderflow(NumericalFailure):
    """Raised when the integrator step falls below its floor without meeting tolerance.

    Carries the last accepted state (t, z, zprime) so shooting trials can classify the run.
    """

    def __init__(self, message: str, state: tuple[float, float, float] | None = None):
        super().__init__(message)
        self.state = state


class NoConvergence(NumericalFailure):
    """Raised when the Dirichlet solver exhausts both Picard and Newton budgets."""


class BracketFailure(NumericalFailure):
    """Raised when no pair of slopes brackets the requested behaviour."""


class IterationLimit(NumericalFailure):
    """Raised when an iteration budget runs out before the tolerance is met."""


class SolverControl(NamedTuple):
    tol: float = 1e-10
    z_max: float = 1e8
    rho_tol: float = 1e-9
    slope_tol: float = 1e-11
    zero_margin: float = 1e-12
    max_steps: int = 200_000
    max_bisections: int = 200
    max_doublings: int = 60
    bvp_nodes: int = 401
    picard_max: int = 200
    newton_max: int = 50


class BlowupEstimate(NamedTuple):
    t_star: float
    alpha: float
    coeff: float


class OdeSolution(NamedTuple):
    t: np.ndarray
    z: np.ndarray
    zprime: np.ndarray
    classification: Classification
    blowup: BlowupEstimate | None
    tol: float
    refit: bool = False

    @property
    def t_star(self) -> float | None:
        return None if self.blowup is None else self.blowup.t_star

    def at(self, t: Any) -> Any:
        """Cubic Hermite interpolation of z using the stored z'."""
        value = CubicHermiteSpline(self.t, self.z, self.zprime)(t)
        return float(value) if np.ndim(value) == 0 else value

    def rows(self) -> list[tuple[float, float, float]]:
        return [(float(a), float(b), float(c)) for a, b, c in zip(self.t, self.z, self.zprime)]

    def to_json(self) -> JSON:
        summary: JSON = {
            "classification": self.classification,
            "t_star": self.t_star,
            "points": int(len(self.t)),
            "t_first": float(self.t[0]),
            "t_last": float(self.t[-1]),
            "slope": float(self.zprime[0]),
            "tol": self.tol,
        }
        if self.blowup is not None:
            summary["alpha"] = self.blowup.alpha
            summary["coeff"] = self.blowup.coeff
            summary["blowup_source"] = "refit" if self.refit else "detected"
        return summary


class ShootingResult(NamedTuple):
    slope: float
    achieved_rho: float
    iterations: int
    bracket: tuple[float, float]
    solution: OdeSolution

    def to_json(self) -> JSON:
        return {
            "slope": self.slope,
            "achieved_rho": self.achieved_rho,
            "iterations": self.iterations,
            "bracket": list(self.bracket),
            "solution": self.solution.to_json(),
        }


class SequencePair(NamedTuple):
    t_bar: float
    lower: list[OdeSolution]
    lower_limit: OdeSolution
    upper: list[ShootingResult]
    upper_limit: OdeSolution
    rhos: list[float]
    ordered: bool
    max_violation: float

    def to_json(self) -> JSON:
        return {
            "t_bar": self.t_bar,
            "rhos": list(self.rhos),
            "lower_slopes": [float(solution.zprime[0]) for solution in self.lower],
            "lower_limit_slope": float(self.lower_limit.zprime[0]),
            "upper_slopes": [result.slope for result in self.upper],
            "upper_limit_slope": float(self.upper_limit.zprime[0]),
            "ordered": self.ordered,
            "max_violation": self.max_violation,
        }


def worker_count() -> int:
    """Thread pool size, capped by the BLOWUP_LAB_THREADS environment variable."""
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        count = int(raw)
    except ValueError:
        raise InputError(f"Invalid {THREADS_ENV}: {raw}. Expected a positive integer") from None
    if count < 1:
        raise InputError(f"Invalid {THREADS_ENV}: {raw}. Expected a positive integer")
    return count


def _fit_blowup(ts: Sequence[float], zs: Sequence[float], vs: Sequence[float]) -> BlowupEstimate:
    """Fits z ~ C (t* - t)^(-alpha) to the last accepted steps.

    Under that ansatz z / z' = (t* - t) / alpha is linear in t, so a line through the
    last points gives t* as its root and alpha from its slope.
    """
    t = np.asarray(ts[-BLOWUP_FIT_STEPS:], dtype=float)
    z = np.asarray(zs[-BLOWUP_FIT_STEPS:], dtype=float)
    v = np.asarray(vs[-BLOWUP_FIT_STEPS:], dtype=float)
    t_last, z_last, v_last = float(t[-1]), float(z[-1]), float(v[-1])
    if not v_last > 0.0:
        return BlowupEstimate(math.inf, math.nan, math.nan)
    fallback = BlowupEstimate(t_last + z_last / v_last, 1.0, z_last * z_last / v_last)

    if len(t) < 3 or np.any(v <= 0.0):
        return fallback
    origin = t_last
    slope, intercept = np.polyfit(t - origin, z / v, 1)
    if not slope < 0.0:
        return fallback
    alpha = -1.0 / slope
    t_star = origin - intercept / slope
    if not t_star > t_last or t_star - t_last > 2.0 * alpha * z_last / v_last:
        return fallback
    return BlowupEstimate(float(t_star), float(alpha), float(z_last * (t_star - t_last) ** alpha))


def _stages(F: Field, t: float, z: float, v: float, h: float, first: float, floor: float | None) -> tuple | None:
    """One Dormand-Prince step. Returns None when a stage crosses the field's floor."""
    kz = [v]
    kv = [first]
    for i in range(1, 7):
        row = DOPRI_A[i]
        zi = z + h * sum(a * k for a, k in zip(row, kz))
        vi = v + h * sum(a * k for a, k in zip(row, kv))
        if floor is not None and zi <= floor:
            return None
        kz.append(vi)
        kv.append(float(F(t + DOPRI_C[i] * h, zi)))
    row = DOPRI_A[6]
    z_new = z + h * sum(a * k for a, k in zip(row, kz))
    v_new = v + h * sum(a * k for a, k in zip(row, kv))
    error_z = h * sum(e * k for e, k in zip(DOPRI_E, kz))
    error_v = h * sum(e * k for e, k in zip(DOPRI_E, kv))
    return z_new, v_new, kv[6], error_z, error_v


def integrate_ivp(
    F: Field,
    t0: float,
    z0: float,
    zp0: float,
    t_end: float,
    ctrl: SolverControl = SolverControl(),
    t_eval: Sequence[float] | None = None,
) -> OdeSolution:
    """Integrates z'' = F(t, z) from (t0, z0, zp0) towards t_end with Dormand-Prince 5(4).

    With t_end = 0 the run stops at -zero_margin |t0| and is classified bounded_at_zero
    unless z reaches z_max first. Reaching z_max stops the run as blow_up with t* taken
    from the fitted local asymptote. Steps land exactly on any `t_eval` points.

    Raises:
        StepUnderflow: If the step falls below 1e-14 |t| without meeting the tolerance.
        IterationLimit: If max_steps accepted steps do not reach t_end.
        EvalError: If F cannot be evaluated on the trajectory.
    """
    if not t0 < t_end <= 0.0:
        raise ValueError(f"Invalid interval: t0={t0}, t_end={t_end}. Expected t0 < t_end <= 0")
    if not (math.isfinite(z0) and math.isfinite(zp0)):
        raise ValueError(f"Invalid initial state: z0={z0}, zp0={zp0}")

    floor = getattr(F, "z_floor", None)
    t_stop = -ctrl.zero_margin * abs(t0) if t_end == 0.0 else t_end
    final: Classification = "bounded_at_zero" if t_end == 0.0 else "reached_end"
    stops = sorted({float(point) for point in (t_eval or ()) if t0 < point < t_stop})
    stops.append(t_stop)

    t, z, v = float(t0), float(z0), float(zp0)
    accel = float(F(t, z))
    ts, zs, vs = [t], [z], [v]
    h = 1e-3 * (t_stop - t0)
    stop_index = 0
    accepted = 0
    classification = final
    last_error: Exception | None = None

    while t < t_stop:
        if accepted >= ctrl.max_steps:
            raise IterationLimit(f"Integration exceeded {ctrl.max_steps} steps before t = {t_stop!r}")
        if v != 0.0:
            h = min(h, BLOWUP_STEP_FRACTION * max(abs(z), 1.0) / abs(v))
        planned = h
        target = stops[stop_index]
        landing = h >= target - t
        if landing:
            h = target - t
        elif h < STEP_UNDERFLOW * abs(t):
            if isinstance(last_error, DomainError):
                raise last_error
            raise StepUnderflow(f"Step {h!r} fell below {STEP_UNDERFLOW} |t| at t = {t!r}", (t, z, v))

        crossed = False
        try:
            step = _stages(F, t, z, v, h, accel, floor)
            crossed = step is None
        except (OverflowError, FloatingPointError, ZeroDivisionError, DomainError) as error:
            last_error, step = error, None
        if step is not None:
            z_new, v_new, accel_new, error_z, error_v = step
            crossed = floor is not None and z_new <= floor
        if crossed:
            if h * 0.25 < STEP_UNDERFLOW * abs(t):
                classification = "left_domain"
                break
            h *= 0.25
            continue
        if step is None:
            h *= 0.25
            continue

        scale_z = ctrl.tol * (1.0 + max(abs(z), abs(z_new)))
        scale_v = ctrl.tol * (1.0 + max(abs(v), abs(v_new)))
        error = max(abs(error_z) / scale_z, abs(error_v) / scale_v)
        if not (math.isfinite(error) and math.isfinite(z_new) and math.isfinite(v_new)):
            h *= 0.25
            continue

        factor = MAX_FACTOR if error == 0.0 else min(MAX_FACTOR, max(MIN_FACTOR, SAFETY * error**-0.2))
        if error > 1.0:
            h *= min(factor, 1.0)
            continue

        t = target if landing else t + h
        z, v, accel = z_new, v_new, accel_new
        ts.append(t)
        zs.append(z)
        vs.append(v)
        accepted += 1
        last_error = None
        if landing:
            stop_index += 1
            h = max(planned, h * factor)
        else:
            h *= factor

        if z >= ctrl.z_max:
            classification = "blow_up"
            break
        if z <= -ctrl.z_max:
            classification = "left_domain"
            break

    blowup = _fit_blowup(ts, zs, vs) if classification == "blow_up" else None
    return OdeSolution(np.array(ts), np.array(zs), np.array(vs), classification, blowup, ctrl.tol)


def _field_values(F: Field, t: np.ndarray, z: np.ndarray) -> np.ndarray:
    with np.errstate(all="ignore"):
        values = np.broadcast_to(np.asarray(F(t, z), dtype=float), t.shape)
    if not np.all(np.isfinite(values)):
        raise DomainError("Field is not finite on the trajectory")
    return np.array(values)


def _field_derivative(F: Field, t: np.ndarray, z: np.ndarray) -> np.ndarray:
    delta = 1e-6 * np.maximum(1.0, np.abs(z))
    floor = getattr(F, "z_floor", None)
    if floor is not None and np.any(z - delta <= floor):
        return (_field_values(F, t, z + delta) - _field_values(F, t, z)) / delta
    return (_field_values(F, t, z + delta) - _field_values(F, t, z - delta)) / (2.0 * delta)


def _bvp_slopes(t: np.ndarray, values: np.ndarray) -> np.ndarray:
    """z'(t) = int_t0^t (tau - t0)/L F - int_t^t1 (t1 - tau)/L F."""
    t0, t1 = t[0], t[-1]
    length = t1 - t0
    left = cumulative_trapezoid((t - t0) * values, t, initial=0.0)
    right_cumulative = cumulative_trapezoid((t1 - t) * values, t, initial=0.0)
    right = right_cumulative[-1] - right_cumulative
    return (left - right) / length


def solve_dirichlet_bvp(F: Field, t0: float, t1: float, s1: float, ctrl: SolverControl = SolverControl()) -> OdeSolution:
    """Solves z'' = F(t, z), z(t0) = z(t1) = s1 on a uniform grid of ctrl.bvp_nodes points.

    Picard iteration z <- s1 - int G(t, tau) F(tau, z(tau)) dtau with the Dirichlet Green's
    function of -d^2/dt^2 starts from z = s1. With trapezoidal weights the iteration is the
    fixed point form of the three-point finite-difference system, which damped Newton
    takes over when Picard stalls. F must accept numpy arrays.

    Raises:
        NoConvergence: If both Picard and Newton exhaust their budgets.
    """
    if not t0 < t1 < 0.0:
        raise ValueError(f"Invalid interval: t0={t0}, t1={t1}. Expected t0 < t1 < 0")
    if not math.isfinite(s1):
        raise ValueError(f"Invalid boundary value: {s1}")

    t = np.linspace(t0, t1, ctrl.bvp_nodes)
    spacing = (t1 - t0) / (ctrl.bvp_nodes - 1)
    inner = t[1:-1]
    green = (
        spacing
        * (np.minimum.outer(inner, inner) - t0)
        * (t1 - np.maximum.outer(inner, inner))
        / (t1 - t0)
    )

    z = np.full_like(t, s1)
    previous_update = math.inf
    stalled = 0
    converged = False
    for _ in range(ctrl.picard_max):
        try:
            values = _field_values(F, t, z)
        except DomainError:
            break
        candidate = z.copy()
        candidate[1:-1] = s1 - green @ values[1:-1]
        update = float(np.max(np.abs(candidate - z)))
        z = candidate
        if not np.all(np.isfinite(z)):
            break
        if update < ctrl.tol * max(1.0, float(np.max(np.abs(z)))):
            converged = True
            break
        stalled = stalled + 1 if update >= 0.99 * previous_update else 0
        if stalled >= 5:
            break
        previous_update = update

    if not converged:
        warnings.warn("Picard iteration stalled; switching to damped Newton", NumericalWarning)
        start = z if np.all(np.isfinite(z)) else np.full_like(t, s1)
        z = _newton_dirichlet(F, t, s1, start, ctrl)

    values = _field_values(F, t, z)
    return OdeSolution(t, z, _bvp_slopes(t, values), "reached_end", None, ctrl.tol)


def _newton_dirichlet(F: Field, t: np.ndarray, s1: float, z: np.ndarray, ctrl: SolverControl) -> np.ndarray:
    spacing = t[1] - t[0]
    count = len(t) - 2
    laplacian = diags(
        [np.ones(count - 1), -2.0 * np.ones(count), np.ones(count - 1)], [-1, 0, 1], format="csc"
    ) / spacing**2
    boundary = np.zeros(count)
    boundary[0] = boundary[-1] = s1 / spacing**2

    def residual(interior: np.ndarray) -> np.ndarray:
        full = np.concatenate([[s1], interior, [s1]])
        return laplacian @ interior + boundary - _field_values(F, t, full)[1:-1]

    interior = z[1:-1].copy()
    try:
        current = residual(interior)
    except DomainError:
        interior = np.full(count, s1)
        current = residual(interior)

    for _ in range(ctrl.newton_max):
        full = np.concatenate([[s1], interior, [s1]])
        norm = float(np.max(np.abs(current)))
        if norm <= ctrl.tol * max(1.0, float(np.max(np.abs(full)))):
            return full
        jacobian = laplacian - diags(_field_derivative(F, t, full)[1:-1], format="csc")
        delta = spsolve(jacobian, -current)
        if not np.all(np.isfinite(delta)):
            break
        damping = 1.0
        for _ in range(LINE_SEARCH_HALVINGS):
            trial = interior + damping * delta
            try:
                trial_residual = residual(trial)
            except DomainError:
                trial_residual = None
            if trial_residual is not None and np.max(np.abs(trial_residual)) < norm:
                break
            damping *= 0.5
        else:
            raise NoConvergence(
                f"Newton line search failed after {LINE_SEARCH_HALVINGS} halvings (residual {norm:.3e})"
            )
        interior, current = trial, trial_residual
        if damping * float(np.max(np.abs(delta))) < ctrl.tol * max(1.0, float(np.max(np.abs(interior)))):
            return np.concatenate([[s1], interior, [s1]])

    raise NoConvergence(
        f"Dirichlet problem did not converge within {ctrl.picard_max} Picard and {ctrl.newton_max} Newton steps"
    )


def find_blowup_extension(
    F: Field, bvp: OdeSolution, ctrl: SolverControl = SolverControl()
) -> tuple[float | None, OdeSolution]:
    """Continues a Dirichlet solution past t1 towards 0.

    Returns (t2, extended). t2 is the blow-up time when the continuation blows up before 0
    (or at 0 within the tolerance), and None when it stays bounded on [t1, 0).
    """
    values = _field_values(F, bvp.t, bvp.z)
    if np.any(values < 0.0):
        raise ValueError("Continuation requires F >= 0 on the Dirichlet solution")

    ivp = integrate_ivp(F, float(bvp.t[-1]), float(bvp.z[-1]), float(bvp.zprime[-1]), 0.0, ctrl)
    extended = OdeSolution(
        np.concatenate([bvp.t, ivp.t[1:]]),
        np.concatenate([bvp.z, ivp.z[1:]]),
        np.concatenate([bvp.zprime, ivp.zprime[1:]]),
        ivp.classification,
        ivp.blowup,
        ctrl.tol,
    )
    return ivp.t_star, extended


def _classify_trial(solution: OdeSolution, horizon: float, floor: float | None) -> TrialSide:
    if solution.classification == "left_domain":
        return "left"
    if solution.classification == "blow_up" and solution.t_star < horizon:
        return "early"
    # Trajectories that reach the floor exactly at the end have left the domain in the limit
    if floor is not None and solution.z[-1] <= floor + 1e-6 * max(1.0, abs(solution.z[0])):
        return "left"
    return "bounded"


def _run_trial(
    F: Field, t_bar: float, z_bar: float, slope: float, t_end: float, horizon: float, ctrl: SolverControl, t_eval=None
) -> tuple[TrialSide, OdeSolution | None]:
    floor = getattr(F, "z_floor", None)
    try:
        solution = integrate_ivp(F, t_bar, z_bar, slope, t_end, ctrl, t_eval)
    except StepUnderflow as error:
        if error.state is None:
            raise
        t, _, zprime = error.state
        # A rising trajectory the integrator cannot follow has met a singularity at t
        if zprime > 0.0:
            return ("early" if t < horizon else "bounded"), None
        return "left", None
    return _classify_trial(solution, horizon, floor), solution


def shoot_blowup_at(
    F: Field, t_bar: float, z_bar: float, rho: float, ctrl: SolverControl = SolverControl(), t_eval=None
) -> ShootingResult:
    """Finds the slope z'(t_bar) whose trajectory from (t_bar, z_bar) blows up at rho.

    Larger slopes blow up earlier, so the slope is bisected between a trial blowing up
    after rho (or never) and one blowing up before it.

    Raises:
        BracketFailure: If no slope blows up on one side of rho within max_doublings.
        IterationLimit: If max_bisections trials do not reach rho_tol.
    """
    if not t_bar < rho < 0.0:
        raise ValueError(f"Invalid target: t_bar={t_bar}, rho={rho}. Expected t_bar < rho < 0")
    if not z_bar > 0.0:
        raise ValueError(f"Invalid anchor value: {z_bar}. Expected z_bar > 0")

    horizon = 0.5 * rho

    def trial(slope: float) -> tuple[TrialSide, OdeSolution | None]:
        return _run_trial(F, t_bar, z_bar, slope, horizon, rho, ctrl, t_eval)

    guess = z_bar / (rho - t_bar)
    low, high, iterations = _expand_bracket(trial, guess, ctrl)
    best: tuple[float, float, OdeSolution] | None = None
    for _ in range(ctrl.max_bisections):
        middle = 0.5 * (low + high)
        side, solution = trial(middle)
        iterations += 1
        if solution is not None and solution.classification == "blow_up":
            achieved = float(solution.t_star)
            if best is None or abs(achieved - rho) < abs(best[1] - rho):
                best = (middle, achieved, solution)
            if abs(achieved - rho) < ctrl.rho_tol:
                return ShootingResult(middle, achieved, iterations, (low, high), solution)
        if side == "early":
            high = middle
        else:
            low = middle
        if high - low <= ctrl.slope_tol * max(1.0, abs(high)) and best is not None:
            warnings.warn(
                f"Slope bracket collapsed with blow-up time {best[1]!r} against target {rho!r}", NumericalWarning
            )
            return ShootingResult(best[0], best[1], iterations, (low, high), best[2])

    raise IterationLimit(f"Shooting did not reach blow-up time {rho!r} within {ctrl.max_bisections} bisections")


def _expand_bracket(trial: Callable[[float], tuple[TrialSide, OdeSolution | None]], start: float, ctrl: SolverControl):
    """Doubles the search step from `start` until a bounded and an early slope are found."""
    side, _ = trial(start)
    iterations = 1
    step = max(1.0, abs(start))
    low = high = start
    if side == "early":
        for _ in range(ctrl.max_doublings):
            low = start - step
            side, _ = trial(low)
            iterations += 1
            if side != "early":
                return low, high, iterations
            high = low
            step *= 2.0
    else:
        for _ in range(ctrl.max_doublings):
            high = start + step
            side, _ = trial(high)
            iterations += 1
            if side == "early":
                return low, high, iterations
            low = high
            step *= 2.0
    raise BracketFailure(f"No slope pair brackets the target after {ctrl.max_doublings} doublings from {start!r}")


def _critical_slope(F: Field, t_bar: float, z_bar: float, ctrl: SolverControl) -> tuple[float, float, int]:
    def trial(slope: float) -> tuple[TrialSide, OdeSolution | None]:
        return _run_trial(F, t_bar, z_bar, slope, 0.0, 0.0, ctrl)

    visited: list[tuple[float, TrialSide]] = []

    def classify(slope: float) -> TrialSide:
        side, _ = trial(slope)
        visited.append((slope, side))
        return side

    start = 0.0
    step = max(1.0, abs(z_bar / t_bar))
    side = classify(start)
    low = high = None
    left = None
    if side == "bounded":
        low = start
    elif side == "early":
        high = start
    else:
        left = start

    for _ in range(ctrl.max_doublings):
        if low is not None and high is not None:
            break
        if high is not None and left is None:
            candidate = high - step
        elif high is None:
            candidate = (low if low is not None else left) + step
        else:
            break
        step *= 2.0
        side = classify(candidate)
        if side == "bounded":
            low = candidate
        elif side == "early":
            high = candidate
        else:
            left = candidate

    if low is None and left is not None and high is not None:
        # Bounded slopes, if any, lie between domain exit and early blow-up
        for _ in range(ctrl.max_bisections):
            middle = 0.5 * (left + high)
            if middle in (left, high):
                break
            side = classify(middle)
            if side == "bounded":
                low = middle
                break
            if side == "early":
                high = middle
            else:
                left = middle

    if low is None or high is None:
        tried = ", ".join(f"{slope:.6g}:{side}" for slope, side in visited[-8:])
        raise BracketFailure(
            "No slope gives a trajectory bounded on [t_bar, 0) next to one blowing up before 0; "
            f"the existence criterion may diverge. Last trials: {tried}"
        )

    iterations = len(visited)
    for _ in range(ctrl.max_bisections):
        if high - low <= ctrl.slope_tol * max(1.0, abs(high)):
            return low, high, iterations
        middle = 0.5 * (low + high)
        if middle in (low, high):
            return low, high, iterations
        side, _ = trial(middle)
        iterations += 1
        if side == "early":
            high = middle
        else:
            low = middle
    raise IterationLimit(f"Critical slope bracket did not shrink below {ctrl.slope_tol} in {ctrl.max_bisections} steps")


def minimal_large_solution(
    F: Field, t_bar: float, z_bar: float, ctrl: SolverControl = SolverControl(), t_eval=None
) -> OdeSolution:
    """The large solution through (t_bar, z_bar) blowing up at 0, at the critical slope.

    Slopes are bisected between trajectories bounded on [t_bar, 0) and trajectories
    blowing up before 0. The returned trajectory is the midpoint of the final bracket.

    Raises:
        BracketFailure: If no bounded trajectory exists next to an early blow-up, which is
            what a divergent existence criterion produces.
        IterationLimit: If the bracket does not shrink to slope_tol.
    """
    if not t_bar < 0.0:
        raise ValueError(f"Invalid anchor time: {t_bar}. Expected t_bar < 0")
    if not z_bar > 0.0:
        raise ValueError(f"Invalid anchor value: {z_bar}. Expected z_bar > 0")

    return _minimal(F, t_bar, z_bar, ctrl, t_eval)[0]


def _minimal(F: Field, t_bar: float, z_bar: float, ctrl: SolverControl, t_eval) -> tuple[OdeSolution, float]:
    low, high, _ = _critical_slope(F, t_bar, z_bar, ctrl)
    slope = 0.5 * (low + high)
    try:
        solution = integrate_ivp(F, t_bar, z_bar, slope, 0.0, ctrl, t_eval)
    except StepUnderflow:
        slope = low
        solution = integrate_ivp(F, t_bar, z_bar, slope, 0.0, ctrl, t_eval)
    if solution.classification != "blow_up":
        # Stopped at -zero_margin |t_bar| below z_max: t* comes from the asymptote fit of the last steps
        estimate = _fit_blowup(list(solution.t), list(solution.z), list(solution.zprime))
        solution = solution._replace(classification="blow_up", blowup=estimate, refit=True)
    if abs(solution.t_star) > ctrl.rho_tol:
        warnings.warn(
            f"Minimal large solution blows up at {solution.t_star!r}, outside rho_tol = {ctrl.rho_tol}",
            NumericalWarning,
        )
    return solution, slope


def check_convexity(solution: OdeSolution, tol: float | None = None) -> bool:
    """True if z' is nondecreasing along the trajectory within ORDERING_FACTOR * tol."""
    tol = solution.tol if tol is None else tol
    slack = ORDERING_FACTOR * tol * np.maximum(1.0, np.abs(solution.zprime[1:]))
    return bool(np.all(np.diff(solution.zprime) >= -slack))


def check_ordering(lower: OdeSolution, upper: OdeSolution, tol: float) -> float:
    """Largest violation of lower <= upper at the grid points both trajectories share.

    Returns a value <= 0 when the ordering holds within ORDERING_FACTOR * tol * max(1, |z|).
    """
    shared, lower_index, upper_index = np.intersect1d(lower.t, upper.t, return_indices=True)
    if shared.size == 0:
        return -math.inf
    below = lower.z[lower_index]
    above = upper.z[upper_index]
    slack = ORDERING_FACTOR * tol * np.maximum(1.0, np.abs(above))
    return float(np.max(below - above - slack))


def build_sequences(
    F: Field, t_bar: float, m: float, M: float, K: int, ctrl: SolverControl = SolverControl()
) -> SequencePair:
    """Bounded trajectories z_k increasing to the minimal large solution through (t_bar, m),
    and trajectories Z_k through (t_bar, M) blowing up at rho_k = -|t_bar| 2^-k, decreasing
    to the minimal large solution through (t_bar, M).

    All trajectories share a geometric grid towards 0, on which the orderings
    z_1 <= ... <= z_K <= z_0 and Z_1 >= ... >= Z_K >= Z_0 are checked.
    """
    if K < 1:
        raise ValueError(f"Invalid sequence length: {K}. Expected K >= 1")
    if not (m > 0.0 and M > 0.0):
        raise ValueError(f"Invalid anchor values: m={m}, M={M}. Both must be positive")

    t_eval = list(t_bar * np.geomspace(1.0, ctrl.zero_margin * 10.0, 257)[1:])
    lower_limit, critical = _minimal(F, t_bar, m, ctrl, t_eval)

    gap = 0.5 * max(1.0, abs(critical))
    for _ in range(10):
        lower = [integrate_ivp(F, t_bar, m, critical - gap * 2.0**-k, 0.0, ctrl, t_eval) for k in range(1, K + 1)]
        if all(solution.classification == "bounded_at_zero" for solution in lower):
            break
        gap *= 0.5
    else:
        raise BracketFailure(f"No bounded trajectories below the critical slope {critical!r}")

    rhos = [-abs(t_bar) * 2.0**-k for k in range(1, K + 1)]
    with ThreadPoolExecutor(max_workers=worker_count()) as executor:
        upper = list(executor.map(lambda rho: shoot_blowup_at(F, t_bar, M, rho, ctrl, t_eval), rhos))
    upper_limit = minimal_large_solution(F, t_bar, M, ctrl, t_eval)

    violations = []
    chain = lower + [lower_limit]
    for below, above in zip(chain, chain[1:]):
        violations.append(check_ordering(below, above, ctrl.tol))
    chain = [result.solution for result in upper] + [upper_limit]
    for above, below in zip(chain, chain[1:]):
        violations.append(check_ordering(below, above, ctrl.tol))
    worst = max(violations)
    return SequencePair(float(t_bar), lower, lower_limit, upper, upper_limit, rhos, worst <= 0.0, worst)


def dirichlet_extension_experiment(
    F: Field, t0: float, t1: float, s1: float, ctrl: SolverControl = SolverControl()
) -> tuple[float | None, OdeSolution]:
    """Solves the Dirichlet problem with equal data on [t0, t1] and continues it to blow-up."""
    return find_blowup_extension(F, solve_dirichlet_bvp(F, t0, t1, s1, ctrl), ctrl)
