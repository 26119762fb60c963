"""Displacement-constrained continuation of shooting solutions.

A solution family G(X, lambda) = 0 is traced by alternating a secant
predictor with a corrector that solves

    G(X, lambda) = 0,
    |(X, lambda) - (X_i, lambda_i)|^2 = delta^2

simultaneously: the sphere equation displaces the whole couple a fixed
distance delta from the previous point, which lets the tracer walk
through turning points where lambda reverses direction.  The corrector's
stacked system (closure Jacobian, parameter column, sphere gradient,
phase row) is rectangular and is solved by SVD least squares.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import shooting
from .dynamics import action_fundamental, energy, flow
from .errors import ConvergenceError, HomotopySafetyError, PolyorbError
from .shooting import SVD_RCOND, ShootingProblem, damping
from .symmetry import distances_to_gamma

PARAMETER_FIELDS = {"charge": "charge", "epsilon": "epsilon"}
# the field's derivative in epsilon is the (negated) forcing term
PARAMETER_SENSITIVITIES = {"charge": "charge", "epsilon": "forcing"}


class StepControlExhausted(PolyorbError):
    """The step size hit its floor and the last correction still failed."""


@dataclass(frozen=True)
class StepControl:
    """Displacement step-size schedule for the tracer."""

    delta: float = 1e-2
    delta_min: float = 1e-5
    delta_max: float = 0.5
    growth: float = 2.0
    shrink: float = 0.5
    fast_iters: int = 3

    def __post_init__(self):
        if not self.delta_min <= self.delta <= self.delta_max:
            raise ValueError("delta must lie within [delta_min, delta_max]")


def adapt_step(control: StepControl, outcome: str) -> StepControl:
    """Grow the step after quick convergence, halve it after a rejection."""
    if outcome == "fast":
        return replace(control, delta=min(control.delta * control.growth, control.delta_max))
    if outcome == "ok":
        return control
    if outcome == "reject":
        if control.delta <= control.delta_min:
            raise StepControlExhausted(
                f"step rejected at the minimum displacement {control.delta_min}"
            )
        return replace(control, delta=max(control.delta * control.shrink, control.delta_min))
    raise ValueError(f"unknown step outcome {outcome!r}")


@dataclass
class ContinuationRecord:
    """One converged point of a family, with optional diagnostics."""

    lam: float
    X: np.ndarray
    residual_norm: float
    energy: float | None = None
    action: float | None = None
    gamma_distance: float | None = None
    radius_reduced: float | None = None
    radius_full: float | None = None
    conjugate_flag: bool | None = None
    classification: str | None = None
    turning_point: bool = False
    iterations: int = 0


@dataclass
class ContinuationCurve:
    """Ordered continuation records plus turning-point bookkeeping."""

    parameter: str
    records: list[ContinuationRecord]
    turning_indices: list[int] = field(default_factory=list)
    status: str = "unknown"
    meta: dict = field(default_factory=dict)

    def lambdas(self) -> np.ndarray:
        return np.array([r.lam for r in self.records])

    @property
    def min_lambda(self) -> float:
        return float(self.lambdas().min())


@dataclass(frozen=True)
class StopCriteria:
    """When to stop tracing: parameter bounds and record caps."""

    lambda_min: float = 1.0
    lambda_max: float = np.inf
    max_records: int = 2000
    stop_after_turn_at: float | None = None


class ShootingSystem:
    """Shooting problem viewed as G(X, lambda) for one named parameter."""

    def __init__(self, problem: ShootingProblem, parameter: str):
        if parameter not in PARAMETER_FIELDS:
            raise ValueError(f"unknown continuation parameter {parameter!r}")
        self.base = problem
        self.parameter = parameter

    def problem_at(self, lam: float) -> ShootingProblem:
        return self.base.with_params(**{PARAMETER_FIELDS[self.parameter]: lam})

    def residual(self, X, lam):
        return shooting.residual(X, self.problem_at(lam))

    def residual_jacobian_param(self, X, lam):
        return shooting.residual_jacobian_param(
            X, self.problem_at(lam), PARAMETER_SENSITIVITIES[self.parameter]
        )

    def anchor_row(self, X, lam):
        return shooting.transversality_row(X, self.problem_at(lam))

    def solve_fixed(self, X_guess, lam, **kwargs):
        return shooting.solve(X_guess, self.problem_at(lam), **kwargs)


def predict(
    prev: ContinuationRecord, prev2: ContinuationRecord, delta: float
) -> tuple[np.ndarray, float]:
    """Secant extrapolation scaled so the step has joint norm ``delta``."""
    dx = prev.X - prev2.X
    dlam = prev.lam - prev2.lam
    gap = float(np.sqrt(dx @ dx + dlam * dlam))
    if gap == 0.0:
        raise ValueError("previous records coincide: tangent is degenerate")
    gamma = delta / gap
    return prev.X + gamma * dx, prev.lam + gamma * dlam


def correct(
    guess: tuple[np.ndarray, float],
    anchor: ContinuationRecord,
    delta: float,
    system: ShootingSystem,
    *,
    tol: float = 1e-11,
    sphere_tol: float = 1e-10,
    max_iters: int = 25,
    gamma_min: float = 0.1,
) -> ContinuationRecord:
    """Newton-correct a predicted point onto the solution sphere."""
    X = np.asarray(guess[0], dtype=float).copy()
    lam = float(guess[1])
    for iteration in range(max_iters + 1):
        gval, jac_x, jac_lam = system.residual_jacobian_param(X, lam)
        dx = X - anchor.X
        dlam = lam - anchor.lam
        sphere = float(dx @ dx + dlam * dlam - delta * delta)
        gnorm = float(np.abs(gval).max())
        if gnorm <= tol and abs(sphere) <= sphere_tol:
            return ContinuationRecord(
                lam=lam, X=X, residual_norm=gnorm, iterations=iteration
            )
        if iteration == max_iters:
            break
        stacked = np.vstack(
            [
                np.hstack([jac_x, jac_lam[:, None]]),
                np.concatenate([2.0 * dx, [2.0 * dlam]]),
                np.concatenate([system.anchor_row(X, lam), [0.0]]),
            ]
        )
        rhs = np.concatenate([-gval, [-sphere, 0.0]])
        step, _, _, _ = np.linalg.lstsq(stacked, rhs, rcond=SVD_RCOND)
        gamma = damping(float(np.abs(step).max()), gamma_min)
        X += gamma * step[:-1]
        lam += gamma * step[-1]
    raise ConvergenceError(
        f"continuation corrector stalled at lambda={lam:.6g} (delta={delta:.3g})"
    )


def annotate_record(
    rec: ContinuationRecord,
    system: ShootingSystem,
    *,
    gamma_guard: float = 1e-3,
    samples: int = 512,
) -> ContinuationRecord:
    """Attach energy, action, and collision-axis clearance to a record.

    Aborts with :class:`HomotopySafetyError` when the orbit's position
    track approaches the axis set closer than ``gamma_guard``: such an
    orbit has slipped out of its intended homotopy class.
    """
    problem = system.problem_at(rec.lam)
    params = problem.params
    span = params.fundamental_period
    res = flow(rec.X[:6], 0.0, span, params, dense=True)
    times = np.linspace(0.0, span, samples)
    states = res.dense(times).T
    rec.energy = energy(rec.X[:6], params)
    try:
        rec.action = action_fundamental(times, states, params)
    except ValueError:
        rec.action = None
    rec.gamma_distance = float(
        distances_to_gamma(states[:, :3], params.group.axes).min()
    )
    if rec.gamma_distance < gamma_guard:
        raise HomotopySafetyError(
            f"orbit at lambda={rec.lam:.6g} comes within {rec.gamma_distance:.3e} "
            f"of a collision axis (guard {gamma_guard:.1e})"
        )
    return rec


def trace(
    start1: ContinuationRecord,
    start2: ContinuationRecord,
    system: ShootingSystem,
    *,
    control: StepControl | None = None,
    stop: StopCriteria | None = None,
    annotate: bool = True,
    gamma_guard: float = 1e-3,
    on_record=None,
) -> ContinuationCurve:
    """Walk the solution family from two seed records until a stop fires.

    Turning points are flagged wherever the parameter increment changes
    sign.  On repeated corrector failures the step is halved; when it
    bottoms out the partial curve is returned with status
    ``'step-underflow'``.
    """
    control = control or StepControl()
    stop = stop or StopCriteria()
    records = [start1, start2]
    turning: list[int] = []
    status = "max-records"
    if on_record:
        on_record(start1)
        on_record(start2)

    while len(records) < stop.max_records:
        prev2, prev = records[-2], records[-1]
        try:
            guess = predict(prev, prev2, control.delta)
            rec = correct(guess, prev, control.delta, system)
        except ConvergenceError:
            try:
                control = adapt_step(control, "reject")
            except StepControlExhausted:
                status = "step-underflow"
                break
            continue

        if annotate:
            rec = annotate_record(rec, system, gamma_guard=gamma_guard)
        if (rec.lam - prev.lam) * (prev.lam - prev2.lam) < 0.0:
            rec.turning_point = True
            turning.append(len(records))
        records.append(rec)
        if on_record:
            on_record(rec)
        outcome = "fast" if rec.iterations <= control.fast_iters else "ok"
        control = adapt_step(control, outcome)

        if rec.lam <= stop.lambda_min:
            status = "lambda-min"
            break
        if rec.lam >= stop.lambda_max:
            status = "lambda-max"
            break
        if (
            stop.stop_after_turn_at is not None
            and turning
            and rec.lam >= stop.stop_after_turn_at
        ):
            status = "post-turn-bound"
            break

    return ContinuationCurve(
        parameter=system.parameter,
        records=records,
        turning_indices=turning,
        status=status,
        meta={"final_delta": control.delta},
    )
