"""Seed curves, the forcing homotopy, and the end-to-end pipeline.

A seed prescribes the free-homotopy class: a closed path around chosen
collision axes, given extensionally as waypoints on the unit sphere for
the fundamental interval [0, T/M].  The waypoints are scaled to a sphere
of radius Q^(1/3) (the natural orbit scale for central charge Q),
replicated around the full period by the twist rotation, and interpolated
trigonometrically, which makes the twist closure exact and derivatives
analytic.

The seed is generally no solution, so the field is deformed: with
psi(t) = f(phi(t)) - dphi/dt the system dx/dt = f(x) - eps * psi(t) has
the seed as an exact solution at eps = 1.  Continuation in eps down to
zero, then in the central charge, yields the physical orbit family:

1. build the seed at a charge near twice the electron count,
2. continue eps from 1 until it drops below a threshold, solve the
   unforced problem directly, and solve once more at charge - 1,
3. continue the unforced family in the charge through its turning point.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import shooting
from .continuation import (
    ContinuationCurve,
    ContinuationRecord,
    ShootingSystem,
    StepControl,
    StopCriteria,
    annotate_record,
    trace,
)
from .dynamics import IntegratorConfig, ProblemParams, reduced_accel
from .errors import HomotopySafetyError, PipelineError, PolyorbError
from .shooting import ShootingProblem
from .symmetry import (
    PolyhedralGroup,
    TwistSpec,
    build_group,
    distances_to_gamma,
    element_about_axis,
    twist_matrix,
)

DEFAULT_D_MIN_FACTOR = 0.05


@dataclass(frozen=True)
class SeedCurve:
    """Twist-periodic trigonometric interpolant through scaled waypoints."""

    waypoints: np.ndarray
    radius: float
    twist: TwistSpec
    period: float
    coeffs: np.ndarray  # rfft of the full-period position samples
    n_samples: int
    d_min: float

    def _eval(self, t, derivative: int) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        k = np.arange(self.coeffs.shape[0])
        omega = 2.0 * np.pi * k / self.period
        weights = np.full(k.size, 2.0)
        weights[0] = 1.0
        if self.n_samples % 2 == 0:
            weights[-1] = 1.0
        factor = weights[:, None] * self.coeffs * (1j * omega[:, None]) ** derivative
        phase = np.exp(1j * np.outer(t, omega))  # (nt, K)
        return np.real(phase @ factor)

    def position(self, t) -> np.ndarray:
        out = self._eval(t, 0)
        return out[0] if np.isscalar(t) else out

    def velocity(self, t) -> np.ndarray:
        out = self._eval(t, 1)
        return out[0] if np.isscalar(t) else out

    def acceleration(self, t) -> np.ndarray:
        out = self._eval(t, 2)
        return out[0] if np.isscalar(t) else out

    def state(self, t) -> np.ndarray:
        """Phase-space point (position, velocity) at time t."""
        if np.isscalar(t):
            return np.concatenate([self.position(t), self.velocity(t)])
        return np.hstack([self.position(t), self.velocity(t)])


def build_seed(
    group: PolyhedralGroup,
    waypoints,
    twist: TwistSpec,
    charge: float,
    *,
    radius: float | None = None,
    d_min_factor: float = DEFAULT_D_MIN_FACTOR,
    check_samples: int = 1024,
) -> SeedCurve:
    """Interpolate waypoints into a twist-periodic seed on a sphere.

    The sphere radius defaults to the cube root of the charge; ``radius``
    overrides it (useful for placing the seed on a known orbit scale).
    Waypoints or any part of the interpolated track closer to the
    collision axes than ``d_min_factor * radius`` are rejected.
    """
    wp = np.asarray(waypoints, dtype=float)
    if wp.ndim != 2 or wp.shape[1] != 3 or wp.shape[0] < 3:
        raise ValueError("need at least three 3-vector waypoints")
    wp = wp / np.linalg.norm(wp, axis=1)[:, None]
    rho = float(radius) if radius is not None else float(charge) ** (1.0 / 3.0)
    pts = rho * wp
    d_min = d_min_factor * rho
    if distances_to_gamma(pts, group.axes).min() < d_min:
        raise HomotopySafetyError(
            "a waypoint lies closer to a collision axis than the guard "
            f"distance {d_min:.3e}"
        )

    reps = twist.repetitions
    rot = twist.twist.matrix
    blocks = []
    power = np.eye(3)
    for _ in range(reps):
        blocks.append(pts @ power.T)
        power = rot @ power
    full = np.vstack(blocks)
    n = full.shape[0]
    coeffs = np.fft.rfft(full, axis=0) / n

    seed = SeedCurve(
        waypoints=wp,
        radius=rho,
        twist=twist,
        period=1.0,
        coeffs=coeffs,
        n_samples=n,
        d_min=d_min,
    )
    track = seed.position(np.linspace(0.0, 1.0, check_samples, endpoint=False))
    if distances_to_gamma(track, group.axes).min() < d_min:
        raise HomotopySafetyError(
            "the interpolated seed track crosses the guard zone around "
            "a collision axis"
        )
    return seed


@dataclass(frozen=True)
class ForcingTerm:
    """Deficit between the field and the seed's own time derivative.

    Calling it gives psi(t) with position block identically zero and
    velocity block f_v(phi(t)) - phi''(t), so the forced system
    dx/dt = f(x) - eps * psi(t) reproduces the seed exactly at eps = 1
    and reverts to the physical field at eps = 0.
    """

    seed: SeedCurve
    params: ProblemParams

    def __call__(self, t: float) -> np.ndarray:
        pos = self.seed.position(t)
        out = np.zeros(6)
        out[3:] = reduced_accel(pos, self.params) - self.seed.acceleration(t)
        return out


def forcing(seed: SeedCurve, params: ProblemParams) -> ForcingTerm:
    """Build the forcing that makes the seed an exact solution at eps=1."""
    return ForcingTerm(seed=seed, params=replace(params, epsilon=0.0, forcing=None))


def circle_waypoints(
    axis,
    arc_angle: float,
    count: int = 8,
    *,
    polar_angle: float = np.pi / 2.0,
    phase: float = 0.0,
) -> np.ndarray:
    """Waypoints along a circle of latitude around ``axis``.

    The points cover ``arc_angle`` of azimuth (the fundamental arc for a
    twist by that angle) at the given polar angle from the axis.
    """
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    trial = np.eye(3)[int(np.argmin(np.abs(a)))]
    e1 = trial - a * (a @ trial)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(a, e1)
    az = phase + arc_angle * np.arange(count) / count
    sin_p, cos_p = np.sin(polar_angle), np.cos(polar_angle)
    return (
        sin_p * (np.cos(az)[:, None] * e1 + np.sin(az)[:, None] * e2)
        + cos_p * a
    )


# -- waypoint files ----------------------------------------------------------


@dataclass(frozen=True)
class SeedSpec:
    """Parsed waypoint file: group, twist selection, and the waypoints."""

    kind: str
    axis_index: int
    turns: float
    repetitions: int
    waypoints: np.ndarray
    name: str = ""

    def realize(self) -> tuple[PolyhedralGroup, TwistSpec]:
        group = build_group(self.kind)
        element = element_about_axis(group, self.axis_index, self.turns)
        return group, twist_matrix(element, self.repetitions)


def load_waypoints(path) -> SeedSpec:
    """Read a waypoint file: header keys then one unit 3-vector per line."""
    path = Path(path)
    header: dict[str, str] = {}
    rows: list[list[float]] = []
    for raw in path.read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, value = (part.strip() for part in line.split("=", 1))
            header[key.lower()] = value
            continue
        fields = line.split()
        if len(fields) != 3:
            raise ValueError(f"{path}: expected three coordinates, got {line!r}")
        rows.append([float(v) for v in fields])

    missing = {"group", "axis", "turns", "repetitions"} - set(header)
    if missing:
        raise ValueError(f"{path}: missing header keys {sorted(missing)}")
    return SeedSpec(
        kind=header["group"],
        axis_index=int(header["axis"]),
        turns=float(Fraction(header["turns"])),
        repetitions=int(header["repetitions"]),
        waypoints=np.array(rows),
        name=path.stem,
    )


def save_waypoints(path, spec: SeedSpec) -> None:
    path = Path(path)
    lines = [
        f"# seed waypoints: {spec.name or path.stem}",
        f"group = {spec.kind}",
        f"axis = {spec.axis_index}",
        f"turns = {Fraction(spec.turns).limit_denominator(1000)}",
        f"repetitions = {spec.repetitions}",
    ]
    lines += [
        " ".join(f"{v:.17g}" for v in row) for row in np.asarray(spec.waypoints)
    ]
    path.write_text("\n".join(lines) + "\n")


# -- pipeline ----------------------------------------------------------------


def _stage(name):
    class _StageGuard:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and isinstance(exc, PolyorbError):
                raise PipelineError(name, str(exc), cause=exc) from exc
            return False

    return _StageGuard()


def run_pipeline(
    group: PolyhedralGroup,
    waypoints,
    twist: TwistSpec,
    *,
    charge_start: float | None = None,
    interactions: bool = True,
    ode: IntegratorConfig | None = None,
    nodes: int = shooting.DEFAULT_NODES,
    tol: float = shooting.DEFAULT_TOL,
    max_iters: int = shooting.DEFAULT_MAX_ITERS,
    gamma_min: float = shooting.DEFAULT_GAMMA_MIN,
    delta: float = 1e-2,
    delta_min: float = 1e-5,
    delta_max: float = 0.5,
    eps_stop: float = 1e-2,
    charge_min: float = 1.0,
    charge_max: float | None = None,
    max_records: int = 2000,
    stop_after_turn_at: float | None = None,
    gamma_guard: float = 1e-3,
    radius: float | None = None,
    on_record=None,
) -> ContinuationCurve:
    """Execute the three-step orbit search; returns the charge curve.

    The returned curve's ``meta`` records the forcing stage's extent and
    the starting charge.  Each stage failure raises
    :class:`PipelineError` naming the stage.
    """
    charge_start = float(charge_start or 2 * len(group))
    ode = ode or IntegratorConfig()
    solver_opts = dict(tol=tol, max_iters=max_iters, gamma_min=gamma_min)

    with _stage("seed"):
        seed = build_seed(group, waypoints, twist, charge_start, radius=radius)
        base = ProblemParams(
            charge=charge_start,
            group=group,
            twist=twist,
            interactions=interactions,
            ode=ode,
        )
        psi = forcing(seed, base)
        forced = ShootingProblem(
            replace(base, epsilon=1.0, forcing=psi), nodes=nodes
        )
        X_seed = seed.state(forced.times[:-1]).ravel()
        X_one, rep_one = shooting.solve(X_seed, forced, **solver_opts)

    with _stage("epsilon-continuation"):
        eps_system = ShootingSystem(forced, "epsilon")
        rec_one = annotate_record(
            ContinuationRecord(
                lam=1.0,
                X=X_one,
                residual_norm=rep_one.residuals[-1],
                iterations=rep_one.iterations,
            ),
            eps_system,
            gamma_guard=gamma_guard,
        )
        eps_second = 1.0 - delta
        X_two, rep_two = eps_system.solve_fixed(X_one, eps_second, **solver_opts)
        rec_two = annotate_record(
            ContinuationRecord(
                lam=eps_second,
                X=X_two,
                residual_norm=rep_two.residuals[-1],
                iterations=rep_two.iterations,
            ),
            eps_system,
            gamma_guard=gamma_guard,
        )
        eps_curve = trace(
            rec_one,
            rec_two,
            eps_system,
            control=StepControl(delta=delta, delta_min=delta_min, delta_max=delta_max),
            stop=StopCriteria(
                lambda_min=eps_stop, lambda_max=1.5, max_records=max_records
            ),
            annotate=True,
            gamma_guard=gamma_guard,
        )
        if eps_curve.status != "lambda-min":
            raise PipelineError(
                "epsilon-continuation",
                f"stopped with status {eps_curve.status!r} at "
                f"eps={eps_curve.records[-1].lam:.4g} before reaching {eps_stop}",
            )

    with _stage("epsilon-zero-solve"):
        unforced = ShootingProblem(
            replace(base, epsilon=0.0, forcing=None), nodes=nodes
        )
        X_free, rep_free = shooting.solve(
            eps_curve.records[-1].X, unforced, **solver_opts
        )

    with _stage("charge-step-solve"):
        charge_system = ShootingSystem(unforced, "charge")
        X_less, rep_less = charge_system.solve_fixed(
            X_free, charge_start - 1.0, **solver_opts
        )

    with _stage("charge-continuation"):
        rec_q = annotate_record(
            ContinuationRecord(
                lam=charge_start,
                X=X_free,
                residual_norm=rep_free.residuals[-1],
                iterations=rep_free.iterations,
            ),
            charge_system,
            gamma_guard=gamma_guard,
        )
        rec_less = annotate_record(
            ContinuationRecord(
                lam=charge_start - 1.0,
                X=X_less,
                residual_norm=rep_less.residuals[-1],
                iterations=rep_less.iterations,
            ),
            charge_system,
            gamma_guard=gamma_guard,
        )
        curve = trace(
            rec_q,
            rec_less,
            charge_system,
            control=StepControl(delta=delta, delta_min=delta_min, delta_max=delta_max),
            stop=StopCriteria(
                lambda_min=charge_min,
                lambda_max=charge_max if charge_max is not None else charge_start + 0.5,
                max_records=max_records,
                stop_after_turn_at=stop_after_turn_at,
            ),
            annotate=True,
            gamma_guard=gamma_guard,
            on_record=on_record,
        )

    curve.meta.update(
        {
            "charge_start": charge_start,
            "seed_radius": seed.radius,
            "epsilon_records": len(eps_curve.records),
            "epsilon_status": eps_curve.status,
            "interactions": interactions,
        }
    )
    return curve
