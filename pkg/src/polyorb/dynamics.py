"""Vector fields, variational flows, and conserved quantities.

State layout conventions:

* reduced states are flat ``(6,)`` arrays ``x = (u, v)`` holding the
  generating particle's position and velocity;
* full states are flat ``(6N,)`` arrays, all positions then all
  velocities, particle ordering matching the group's element ordering.

The reduced acceleration is

    dv/dt = sum_{R != I} (I - R) u / |(R - I) u|^3  -  Q u / |u|^3

in normalized units (unit electron charge and mass, unit force constant).
An optional time-periodic forcing ``-eps * psi(t)`` is superimposed while
homotopy continuation is running; ``psi`` lives in :mod:`polyorb.seeding`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .errors import CollisionError, IntegrationError
from .symmetry import PolyhedralGroup, TwistSpec

#: every interparticle and nucleus distance must stay above this
COLLISION_GUARD = 1e-8


@dataclass(frozen=True)
class IntegratorConfig:
    """Tolerances and step bounds for the adaptive Runge-Kutta integrator."""

    rtol: float = 1e-12
    atol: float = 1e-12
    max_step: float = np.inf
    min_step: float = 0.0

    def __post_init__(self):
        for name, tol in (("rtol", self.rtol), ("atol", self.atol)):
            if not 0.0 < tol <= 1e-3:
                raise ValueError(f"{name} must lie in (0, 1e-3], got {tol}")


@dataclass(frozen=True)
class ProblemParams:
    """Physical and numerical parameters of one orbit computation.

    ``charge`` is the central positive charge Q.  ``epsilon`` weights the
    seed forcing (zero for the physical system; the continuation stage
    sweeps it from one to zero).  ``interactions=False`` switches off the
    electron pair terms, leaving a central-force problem with a known
    circular solution; this is the standard diagnostic configuration.
    """

    charge: float
    group: PolyhedralGroup
    twist: TwistSpec
    epsilon: float = 0.0
    forcing: Callable[[float], np.ndarray] | None = None
    period: float = 1.0
    interactions: bool = True
    ode: IntegratorConfig = field(default_factory=IntegratorConfig)

    def __post_init__(self):
        if self.charge <= 0.0:
            raise ValueError("central charge must be positive")
        if self.period != 1.0:
            raise ValueError("the period is normalized to 1")
        # slight slack below zero: continuation steps may overshoot the
        # epsilon=0 endpoint before the stop rule fires
        if not -0.25 <= self.epsilon <= 1.0 + 1e-9:
            raise ValueError("forcing weight epsilon must lie in [0, 1]")
        stack = self.group.matrix_stack()
        bmats = stack[1:] - np.eye(3)  # element 0 is the identity
        object.__setattr__(self, "_bmats", bmats)
        object.__setattr__(self, "_bflat", np.ascontiguousarray(bmats.reshape(-1, 3)))

    @property
    def n_bodies(self) -> int:
        return len(self.group)

    @property
    def fundamental_period(self) -> float:
        """Length of the twisted boundary interval T / M."""
        return self.period / self.twist.repetitions


def _reduced_terms(u: np.ndarray, params: ProblemParams):
    """Distances entering the reduced field; raises on guard violation."""
    r = float(np.sqrt(u @ u))
    if r < COLLISION_GUARD:
        raise CollisionError("nucleus collision: |u| below guard", element=None)
    if not params.interactions:
        return r, None, None
    w = (params._bflat @ u).reshape(-1, 3)
    d = np.sqrt((w * w).sum(axis=1))
    if d.min() < COLLISION_GUARD:
        raise CollisionError(
            "partial collision: |(R - I) u| below guard",
            element=int(np.argmin(d)) + 1,
        )
    return r, w, d


def reduced_accel(u: np.ndarray, params: ProblemParams) -> np.ndarray:
    """Acceleration of the generating particle (no forcing)."""
    r, w, d = _reduced_terms(u, params)
    acc = (-params.charge / r**3) * u
    if w is not None:
        acc = acc - w.T @ d**-3
    return acc


def reduced_field(x: np.ndarray, params: ProblemParams) -> np.ndarray:
    """Unforced first-order vector field of the generating particle."""
    x = np.asarray(x, dtype=float)
    out = np.empty(6)
    out[:3] = x[3:]
    out[3:] = reduced_accel(x[:3], params)
    return out


def vector_field(t: float, x: np.ndarray, params: ProblemParams) -> np.ndarray:
    """Possibly forced right-hand side actually integrated by :func:`flow`."""
    out = reduced_field(x, params)
    if params.epsilon != 0.0 and params.forcing is not None:
        out -= params.epsilon * params.forcing(t)
    return out


def _hessian_block(u: np.ndarray, params: ProblemParams) -> np.ndarray:
    """d(acceleration)/du, i.e. the lower-left 3x3 block of the Jacobian."""
    r, w, d = _reduced_terms(u, params)
    q = params.charge
    block = (3.0 * q / r**5) * np.outer(u, u)
    block[np.diag_indices(3)] -= q / r**3
    if w is not None:
        bm = params._bmats
        block -= np.tensordot(d**-3.0, bm, axes=1)
        s = np.matmul(w[:, None, :], bm)[:, 0, :]  # rows w_k^T B_k
        block += (w * (3.0 * d**-5.0)[:, None]).T @ s
    return block


def reduced_jacobian(x: np.ndarray, params: ProblemParams) -> np.ndarray:
    """State Jacobian of the reduced field (forcing does not depend on x)."""
    x = np.asarray(x, dtype=float)
    jac = np.zeros((6, 6))
    jac[:3, 3:] = np.eye(3)
    jac[3:, :3] = _hessian_block(x[:3], params)
    return jac


def param_derivative(
    x: np.ndarray, params: ProblemParams, which: str, t: float = 0.0
) -> np.ndarray:
    """Derivative of the integrated field with respect to the parameter.

    ``which='charge'`` differentiates in Q; ``which='forcing'`` in the
    forcing weight epsilon (requires ``params.forcing``).
    """
    if which == "charge":
        u = np.asarray(x, dtype=float)[:3]
        r = float(np.linalg.norm(u))
        if r < COLLISION_GUARD:
            raise CollisionError("nucleus collision: |u| below guard")
        out = np.zeros(6)
        out[3:] = -u / r**3
        return out
    if which == "forcing":
        if params.forcing is None:
            raise ValueError("parameter 'forcing' requires params.forcing")
        return -params.forcing(t)
    raise ValueError(f"unknown continuation parameter {which!r}")


# -- full (all electrons) system ------------------------------------------


def _full_terms(pos: np.ndarray, params: ProblemParams):
    n = params.n_bodies
    r = np.linalg.norm(pos, axis=1)
    if r.min() < COLLISION_GUARD:
        raise CollisionError(
            "nucleus collision in full system", element=int(np.argmin(r))
        )
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.linalg.norm(diff, axis=2)
    off = ~np.eye(n, dtype=bool)
    if params.interactions and dist[off].min() < COLLISION_GUARD:
        i, j = np.unravel_index(np.argmin(dist + np.eye(n) * 1e300), dist.shape)
        raise CollisionError("pair collision in full system", pair=(int(i), int(j)))
    return r, diff, dist


def full_field(y: np.ndarray, params: ProblemParams) -> np.ndarray:
    """First-order field of all N electrons around the fixed nucleus."""
    n = params.n_bodies
    y = np.asarray(y, dtype=float)
    pos = y[: 3 * n].reshape(n, 3)
    r, diff, dist = _full_terms(pos, params)
    acc = (-params.charge / r**3)[:, None] * pos
    if params.interactions:
        safe = dist + np.eye(n)
        inv3 = np.where(np.eye(n, dtype=bool), 0.0, safe**-3.0)
        acc = acc + np.einsum("ij,ijk->ik", inv3, diff)
    out = np.empty(6 * n)
    out[: 3 * n] = y[3 * n :]
    out[3 * n :] = acc.ravel()
    return out


def full_jacobian(y: np.ndarray, params: ProblemParams) -> np.ndarray:
    """Dense 6N x 6N state Jacobian of the full field."""
    n = params.n_bodies
    y = np.asarray(y, dtype=float)
    pos = y[: 3 * n].reshape(n, 3)
    r, diff, dist = _full_terms(pos, params)

    # hess[i, j] is the 3x3 block d(acc_i)/d(u_j)
    hess = np.zeros((n, n, 3, 3))
    idx = np.arange(n)
    if params.interactions:
        off = ~np.eye(n, dtype=bool)
        safe = dist + np.eye(n)
        inv3 = np.where(off, safe**-3.0, 0.0)
        inv5 = np.where(off, safe**-5.0, 0.0)
        kmat = np.einsum("ij,kl->ijkl", inv3, np.eye(3)) - 3.0 * np.einsum(
            "ij,ijk,ijl->ijkl", inv5, diff, diff
        )
        hess -= kmat
        hess[idx, idx] += kmat.sum(axis=1)
    hess[idx, idx] += params.charge * (
        3.0 * np.einsum("i,ik,il->ikl", r**-5.0, pos, pos)
        - np.einsum("i,kl->ikl", r**-3.0, np.eye(3))
    )

    jac = np.zeros((6 * n, 6 * n))
    jac[: 3 * n, 3 * n :] = np.eye(3 * n)
    jac[3 * n :, : 3 * n] = hess.transpose(0, 2, 1, 3).reshape(3 * n, 3 * n)
    return jac


def symmetric_full_state(x: np.ndarray, params: ProblemParams) -> np.ndarray:
    """Lift a reduced state to the full system via u_R = R u_I, v_R = R v_I."""
    x = np.asarray(x, dtype=float)
    stack = params.group.matrix_stack()
    pos = np.einsum("kij,j->ki", stack, x[:3])
    vel = np.einsum("kij,j->ki", stack, x[3:])
    return np.concatenate([pos.ravel(), vel.ravel()])


# -- flows -----------------------------------------------------------------


@dataclass
class FlowResult:
    """Endpoint state of a flow plus optional sensitivities and dense output."""

    x: np.ndarray
    A: np.ndarray | None = None
    w: np.ndarray | None = None
    dense: object | None = None
    t0: float = 0.0
    t1: float = 0.0
    n_steps: int = 0


class _ConstantSolution:
    """Stand-in dense output for a zero-length time span."""

    def __init__(self, x):
        self._x = np.asarray(x, dtype=float)

    def __call__(self, t):
        t = np.asarray(t)
        if t.ndim == 0:
            return self._x.copy()
        return np.repeat(self._x[:, None], t.size, axis=1)


def _run_ivp(rhs, t0, t1, y0, ode: IntegratorConfig, dense: bool):
    holder = {"t": None}

    def guarded(t, y):
        holder["t"] = t
        return rhs(t, y)

    try:
        sol = solve_ivp(
            guarded,
            (t0, t1),
            y0,
            method="DOP853",
            rtol=ode.rtol,
            atol=ode.atol,
            max_step=ode.max_step,
            dense_output=dense,
        )
    except CollisionError as err:
        err.time = holder["t"]
        raise
    if not sol.success:
        raise IntegrationError(
            f"integration over [{t0}, {t1}] failed: {sol.message} "
            f"(min step {ode.min_step})"
        )
    return sol


def flow(
    x0: np.ndarray,
    t0: float,
    t1: float,
    params: ProblemParams,
    *,
    state_sensitivity: bool = False,
    param_sensitivity: str | None = None,
    dense: bool = False,
) -> FlowResult:
    """Propagate a reduced state, optionally with its variational matrices.

    With ``state_sensitivity`` the 6x6 matrix A(t) solving
    ``dA/dt = (df/dx) A, A(t0) = I`` rides along; with
    ``param_sensitivity`` in ``{'charge', 'forcing'}`` the 6-vector w(t)
    solving ``dw/dt = (df/dx) w + df/dlambda, w(t0) = 0`` does too.
    All components share one adaptive step sequence.
    """
    x0 = np.asarray(x0, dtype=float)
    if t1 == t0:
        return FlowResult(
            x=x0.copy(),
            A=np.eye(6) if state_sensitivity else None,
            w=np.zeros(6) if param_sensitivity else None,
            dense=_ConstantSolution(x0) if dense else None,
            t0=t0,
            t1=t1,
        )

    pieces = [x0]
    if state_sensitivity:
        pieces.append(np.eye(6).ravel())
    if param_sensitivity:
        pieces.append(np.zeros(6))
    y0 = np.concatenate(pieces)

    need_jac = state_sensitivity or bool(param_sensitivity)

    def rhs(t, y):
        x = y[:6]
        out = np.empty_like(y)
        out[:6] = vector_field(t, x, params)
        if need_jac:
            jac = reduced_jacobian(x, params)
        idx = 6
        if state_sensitivity:
            amat = y[6:42].reshape(6, 6)
            out[6:42] = (jac @ amat).ravel()
            idx = 42
        if param_sensitivity:
            out[idx:] = jac @ y[idx:] + param_derivative(
                x, params, param_sensitivity, t
            )
        return out

    sol = _run_ivp(rhs, t0, t1, y0, params.ode, dense)
    yend = sol.y[:, -1]
    amat = yend[6:42].reshape(6, 6).copy() if state_sensitivity else None
    wvec = yend[42 if state_sensitivity else 6 :].copy() if param_sensitivity else None
    return FlowResult(
        x=yend[:6].copy(),
        A=amat,
        w=wvec,
        dense=sol.sol if dense else None,
        t0=t0,
        t1=t1,
        n_steps=len(sol.t),
    )


def full_flow(
    y0: np.ndarray,
    t0: float,
    t1: float,
    params: ProblemParams,
    *,
    state_sensitivity: bool = False,
    dense: bool = False,
) -> FlowResult:
    """Propagate a full 6N state, optionally with its 6N x 6N sensitivity."""
    y0 = np.asarray(y0, dtype=float)
    dim = y0.size
    if t1 == t0:
        return FlowResult(
            x=y0.copy(),
            A=np.eye(dim) if state_sensitivity else None,
            dense=_ConstantSolution(y0) if dense else None,
            t0=t0,
            t1=t1,
        )
    if state_sensitivity:
        z0 = np.concatenate([y0, np.eye(dim).ravel()])
    else:
        z0 = y0

    def rhs(t, z):
        x = z[:dim]
        out = np.empty_like(z)
        out[:dim] = full_field(x, params)
        if state_sensitivity:
            amat = z[dim:].reshape(dim, dim)
            out[dim:] = (full_jacobian(x, params) @ amat).ravel()
        return out

    sol = _run_ivp(rhs, t0, t1, z0, params.ode, dense)
    zend = sol.y[:, -1]
    return FlowResult(
        x=zend[:dim].copy(),
        A=zend[dim:].reshape(dim, dim).copy() if state_sensitivity else None,
        dense=sol.sol if dense else None,
        t0=t0,
        t1=t1,
        n_steps=len(sol.t),
    )


# -- conserved quantities and the action -----------------------------------


def energy(x: np.ndarray, params: ProblemParams) -> float:
    """Conserved energy of the unforced reduced system."""
    x = np.asarray(x, dtype=float)
    u, v = x[:3], x[3:]
    r, w, d = _reduced_terms(u, params)
    val = 0.5 * float(v @ v) - params.charge / r
    if d is not None:
        val += 0.5 * float(np.sum(1.0 / d))
    return val


def _lagrangian_samples(states: np.ndarray, params: ProblemParams) -> np.ndarray:
    pos = states[:, :3]
    vel = states[:, 3:]
    r = np.linalg.norm(pos, axis=1)
    if r.min() < COLLISION_GUARD:
        raise CollisionError("nucleus collision in action samples")
    lag = 0.5 * np.einsum("mi,mi->m", vel, vel) + params.charge / r
    if params.interactions:
        w = np.einsum("kij,mj->mki", params._bmats, pos)
        d = np.sqrt(np.einsum("mki,mki->mk", w, w))
        if d.min() < COLLISION_GUARD:
            raise CollisionError("partial collision in action samples")
        lag -= 0.5 * np.sum(1.0 / d, axis=1)
    return lag


def action(times: np.ndarray, states: np.ndarray, params: ProblemParams) -> float:
    """Action of a full-period trajectory, N times the one-particle value.

    ``states`` holds dense reduced-state samples over [0, T]; the endpoint
    must close up to 1e-8 or the input is rejected as non-periodic.
    """
    from scipy.integrate import simpson

    times = np.asarray(times, dtype=float)
    states = np.asarray(states, dtype=float)
    if np.abs(states[-1] - states[0]).max() > 1e-8:
        raise ValueError("trajectory endpoints do not close: not T-periodic")
    lag = _lagrangian_samples(states, params)
    return params.n_bodies * float(simpson(lag, x=times))


def action_fundamental(
    times: np.ndarray, states: np.ndarray, params: ProblemParams
) -> float:
    """Action computed on [0, T/M] and extended by the twist factor M.

    The samples must satisfy the twisted closure x(T/M) = S x(0) to 1e-8.
    """
    from scipy.integrate import simpson

    times = np.asarray(times, dtype=float)
    states = np.asarray(states, dtype=float)
    closure = states[-1] - params.twist.S @ states[0]
    if np.abs(closure).max() > 1e-8:
        raise ValueError("samples do not satisfy the twisted closure")
    lag = _lagrangian_samples(states, params)
    reps = params.twist.repetitions
    return params.n_bodies * reps * float(simpson(lag, x=times))
