"""Multiple shooting for the twisted boundary-value problem.

Unknowns are the stacked segment start states X = (x_0, ..., x_{n-1}),
one per mesh node on [0, T/M].  The residual chains the segments together
and closes the loop through the twist matrix S:

    G_i = phi(x_{i-1}) - x_i            (interior matching)
    G_n = phi(x_{n-1}) - S x_0          (twisted closure)

Zeros are found with a damped Newton method.  Because the phase along a
periodic orbit is free, the plain Newton system is singular at solutions;
an extra row demanding the first update be orthogonal to the flow
direction restores full rank, and the resulting (6n+1) x 6n system is
solved in the least-squares sense through the SVD.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dynamics import FlowResult, ProblemParams, flow, vector_field
from .errors import CollisionError, ConvergenceError, SingularSystemError

DEFAULT_NODES = 10
DEFAULT_TOL = 1e-11
DEFAULT_MAX_ITERS = 50
DEFAULT_GAMMA_MIN = 0.1
SVD_RCOND = 1e-12


@dataclass(frozen=True)
class ShootingProblem:
    """Mesh and parameters of one twisted boundary-value problem."""

    params: ProblemParams
    nodes: int = DEFAULT_NODES
    times: np.ndarray | None = None

    def __post_init__(self):
        if self.nodes < 1:
            raise ValueError("need at least one shooting segment")
        span = self.params.fundamental_period
        if self.times is None:
            object.__setattr__(self, "times", np.linspace(0.0, span, self.nodes + 1))
        else:
            times = np.asarray(self.times, dtype=float)
            if times.size != self.nodes + 1 or times[0] != 0.0:
                raise ValueError("times must hold nodes+1 values starting at 0")
            if np.any(np.diff(times) <= 0.0):
                raise ValueError("shooting times must increase strictly")
            if times[-1] != span:
                raise ValueError("last shooting time must equal T/M")
            object.__setattr__(self, "times", times)

    @property
    def dim(self) -> int:
        return 6 * self.nodes

    def with_params(self, **changes) -> "ShootingProblem":
        return ShootingProblem(
            params=replace(self.params, **changes), nodes=self.nodes
        )

    def states(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=float).reshape(self.nodes, 6)


@dataclass
class NewtonReport:
    """Iteration trace of one damped Newton solve."""

    iterations: int
    residuals: list[float]
    dampings: list[float]
    converged: bool


def _segment_flows(
    X: np.ndarray,
    problem: ShootingProblem,
    *,
    sensitivity: bool = False,
    parameter: str | None = None,
) -> list[FlowResult]:
    states = problem.states(X)
    times = problem.times
    results = []
    for i in range(problem.nodes):
        try:
            results.append(
                flow(
                    states[i],
                    times[i],
                    times[i + 1],
                    problem.params,
                    state_sensitivity=sensitivity,
                    param_sensitivity=parameter,
                )
            )
        except CollisionError as err:
            err.args = (f"segment {i}: {err.args[0]}",) + err.args[1:]
            raise
    return results


def _assemble_residual(flows, X, problem) -> np.ndarray:
    states = problem.states(X)
    n = problem.nodes
    g = np.empty(problem.dim)
    for i, res in enumerate(flows):
        if i < n - 1:
            g[6 * i : 6 * i + 6] = res.x - states[i + 1]
        else:
            g[6 * i : 6 * i + 6] = res.x - problem.params.twist.S @ states[0]
    return g


def _assemble_jacobian(flows, problem) -> np.ndarray:
    n = problem.nodes
    jac = np.zeros((problem.dim, problem.dim))
    s = problem.params.twist.S
    for i, res in enumerate(flows):
        jac[6 * i : 6 * i + 6, 6 * i : 6 * i + 6] = res.A
        if i < n - 1:
            jac[6 * i : 6 * i + 6, 6 * (i + 1) : 6 * (i + 2)] -= np.eye(6)
        else:
            jac[6 * i : 6 * i + 6, 0:6] -= s
    return jac


def residual(X: np.ndarray, problem: ShootingProblem) -> np.ndarray:
    """Chained segment mismatches; zero exactly on twisted solutions."""
    return _assemble_residual(_segment_flows(X, problem), X, problem)


def jacobian(X: np.ndarray, problem: ShootingProblem) -> np.ndarray:
    """Block-bidiagonal derivative of the residual (corner block -S)."""
    return _assemble_jacobian(
        _segment_flows(X, problem, sensitivity=True), problem
    )


def residual_and_jacobian(X, problem):
    flows = _segment_flows(X, problem, sensitivity=True)
    return _assemble_residual(flows, X, problem), _assemble_jacobian(flows, problem)


def residual_jacobian_param(X, problem, parameter: str):
    """Residual, state Jacobian, and parameter derivative in one sweep."""
    flows = _segment_flows(X, problem, sensitivity=True, parameter=parameter)
    g = _assemble_residual(flows, X, problem)
    jac = _assemble_jacobian(flows, problem)
    dlam = np.concatenate([res.w for res in flows])
    return g, jac, dlam


def transversality_row(X: np.ndarray, problem: ShootingProblem) -> np.ndarray:
    """Row pinning the first node's update orthogonal to the flow direction."""
    row = np.zeros(problem.dim)
    x0 = problem.states(X)[0]
    row[:6] = vector_field(0.0, x0, problem.params)
    return row


def _lstsq_step(gval, jac, row, dim):
    stacked = np.vstack([jac, row])
    rhs = np.concatenate([-gval, [0.0]])
    step, _, rank, _ = np.linalg.lstsq(stacked, rhs, rcond=SVD_RCOND)
    if rank < dim - 1:
        raise SingularSystemError(
            f"shooting system rank {rank} below {dim - 1}; mesh too degenerate"
        )
    return step


def newton_step(X: np.ndarray, problem: ShootingProblem) -> np.ndarray:
    """Minimum-norm least-squares Newton update of the stacked system."""
    gval, jac = residual_and_jacobian(X, problem)
    return _lstsq_step(gval, jac, transversality_row(X, problem), problem.dim)


def damping(step_inf: float, gamma_min: float = DEFAULT_GAMMA_MIN) -> float:
    """Adaptive damping factor: full steps once the update is small."""
    return gamma_min / max(gamma_min, step_inf)


def solve(
    X_guess: np.ndarray,
    problem: ShootingProblem,
    *,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    gamma_min: float = DEFAULT_GAMMA_MIN,
) -> tuple[np.ndarray, NewtonReport]:
    """Damped Newton iteration until the residual norm drops below ``tol``.

    Returns the solution vector and an iteration report; raises
    :class:`ConvergenceError` (carrying the report) when the iteration
    budget is exhausted.
    """
    X = np.asarray(X_guess, dtype=float).copy()
    residuals: list[float] = []
    dampings: list[float] = []
    for iteration in range(max_iters + 1):
        gval, jac = residual_and_jacobian(X, problem)
        norm = float(np.abs(gval).max())
        residuals.append(norm)
        if norm <= tol:
            return X, NewtonReport(iteration, residuals, dampings, True)
        if iteration == max_iters:
            break
        step = _lstsq_step(gval, jac, transversality_row(X, problem), problem.dim)
        gamma = damping(float(np.abs(step).max()), gamma_min)
        dampings.append(gamma)
        X += gamma * step
    report = NewtonReport(max_iters, residuals, dampings, False)
    raise ConvergenceError(
        f"no convergence after {max_iters} iterations "
        f"(last residual {residuals[-1]:.3e})",
        report=report,
    )
