"""Fixed-grid ODE integration, interpolation, quadrature and small solves.

Everything here works on a shared uniform time grid. Trajectories store one
array per node, stacked along axis 0, so a state of any shape (a single
vector, a batch of vectors, a flattened matrix) can be integrated as-is.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.integrate
import scipy.linalg

from moen.errors import NonFiniteError, OutOfRangeError, SingularError

PIVOT_TOL = 1e-12
TIME_SLACK = 1e-9

FORWARD = "forward"
BACKWARD = "backward"


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [t0, t1] with ``steps`` intervals."""

    t0: float
    t1: float
    steps: int

    def __post_init__(self):
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")
        if not self.t1 > self.t0:
            raise ValueError(f"need t1 > t0, got [{self.t0}, {self.t1}]")

    @property
    def h(self) -> float:
        return (self.t1 - self.t0) / self.steps

    @property
    def nodes(self) -> np.ndarray:
        return self.t0 + np.arange(self.steps + 1) * self.h

    def __len__(self):
        return self.steps + 1


@dataclass(frozen=True)
class GridTrajectory:
    """Values of some quantity sampled at every node of ``grid``."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape[0] != len(self.grid):
            raise ValueError(
                f"expected {len(self.grid)} node values, got {values.shape[0]}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def times(self) -> np.ndarray:
        return self.grid.nodes

    def __call__(self, t: float) -> np.ndarray:
        return eval_at(self, t)

    def __getitem__(self, k):
        return self.values[k]


def _check_finite(x, t):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite state at t={t:.6g}", time=t)


def rk4_step(rhs, t, x, h):
    k1 = rhs(t, x)
    k2 = rhs(t + 0.5 * h, x + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, x + 0.5 * h * k2)
    k4 = rhs(t + h, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    start_value,
    grid: TimeGrid,
    direction: str = FORWARD,
    project: Callable[[np.ndarray], np.ndarray] | None = None,
) -> GridTrajectory:
    """Classical RK4 on ``grid``.

    ``direction="backward"`` treats ``start_value`` as the value at ``t1`` and
    steps towards ``t0`` with a negated step. The result is always indexed
    from ``t0`` to ``t1``. ``project`` is applied to the state after every
    step (used to re-symmetrize Riccati iterates).
    """
    x = np.array(start_value, dtype=float)
    _check_finite(x, grid.t0 if direction == FORWARD else grid.t1)
    M = grid.steps
    out = np.empty((M + 1,) + x.shape)
    nodes = grid.nodes
    if direction == FORWARD:
        order, h = range(M), grid.h
        out[0] = x
    elif direction == BACKWARD:
        order, h = range(M, 0, -1), -grid.h
        out[M] = x
    else:
        raise ValueError(f"unknown direction {direction!r}")

    for k in order:
        x = rk4_step(rhs, nodes[k], x, h)
        if project is not None:
            x = project(x)
        nxt = k + 1 if direction == FORWARD else k - 1
        _check_finite(x, nodes[nxt])
        out[nxt] = x
    return GridTrajectory(grid, out)


def eval_at(traj: GridTrajectory, t: float) -> np.ndarray:
    """Piecewise-linear interpolation; exact at nodes."""
    g = traj.grid
    if t < g.t0 - TIME_SLACK or t > g.t1 + TIME_SLACK:
        raise OutOfRangeError(f"t={t} outside [{g.t0}, {g.t1}]")
    s = (t - g.t0) / g.h
    k = round(s)
    if abs(s - k) <= 1e-9 * max(1.0, abs(s)):
        return traj.values[min(max(k, 0), g.steps)]
    k = min(max(int(np.floor(s)), 0), g.steps - 1)
    frac = min(max(s - k, 0.0), 1.0)
    v = traj.values
    return (1.0 - frac) * v[k] + frac * v[k + 1]


def trapezoid(integrand: GridTrajectory) -> float | np.ndarray:
    """Composite trapezoid rule over the grid (axis 0)."""
    return scipy.integrate.trapezoid(integrand.values, dx=integrand.grid.h, axis=0)


def cumulative_trapezoid(integrand: GridTrajectory) -> np.ndarray:
    """Running trapezoid integral from t0, one value per node (starts at 0)."""
    return scipy.integrate.cumulative_trapezoid(
        integrand.values, dx=integrand.grid.h, axis=0, initial=0.0
    )


def trapezoid_weights(grid: TimeGrid) -> np.ndarray:
    w = np.full(len(grid), grid.h)
    w[0] = w[-1] = 0.5 * grid.h
    return w


def solve_dense(M, b, ridge: float = 0.0) -> np.ndarray:
    """Solve ``(M + ridge*I) x = b`` by LU with partial pivoting.

    Raises SingularError when a pivot of the factorization falls below
    ``PIVOT_TOL`` in magnitude. ``b`` may hold several right-hand sides as
    columns.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if ridge:
        M = M + ridge * np.eye(M.shape[0])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(M, check_finite=False)
    if np.min(np.abs(np.diag(lu))) < PIVOT_TOL:
        raise SingularError(f"pivot below {PIVOT_TOL:g} (ridge={ridge:g})")
    return scipy.linalg.lu_solve((lu, piv), np.asarray(b, dtype=float), check_finite=False)
