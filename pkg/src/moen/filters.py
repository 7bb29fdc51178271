"""Linear minimum-energy theory and the Riccati-based filters.

For linear dynamics the value function is known in closed form,

    V(t, xi) = 1/2 (xi - xhat)^T Sigma^{-1} (xi - xhat)
               + alpha/2 * int_0^t |y - C xhat|^2 ds,

with ``Sigma`` from the differential Riccati equation and ``xhat`` the
Kalman-Bucy estimate. These serve as exact oracles for the learned observer.
The extended Kalman filter reuses the same propagation with the Jacobian of
``f`` evaluated along the estimate.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from moen.errors import NotLinearError
from moen.numerics import (
    BACKWARD,
    FORWARD,
    GridTrajectory,
    cumulative_trapezoid,
    eval_at,
    integrate,
    solve_dense,
    trapezoid,
)
from moen.systems import ObservationRecord, Scenario


@dataclass(frozen=True)
class KalmanResult:
    xhat: GridTrajectory
    Sigma: GridTrajectory  # row-major n*n per node
    gain: GridTrajectory  # alpha * Sigma C^T, row-major n*r per node
    output_misfit: GridTrajectory  # |y - C xhat|^2
    scenario: Scenario
    obs: ObservationRecord

    @property
    def n(self) -> int:
        return self.xhat.values.shape[1]

    def sigma_at(self, k: int) -> np.ndarray:
        n = self.n
        return self.Sigma.values[k].reshape(n, n)

    @cached_property
    def sigma_inverse(self) -> GridTrajectory:
        """Sigma^{-1} at every node, shape (M+1, n, n)."""
        n = self.n
        eye = np.eye(n)
        inv = np.array([solve_dense(S.reshape(n, n), eye) for S in self.Sigma.values])
        inv = 0.5 * (inv + np.swapaxes(inv, -1, -2))
        return GridTrajectory(self.Sigma.grid, inv)

    @cached_property
    def misfit_integral(self) -> GridTrajectory:
        """alpha/2 * int_0^t |y - C xhat|^2, per node."""
        acc = 0.5 * self.scenario.alpha * cumulative_trapezoid(self.output_misfit)
        return GridTrajectory(self.output_misfit.grid, acc)


def _riccati_filter(model, obs: ObservationRecord, scenario: Scenario) -> KalmanResult:
    n, r = model.n, model.r
    C, GGt, alpha = model.C, model.GGt, scenario.alpha
    grid = scenario.grid
    if obs.grid != grid:
        raise ValueError("observation grid differs from scenario grid")
    y = obs.y

    def rhs(t, z):
        xh, S = z[:n], z[n:].reshape(n, n)
        J = model.Df(xh)
        SCt = S @ C.T
        innov = eval_at(y, t) - C @ xh
        dx = model.f(xh) + alpha * SCt @ innov
        dS = J @ S + S @ J.T + GGt - alpha * SCt @ SCt.T
        return np.concatenate([dx, dS.ravel()])

    def symmetrize(z):
        S = z[n:].reshape(n, n)
        z[n:] = (0.5 * (S + S.T)).ravel()
        return z

    Q0inv = solve_dense(scenario.Q0, np.eye(n))
    Q0inv = 0.5 * (Q0inv + Q0inv.T)
    z0 = np.concatenate([scenario.x0_prior, Q0inv.ravel()])
    z = integrate(rhs, z0, grid, FORWARD, project=symmetrize)

    xhat = z.values[:, :n]
    Sig = z.values[:, n:]
    S3 = Sig.reshape(-1, n, n)
    gain = alpha * (S3 @ C.T).reshape(-1, n * r)
    misfit = np.sum((y.values - xhat @ C.T) ** 2, axis=1)
    return KalmanResult(
        GridTrajectory(grid, xhat),
        GridTrajectory(grid, Sig),
        GridTrajectory(grid, gain),
        GridTrajectory(grid, misfit),
        scenario,
        obs,
    )


def kalman_bucy(model, obs: ObservationRecord, scenario: Scenario) -> KalmanResult:
    """Continuous-time Kalman-Bucy filter with joint Riccati propagation."""
    if not model.is_linear:
        raise NotLinearError(f"kalman_bucy needs a linear model, got {model.name!r}")
    return _riccati_filter(model, obs, scenario)


def extended_kalman(model, obs: ObservationRecord, scenario: Scenario) -> KalmanResult:
    """EKF: Riccati equation linearized along the current estimate."""
    return _riccati_filter(model, obs, scenario)


def value_linear(kr: KalmanResult, t: float, xi):
    """Closed-form value function, its gradient and Hessian at ``(t, xi)``.

    ``xi`` may be a batch of shape (d, n); V and grad are then per row.
    """
    xi = np.asarray(xi, dtype=float)
    P = eval_at(kr.sigma_inverse, t)
    e = xi - eval_at(kr.xhat, t)
    grad = e @ P.T
    V = 0.5 * np.sum(e * grad, axis=-1) + eval_at(kr.misfit_integral, t)[()]
    return V, grad, P


def ensemble_optimal_cost(kr: KalmanResult, terminals, T: float | None = None) -> float:
    """Mean of V(T, xi_j) over the terminal ensemble."""
    T = kr.scenario.T if T is None else T
    terminals = np.atleast_2d(np.asarray(terminals, dtype=float))
    if len(terminals) == 0:
        raise ValueError("empty terminal ensemble")
    V, _, _ = value_linear(kr, T, terminals)
    return float(np.mean(V))


class LinearOracle:
    """Exact value-function gradient ``Sigma(t)^{-1} (x - xhat(t))``.

    Offers the same ``value``/``input_jacobian`` surface as a network gain so
    it can be substituted wherever the learned gradient is used.
    """

    def __init__(self, kr: KalmanResult):
        self.kr = kr
        self.n = kr.n

    def value(self, t, x):
        P = eval_at(self.kr.sigma_inverse, t)
        return (np.asarray(x) - eval_at(self.kr.xhat, t)) @ P.T

    def input_jacobian(self, t, x):
        P = eval_at(self.kr.sigma_inverse, t)
        x = np.asarray(x)
        return np.broadcast_to(P, x.shape[:-1] + P.shape).copy()


def closed_loop_backward(grad_model, xi, scenario: Scenario) -> GridTrajectory:
    """x' = f(x) + G G^T h(t, x) integrated backward from x(T) = xi."""
    model = scenario.model
    GGt = model.GGt

    def rhs(t, x):
        return model.f(x) + grad_model.value(t, x) @ GGt.T

    return integrate(rhs, xi, scenario.grid, BACKWARD)


def optimal_closed_loop(kr: KalmanResult, xi, scenario: Scenario | None = None):
    """Optimal trajectory ending at ``xi`` and its disturbance G^T grad V."""
    scenario = kr.scenario if scenario is None else scenario
    if not scenario.model.is_linear:
        raise NotLinearError("optimal_closed_loop needs a linear model")
    x_opt = closed_loop_backward(LinearOracle(kr), xi, scenario)
    grad = np.einsum("kij,k...j->k...i", kr.sigma_inverse.values,
                     x_opt.values - _expand(kr.xhat.values, x_opt.values))
    v_opt = grad @ scenario.model.G
    return x_opt, GridTrajectory(x_opt.grid, v_opt)


def _expand(a, like):
    # broadcast (M+1, n) node values against (M+1, ..., n) batched values
    return a.reshape(a.shape[:1] + (1,) * (like.ndim - 2) + a.shape[1:])


def open_loop_cost(x_traj: GridTrajectory, v_traj: GridTrajectory, obs, scenario) -> float:
    """1/2|x(0)-x0|^2_Q0 + 1/2 int(|v|^2 + alpha |y - Cx|^2) by trapezoid."""
    C = scenario.model.C
    e0 = x_traj.values[0] - scenario.x0_prior
    misfit = np.sum((obs.y.values - x_traj.values @ C.T) ** 2, axis=-1)
    run = np.sum(v_traj.values**2, axis=-1) + scenario.alpha * misfit
    return 0.5 * e0 @ scenario.Q0 @ e0 + 0.5 * trapezoid(GridTrajectory(x_traj.grid, run))
