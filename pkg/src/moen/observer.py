"""Network-based minimum-energy observer.

The estimate follows

    xhat' = f(xhat) + kappa * (D_x h(t, xhat))^{-1} C^T (y - C xhat),

where ``h`` approximates the value-function gradient, so its input Jacobian
stands in for the Hessian whose inverse is the optimal gain. ``kappa`` is
``alpha`` by default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from moen.errors import SingularError
from moen.numerics import FORWARD, GridTrajectory, eval_at, integrate, solve_dense

DEFAULT_RIDGE = 1e-8


@dataclass(frozen=True)
class ObserverResult:
    xhat: GridTrajectory
    gain: GridTrajectory  # applied injection kappa*(D_x h)^{-1} C^T, row-major n*r
    conditioning: GridTrajectory  # |det D_x h| per node


def _jacobian(grad_model, t, x, symmetrize):
    J = grad_model.input_jacobian(t, x)
    if symmetrize:
        J = 0.5 * (J + J.T)
    return J


def gain_matrix(grad_model, t, x, C, ridge: float = 0.0, symmetrize: bool = False):
    """(D_x h(t, x))^{-1} C^T.

    The plain solve is tried first; ``ridge`` is only added when it reports a
    singular pivot.
    """
    J = _jacobian(grad_model, t, x, symmetrize)
    try:
        return solve_dense(J, C.T)
    except SingularError:
        if not ridge:
            raise
        return solve_dense(J, C.T, ridge=ridge)


def network_observer(
    grad_model,
    obs,
    scenario,
    alpha_in_gain: bool = True,
    ridge: float = DEFAULT_RIDGE,
    symmetrize: bool = False,
) -> ObserverResult:
    model = scenario.model
    C = model.C
    kappa = scenario.alpha if alpha_in_gain else 1.0
    y = obs.y
    grid = obs.grid

    def rhs(t, x):
        K = gain_matrix(grad_model, t, x, C, ridge, symmetrize)
        return model.f(x) + kappa * K @ (eval_at(y, t) - C @ x)

    xhat = integrate(rhs, scenario.x0_prior, grid, FORWARD)

    gains, dets = [], []
    for t, x in zip(grid.nodes, xhat.values):
        gains.append(kappa * gain_matrix(grad_model, t, x, C, ridge, symmetrize).ravel())
        dets.append(abs(np.linalg.det(_jacobian(grad_model, t, x, symmetrize))))
    return ObserverResult(
        xhat, GridTrajectory(grid, np.array(gains)), GridTrajectory(grid, np.array(dets))
    )


def rms(a, b=None) -> float:
    """Root-mean-square over nodes of ``a - b`` (or of ``a``)."""
    d = np.asarray(a, dtype=float) if b is None else np.asarray(a, float) - np.asarray(b, float)
    return float(np.sqrt(np.mean(d**2)))
