"""Learning the gradient surrogate from an ensemble of terminal states.

For every terminal state ``xi_j`` the closed loop ``x' = f(x) + GG^T h(t, x)``
is solved backward from ``x(T) = xi_j``; the cost

    J = mean_j [ 1/2 |x_j(0) - x0|^2_Q0
                 + 1/2 int (|G^T h(t, x_j)|^2 + alpha |y - C x_j|^2) dt ]

is minimized over the network parameters. Gradients come from the adjoint

    -p' = Df^T p + D_x h^T GG^T (p + h) - alpha C^T (y - C x),
    p(0) = -Q0 (x(0) - x0),

integrated forward in time, followed by
``grad = mean_j int D_theta h^T GG^T (h + p) dt``.

The ensemble is integrated as one batch of shape ``(d, n)``; reductions run
in a fixed order, so results do not depend on how work is split.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from moen.errors import NonFiniteError
from moen.filters import closed_loop_backward, ensemble_optimal_cost, kalman_bucy
from moen.netgain import (
    NetGain,
    NetworkShape,
    ShiftFunction,
    Theta,
    forward,
    init_params,
    input_jacobian,
    param_vjp,
    _network_input,
)
from moen.numerics import FORWARD, GridTrajectory, eval_at, integrate, trapezoid_weights
from moen.observer import DEFAULT_RIDGE, network_observer
from moen.systems import ObservationRecord, Scenario

log = logging.getLogger(__name__)

BB_RULES = ("rule1", "rule2", "alternate")


@dataclass(frozen=True)
class EnsembleSpec:
    """Terminal states, either listed explicitly or drawn around ``center``."""

    d: int = 1
    terminals: tuple | None = None
    center: tuple | None = None
    stddev: float = 0.75
    seed: int = 0

    def __post_init__(self):
        if self.terminals is not None:
            object.__setattr__(self, "d", len(self.terminals))
        if self.d < 1:
            raise ValueError("ensemble needs at least one terminal state")
        if self.terminals is None and self.center is None:
            raise ValueError("gaussian ensemble needs a center")


def sample_ensemble(spec: EnsembleSpec) -> np.ndarray:
    """Terminal states as a (d, n) array."""
    if spec.terminals is not None:
        return np.array(spec.terminals, dtype=float).reshape(spec.d, -1)
    center = np.asarray(spec.center, dtype=float)
    eta = box_muller(np.random.default_rng(spec.seed), spec.d * center.size)
    return center + spec.stddev * eta.reshape(spec.d, center.size)


def box_muller(rng: np.random.Generator, count: int) -> np.ndarray:
    """``count`` standard normals from pairs of uniforms on the given stream."""
    pairs = (count + 1) // 2
    u = rng.random((pairs, 2))
    radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))  # 1 - u lies in (0, 1]
    angle = 2.0 * np.pi * u[:, 1]
    z = np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])
    return z.ravel()[:count]


def backward_state(grad_model, xi, scenario: Scenario) -> GridTrajectory:
    """Closed-loop trajectory ending at ``xi``; ``xi`` may be a (d, n) batch."""
    return closed_loop_backward(grad_model, xi, scenario)


def _node_values(grad_model, grid, X):
    """h(t_k, X_k) for node-stacked states X of shape (M+1, ..., n)."""
    if isinstance(grad_model, NetGain):
        t = grid.nodes.reshape((-1,) + (1,) * (X.ndim - 2))
        g = forward(grad_model.theta, _network_input(grad_model.theta, t, X))
        s = grad_model.shift.at_nodes(grid)
        return g - s.reshape(s.shape[:1] + (1,) * (X.ndim - 2) + s.shape[1:])
    return np.stack([grad_model.value(t, x) for t, x in zip(grid.nodes, X)])


class _HermiteState:
    """Cubic Hermite interpolant of a closed-loop trajectory.

    Node slopes come from the closed-loop vector field, so off-node values
    are fourth-order accurate (linear interpolation would cap the adjoint at
    second order).
    """

    def __init__(self, x_traj: GridTrajectory, slopes: np.ndarray):
        self.traj = x_traj
        self.slopes = slopes
        self.grid = x_traj.grid

    def __call__(self, t):
        g = self.grid
        s = (t - g.t0) / g.h
        k = round(s)
        if abs(s - k) <= 1e-9 * max(1.0, abs(s)):
            return self.traj.values[min(max(k, 0), g.steps)]
        k = min(max(int(np.floor(s)), 0), g.steps - 1)
        u = s - k
        x0, x1 = self.traj.values[k], self.traj.values[k + 1]
        d0, d1 = self.slopes[k] * g.h, self.slopes[k + 1] * g.h
        u2, u3 = u * u, u * u * u
        return ((2 * u3 - 3 * u2 + 1) * x0 + (u3 - 2 * u2 + u) * d0
                + (-2 * u3 + 3 * u2) * x1 + (u3 - u2) * d1)


def closed_loop_slopes(grad_model, X, grid, scenario):
    model = scenario.model
    H = _node_values(grad_model, grid, X)
    return model.f(X) + H @ model.GGt.T


def adjoint_solve(grad_model, x_traj: GridTrajectory, obs: ObservationRecord,
                  scenario: Scenario) -> GridTrajectory:
    """Forward-in-time adjoint for the closed-loop cost along ``x_traj``."""
    model = scenario.model
    C, GGt, alpha = model.C, model.GGt, scenario.alpha
    y = obs.y
    x_at = _HermiteState(
        x_traj, closed_loop_slopes(grad_model, x_traj.values, x_traj.grid, scenario)
    )

    def rhs(t, p):
        x = x_at(t)
        h = grad_model.value(t, x)
        Jh = grad_model.input_jacobian(t, x)
        Df = model.Df(x)
        u = (p + h) @ GGt.T
        misfit = (eval_at(y, t) - x @ C.T) @ C
        rhs_neg = (np.einsum("...ji,...j->...i", Df, p)
                   + np.einsum("...ji,...j->...i", Jh, u)
                   - alpha * misfit)
        return -rhs_neg

    x0 = x_traj.values[0]
    p0 = -(x0 - scenario.x0_prior) @ scenario.Q0.T
    return integrate(rhs, p0, x_traj.grid, FORWARD)


def _cost_terms(grad_model, X, obs, scenario):
    """Per-sample cost from node-stacked trajectories X of shape (M+1, d, n)."""
    model = scenario.model
    grid = obs.grid
    H = _node_values(grad_model, grid, X)
    e0 = X[0] - scenario.x0_prior
    init = 0.5 * np.einsum("ji,ik,jk->j", e0, scenario.Q0, e0)
    ctrl = np.sum((H @ model.G) ** 2, axis=-1)
    resid = obs.y.values[:, None, :] - X @ model.C.T
    run = ctrl + scenario.alpha * np.sum(resid**2, axis=-1)
    w = trapezoid_weights(grid)
    return init + 0.5 * (w @ run), H


def _batch(terminals):
    return np.atleast_2d(np.asarray(terminals, dtype=float))


def reduced_cost(grad_model, terminals, obs: ObservationRecord, scenario: Scenario) -> float:
    X = backward_state(grad_model, _batch(terminals), scenario)
    per, _ = _cost_terms(grad_model, X.values, obs, scenario)
    return float(np.mean(per))


GRADIENT_METHODS = ("discrete", "continuous")


def cost_and_gradient(gain: NetGain, terminals, obs, scenario, method: str = "discrete"):
    """Reduced cost and its gradient in flat parameter order.

    ``discrete`` differentiates the computed cost exactly (reverse mode
    through the RK4 steps and the trapezoid sums). ``continuous`` integrates
    the adjoint ODE and evaluates the gradient integral by trapezoid, which
    agrees with the discrete gradient up to O(h^2).
    """
    if method == "discrete":
        return _discrete_cost_and_gradient(gain, terminals, obs, scenario)
    if method == "continuous":
        return _continuous_cost_and_gradient(gain, terminals, obs, scenario)
    raise ValueError(f"gradient method must be one of {GRADIENT_METHODS}, got {method!r}")


def _continuous_cost_and_gradient(gain: NetGain, terminals, obs, scenario):
    xi = _batch(terminals)
    X = backward_state(gain, xi, scenario)
    per, H = _cost_terms(gain, X.values, obs, scenario)
    P = adjoint_solve(gain, X, obs, scenario)
    U = (H + P.values) @ scenario.model.GGt.T
    t = obs.grid.nodes.reshape(-1, 1)
    V = gain.param_vjp(t, X.values, U)  # (M+1, d, N)
    w = trapezoid_weights(obs.grid)
    grad = np.einsum("k,kjn->n", w, V) / xi.shape[0]
    return float(np.mean(per)), grad


def _values_at(gain: NetGain, times, Z):
    """h at per-step times ``times`` (M,) and states ``Z`` (M, d, n)."""
    theta, shift = gain.theta, gain.shift
    g = forward(theta, _network_input(theta, times.reshape(-1, 1), Z))
    if shift.is_zero:
        return g
    S = shift.samples
    offs = np.column_stack([np.interp(times, S.times, S.values[:, i]) for i in range(S.values.shape[1])])
    return g - offs[:, None, :]


def _discrete_cost_and_gradient(gain: NetGain, terminals, obs, scenario):
    xi = _batch(terminals)
    model = scenario.model
    GGt, C, alpha = model.GGt, model.C, scenario.alpha
    grid = obs.grid
    t, hs, M = grid.nodes, -grid.h, grid.steps
    X = backward_state(gain, xi, scenario).values  # (M+1, d, n)
    per, H = _cost_terms(gain, X, obs, scenario)
    theta = gain.theta

    def field(times, Z):
        return model.f(Z) + _values_at(gain, times, Z) @ GGt.T

    def field_jac(times, Z):
        Jh = input_jacobian(theta, times.reshape(-1, 1), Z)
        return model.Df(Z) + GGt @ Jh

    # recompute the RK4 stages of every backward step x_{k+1} -> x_k
    T1, Tm, T4 = t[1:], t[1:] + 0.5 * hs, t[1:] + hs
    Z1 = X[1:]
    K1 = field(T1, Z1)
    Z2 = Z1 + 0.5 * hs * K1
    K2 = field(Tm, Z2)
    Z3 = Z1 + 0.5 * hs * K2
    K3 = field(Tm, Z3)
    Z4 = Z1 + hs * K3
    stages = ((T1, Z1), (Tm, Z2), (Tm, Z3), (T4, Z4))
    J1, J2, J3, J4 = (field_jac(T, Z) for T, Z in stages)

    # explicit dependence of the summed cost on each node state
    w = trapezoid_weights(grid)
    Jh_nodes = input_jacobian(theta, t.reshape(-1, 1), X)
    HG = H @ GGt.T
    resid = obs.y.values[:, None, :] - X @ C.T
    direct = w[:, None, None] * (np.einsum("kdji,kdj->kdi", Jh_nodes, HG) - alpha * resid @ C)
    direct[0] += (X[0] - scenario.x0_prior) @ scenario.Q0

    def jt(J, v):
        return np.einsum("dji,dj->di", J, v)

    c = hs / 6.0
    cot = np.empty((4,) + Z1.shape)
    lam = direct[0]
    for k in range(M):
        kb1, kb4 = c * lam, c * lam
        zb4 = jt(J4[k], kb4)
        kb3 = 2 * c * lam + hs * zb4
        zb3 = jt(J3[k], kb3)
        kb2 = 2 * c * lam + 0.5 * hs * zb3
        zb2 = jt(J2[k], kb2)
        kb1 = kb1 + 0.5 * hs * zb2
        zb1 = jt(J1[k], kb1)
        cot[:, k] = kb1, kb2, kb3, kb4
        lam = direct[k + 1] + lam + zb1 + zb2 + zb3 + zb4

    grad = np.einsum("k,kdn->n", w, param_vjp(theta, t.reshape(-1, 1), X, None, HG))
    for (T, Z), cb in zip(stages, cot):
        grad += param_vjp(theta, T.reshape(-1, 1), Z, None, cb @ GGt.T).sum(axis=(0, 1))
    return float(np.mean(per)), grad / xi.shape[0]


def reduced_gradient(gain: NetGain, terminals, obs, scenario, method: str = "discrete") -> np.ndarray:
    return cost_and_gradient(gain, terminals, obs, scenario, method)[1]


def bb_step(s_prev, y_prev, gamma_max: float, rule: str = "alternate", k: int = 0) -> float:
    """Barzilai-Borwein step, capped at ``gamma_max``.

    ``rule1`` is <s,s>/<s,y>, ``rule2`` is <s,y>/<y,y>; ``alternate`` uses
    rule1 on even ``k`` and rule2 on odd ``k``. Degenerate or non-positive
    curvature falls back to ``gamma_max``.
    """
    if rule == "alternate":
        rule = "rule1" if k % 2 == 0 else "rule2"
    s = np.asarray(s_prev, dtype=float)
    y = np.asarray(y_prev, dtype=float)
    sy = float(s @ y)
    if rule == "rule1":
        num, den = float(s @ s), sy
    elif rule == "rule2":
        num, den = sy, float(y @ y)
    else:
        raise ValueError(f"unknown BB rule {rule!r}")
    if abs(den) <= 1e-14:
        return gamma_max
    ratio = num / den
    if not ratio > 0:
        return gamma_max
    return min(gamma_max, ratio)


@dataclass
class TrainingConfig:
    scenario: Scenario
    obs: ObservationRecord
    shape: NetworkShape
    ensemble: EnsembleSpec
    iters: int = 50
    shift_at: int = 20
    gamma_max: float = 1.0
    bb_rule: str = "alternate"
    init_seed: int = 42
    init_scale: float = 0.1
    first_step: float = 1e-2
    alpha_in_gain: bool = True
    ridge: float = DEFAULT_RIDGE
    gradient: str = "discrete"

    def __post_init__(self):
        if self.iters < 0:
            raise ValueError("iters must be nonnegative")
        if self.shift_at < 0:
            raise ValueError("shift_at must be nonnegative")
        if not self.gamma_max > 0:
            raise ValueError("gamma_max must be positive")
        if self.bb_rule not in BB_RULES:
            raise ValueError(f"bb_rule must be one of {BB_RULES}")
        if not self.first_step > 0:
            raise ValueError("first_step must be positive")
        if self.gradient not in GRADIENT_METHODS:
            raise ValueError(f"gradient must be one of {GRADIENT_METHODS}")


@dataclass
class CostRecord:
    iteration: int
    J_theta: float
    J_opt: float | None
    gamma: float
    shift_active: bool


@dataclass
class TrainingState:
    theta: Theta
    grad: np.ndarray
    shift: ShiftFunction
    terminals: np.ndarray
    cost_history: list = field(default_factory=list)
    J_opt: float | None = None
    best_iteration: int = 0


def compute_shift(theta: Theta, obs, scenario, alpha_in_gain=True, ridge=DEFAULT_RIDGE):
    """Sample g_theta along the observer run with zero shift."""
    zero = ShiftFunction.zero(theta.shape.n)
    res = network_observer(NetGain(theta, zero), obs, scenario, alpha_in_gain, ridge)
    t = obs.grid.nodes.reshape(-1, 1)
    g = forward(theta, _network_input(theta, t, res.xhat.values))
    return ShiftFunction(theta.shape.n, GridTrajectory(obs.grid, g)), res


def _failing_samples(gain, terminals, scenario):
    bad = []
    for j, xi in enumerate(terminals):
        try:
            backward_state(gain, xi, scenario)
        except NonFiniteError:
            bad.append(j)
    return bad


def train(config: TrainingConfig) -> tuple[Theta, TrainingState]:
    """Gradient descent with Barzilai-Borwein steps and a one-time shift.

    At iteration ``shift_at`` the observer is run with the current network,
    ``g_s(t) = g_theta(xhat(t))`` becomes the shift and the step history is
    reset. ``shift_at > iters`` disables the shift. Returns the lowest-cost
    parameters among the iterations that share the final shift.
    """
    sc, obs = config.scenario, config.obs
    terminals = sample_ensemble(config.ensemble)
    theta = init_params(config.shape, config.init_seed, config.init_scale)
    shift = ShiftFunction.zero(config.shape.n)
    J_opt = None
    if sc.model.is_linear:
        J_opt = ensemble_optimal_cost(kalman_bucy(sc.model, obs, sc), terminals, sc.T)

    def evaluate(th, sh, k):
        gain = NetGain(th, sh)
        try:
            return cost_and_gradient(gain, terminals, obs, sc, config.gradient)
        except NonFiniteError as exc:
            bad = _failing_samples(gain, terminals, sc)
            raise NonFiniteError(
                f"closed loop diverged at iteration {k} (samples {bad}): {exc}",
                time=exc.time,
            ) from exc

    J, g = evaluate(theta, shift, 0)
    state = TrainingState(theta, g, shift, terminals, J_opt=J_opt)
    best = (np.inf, theta, 0, g)
    s_prev = y_prev = None
    gamma = 0.0
    bb_k = 0
    for k in range(config.iters + 1):
        if k == config.shift_at:
            shift, _ = compute_shift(theta, obs, sc, config.alpha_in_gain, config.ridge)
            J, g = evaluate(theta, shift, k)
            s_prev = y_prev = None
            best = (np.inf, theta, k, g)
        state.cost_history.append(
            CostRecord(k, J, J_opt, gamma, not shift.is_zero)
        )
        log.info("iter %3d  J=%.8g  gamma=%.3g", k, J, gamma)
        if J < best[0]:
            best = (J, theta, k, g)
        if k == config.iters:
            break
        if s_prev is None:
            gamma = config.first_step
            bb_k = 0
        else:
            gamma = bb_step(s_prev, y_prev, config.gamma_max, config.bb_rule, bb_k)
            bb_k += 1
        flat = theta.flatten()
        new_flat = flat - gamma * g
        theta_new = Theta.from_flat(config.shape, new_flat)
        J_new, g_new = evaluate(theta_new, shift, k + 1)
        s_prev, y_prev = new_flat - flat, g_new - g
        theta, J, g = theta_new, J_new, g_new

    state.theta, state.grad, state.shift = best[1], best[3], shift
    state.best_iteration = best[2]
    return best[1], state
