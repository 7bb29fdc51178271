"""State/observation models, disturbance signals and ground-truth generation.

Models follow ``x' = f(x) + G v``, ``y = C x + w``. ``f`` and ``Df`` accept a
single state of shape ``(n,)`` or a batch of shape ``(..., n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from moen.numerics import FORWARD, GridTrajectory, TimeGrid, integrate

HARMONIC_A = np.array([[0.0, 1.0], [-1.0, 0.0]])

# Duffing parameters: x1'' + delta x1' + lam x1 + beta x1^3 = forcing
DUFFING_DELTA = 0.3
DUFFING_LAMBDA = -1.0
DUFFING_BETA = 1.0


@dataclass(frozen=True)
class SystemModel:
    name: str
    f: Callable[[np.ndarray], np.ndarray]
    Df: Callable[[np.ndarray], np.ndarray]
    G: np.ndarray
    C: np.ndarray
    A: np.ndarray | None = None  # set only for linear models, f(x) = A x

    @property
    def n(self) -> int:
        return self.G.shape[0]

    @property
    def m(self) -> int:
        return self.G.shape[1]

    @property
    def r(self) -> int:
        return self.C.shape[0]

    @property
    def is_linear(self) -> bool:
        return self.A is not None

    @property
    def GGt(self) -> np.ndarray:
        return self.G @ self.G.T


def _linear(A, G, C, name):
    A = np.asarray(A, dtype=float)

    def f(x):
        return x @ A.T

    def Df(x):
        x = np.asarray(x)
        return np.broadcast_to(A, x.shape[:-1] + A.shape).copy()

    return SystemModel(name, f, Df, np.asarray(G, float), np.asarray(C, float), A=A)


def harmonic_model() -> SystemModel:
    """Undamped oscillator x1'' = -x1 + v observed through its position."""
    return _linear(HARMONIC_A, [[0.0], [1.0]], [[1.0, 0.0]], "harmonic")


def linear_model(A, G, C, name="linear") -> SystemModel:
    """Linear model ``x' = A x + G v``; a 1-D ``G`` is a column, a 1-D ``C`` a row."""
    G = np.asarray(G, dtype=float)
    G = G.reshape(-1, 1) if G.ndim == 1 else G
    return _linear(A, G, np.atleast_2d(C), name)


def duffing_model(
    delta: float = DUFFING_DELTA,
    lam: float = DUFFING_LAMBDA,
    beta: float = DUFFING_BETA,
    input_gain: float = 0.2,
) -> SystemModel:
    """Damped double-well Duffing oscillator, forcing enters with ``input_gain``."""

    def f(x):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack([x2, -delta * x2 - lam * x1 - beta * x1**3], axis=-1)

    def Df(x):
        x = np.asarray(x, dtype=float)
        x1 = x[..., 0]
        J = np.zeros(x.shape[:-1] + (2, 2))
        J[..., 0, 1] = 1.0
        J[..., 1, 0] = -lam - 3.0 * beta * x1**2
        J[..., 1, 1] = -delta
        return J

    G = np.array([[0.0], [input_gain]])
    C = np.array([[1.0, 0.0]])
    return SystemModel("duffing", f, Df, G, C)


MODELS = {"harmonic": harmonic_model, "duffing": duffing_model}


@dataclass(frozen=True)
class Signal:
    """Closed-form scalar disturbance a*cos(w t), a*sin(w t) or zero.

    ``dim`` copies the same value into every component.
    """

    kind: str = "zero"
    amplitude: float = 0.0
    frequency: float = 0.0
    dim: int = 1

    def __post_init__(self):
        if self.kind not in ("zero", "cosine", "sine"):
            raise ValueError(f"unknown signal kind {self.kind!r}")

    def __call__(self, t: float) -> np.ndarray:
        if self.kind == "cosine":
            s = self.amplitude * np.cos(self.frequency * t)
        elif self.kind == "sine":
            s = self.amplitude * np.sin(self.frequency * t)
        else:
            s = 0.0
        return np.full(self.dim, s)


ZERO = Signal()


@dataclass(frozen=True)
class Scenario:
    model: SystemModel
    x0_prior: np.ndarray
    x_true_init: np.ndarray
    v: Signal = ZERO
    w: Signal = ZERO
    T: float = 10.0
    alpha: float = 1.0
    Q0: np.ndarray = field(default=None)
    grid_steps: int = 1000

    def __post_init__(self):
        n = self.model.n
        object.__setattr__(self, "x0_prior", np.asarray(self.x0_prior, float).reshape(n))
        object.__setattr__(self, "x_true_init", np.asarray(self.x_true_init, float).reshape(n))
        Q0 = np.eye(n) if self.Q0 is None else np.asarray(self.Q0, float)
        object.__setattr__(self, "Q0", Q0)
        if not self.T > 0:
            raise ValueError(f"horizon T must be positive, got {self.T}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if Q0.shape != (n, n) or not np.allclose(Q0, Q0.T):
            raise ValueError("Q0 must be a symmetric n x n matrix")
        np.linalg.cholesky(Q0)  # raises LinAlgError unless positive definite

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(0.0, float(self.T), int(self.grid_steps))

    @property
    def zeta(self) -> np.ndarray:
        return self.x_true_init - self.x0_prior

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)


@dataclass(frozen=True)
class ObservationRecord:
    grid: TimeGrid
    y: GridTrajectory
    x_truth: GridTrajectory | None = None


def simulate_truth(scenario: Scenario) -> ObservationRecord:
    """Integrate the disturbed system forward and sample y = Cx + w."""
    model = scenario.model
    G, v = model.G, scenario.v

    def rhs(t, x):
        return model.f(x) + G @ v(t)

    grid = scenario.grid
    x = integrate(rhs, scenario.x_true_init, grid, FORWARD)
    w = np.array([scenario.w(t) for t in grid.nodes]).reshape(len(grid), model.r)
    y = x.values @ model.C.T + w
    return ObservationRecord(grid, GridTrajectory(grid, y), x)
