"""Residual MLP surrogate for the value-function gradient.

The network is

    g(z) = W_L a_{L-1},    a_i = sigmoid(W_i a_{i-1} + b_i) + R_i a_{i-1},

with ``a_0 = x`` (or ``(t, x)`` when the network takes time as an input).
The gradient surrogate is ``h(t, x) = g(x) - g_s(t)`` where ``g_s`` is a
parameter-free shift depending on time only.

All evaluation routines accept batches: ``x`` of shape ``(..., n)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from moen.errors import ConfigError, DimensionMismatchError
from moen.numerics import GridTrajectory, eval_at


@dataclass(frozen=True)
class NetworkShape:
    dims: tuple
    time_input: bool = False

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) < 3:
            raise ValueError("need at least L = 2 layers (three dims)")
        if min(dims) < 1:
            raise ValueError(f"layer widths must be positive, got {dims}")
        if dims[0] != dims[-1] + int(self.time_input):
            raise ValueError(
                f"input width {dims[0]} inconsistent with state dim {dims[-1]}"
                f" (time_input={self.time_input})"
            )

    @classmethod
    def default(cls, n: int, hidden: int | None = None, layers: int = 2):
        hidden = n if hidden is None else hidden
        return cls((n,) + (hidden,) * (layers - 1) + (n,))

    @property
    def L(self) -> int:
        return len(self.dims) - 1

    @property
    def n(self) -> int:
        return self.dims[-1]

    @property
    def n_params(self) -> int:
        d = self.dims
        L = self.L
        return d[L] * d[L - 1] + sum((2 * d[i - 1] + 1) * d[i] for i in range(1, L))


@dataclass(frozen=True)
class Theta:
    """Network parameters: hidden layers ``(W_i, b_i, R_i)`` and output ``W_L``."""

    shape: NetworkShape
    hidden: tuple
    W_out: np.ndarray

    def flatten(self) -> np.ndarray:
        parts = []
        for W, b, R in self.hidden:
            parts += [W.ravel(), b.ravel(), R.ravel()]
        parts.append(self.W_out.ravel())
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, shape: NetworkShape, vec) -> "Theta":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (shape.n_params,):
            raise DimensionMismatchError(
                f"expected {shape.n_params} parameters, got {vec.shape}"
            )
        d = shape.dims
        pos = 0

        def take(*sz):
            nonlocal pos
            k = int(np.prod(sz))
            out = vec[pos:pos + k].reshape(sz).copy()
            pos += k
            return out

        hidden = []
        for i in range(1, shape.L):
            W = take(d[i], d[i - 1])
            b = take(d[i])
            R = take(d[i], d[i - 1])
            hidden.append((W, b, R))
        W_out = take(d[-1], d[-2])
        return cls(shape, tuple(hidden), W_out)

    def __add__(self, other: "Theta") -> "Theta":
        return Theta.from_flat(self.shape, self.flatten() + other.flatten())


def init_params(shape: NetworkShape, rng_seed: int = 42, scale: float = 0.1) -> Theta:
    """Uniform[-scale, scale] weights and biases, identity-block residuals."""
    if scale < 0:
        raise ValueError("scale must be nonnegative")
    rng = np.random.default_rng(rng_seed)
    d = shape.dims
    hidden = []
    for i in range(1, shape.L):
        W = rng.uniform(-scale, scale, size=(d[i], d[i - 1]))
        b = rng.uniform(-scale, scale, size=d[i])
        R = np.eye(d[i], d[i - 1])
        hidden.append((W, b, R))
    W_out = np.eye(d[-1], d[-2]) + rng.uniform(-scale, scale, size=(d[-1], d[-2]))
    return Theta(shape, tuple(hidden), W_out)


def sigmoid(s):
    return expit(s)


def _layers(theta: Theta, z):
    """Forward pass keeping layer inputs and logistic outputs."""
    acts, sigs = [z], []
    a = z
    for W, b, R in theta.hidden:
        s = expit(a @ W.T + b)
        sigs.append(s)
        a = s + a @ R.T
        acts.append(a)
    return acts, sigs


def forward(theta: Theta, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != theta.shape.dims[0]:
        raise DimensionMismatchError(
            f"input has width {z.shape[-1]}, network expects {theta.shape.dims[0]}"
        )
    acts, _ = _layers(theta, z)
    return acts[-1] @ theta.W_out.T


def _network_input(theta: Theta, t, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != theta.shape.n:
        raise DimensionMismatchError(
            f"state has dimension {x.shape[-1]}, network expects {theta.shape.n}"
        )
    if not theta.shape.time_input:
        return x
    tt = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1])[..., None]
    return np.concatenate([tt, x], axis=-1)


class ShiftFunction:
    """Time-only offset g_s; either identically zero or sampled on a grid."""

    def __init__(self, n: int, samples: GridTrajectory | None = None):
        self.n = n
        self.samples = samples

    @classmethod
    def zero(cls, n: int) -> "ShiftFunction":
        return cls(n)

    @property
    def is_zero(self) -> bool:
        return self.samples is None

    def __call__(self, t) -> np.ndarray:
        if self.samples is None:
            return np.zeros(self.n)
        return eval_at(self.samples, t)

    def at_nodes(self, grid) -> np.ndarray:
        if self.samples is None:
            return np.zeros((len(grid), self.n))
        if self.samples.grid != grid:
            raise DimensionMismatchError("shift sampled on a different grid")
        return self.samples.values


def h_eval(theta: Theta, t, x, shift: ShiftFunction | None = None) -> np.ndarray:
    """h(t, x) = g(t, x) - g_s(t)."""
    g = forward(theta, _network_input(theta, t, x))
    if shift is None or shift.is_zero:
        return g
    return g - shift(t)


def input_jacobian(theta: Theta, t, x, shift: ShiftFunction | None = None) -> np.ndarray:
    """D_x h(t, x), shape (..., n, n). The shift is time-only and drops out."""
    z = _network_input(theta, t, x)
    acts, sigs = _layers(theta, z)
    J = None
    for (W, _, R), s in zip(theta.hidden, sigs):
        D = (s * (1.0 - s))[..., :, None] * W + R
        J = D if J is None else D @ J
    J = theta.W_out @ J
    if theta.shape.time_input:
        J = J[..., :, 1:]
    return J


def param_vjp(theta: Theta, t, x, shift, u) -> np.ndarray:
    """u^T D_theta h(t, x) in flat parameter order, shape (..., N)."""
    z = _network_input(theta, t, x)
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != theta.shape.n:
        raise DimensionMismatchError(f"cotangent has width {u.shape[-1]}")
    batch = np.broadcast_shapes(z.shape[:-1], u.shape[:-1])
    z = np.broadcast_to(z, batch + z.shape[-1:])
    u = np.broadcast_to(u, batch + u.shape[-1:])

    acts, sigs = _layers(theta, z)
    grads = [np.einsum("...i,...j->...ij", u, acts[-1]).reshape(batch + (-1,))]
    delta = u @ theta.W_out
    for (W, _, R), s, a in zip(reversed(theta.hidden), reversed(sigs), reversed(acts[:-1])):
        sd = s * (1.0 - s) * delta
        gW = np.einsum("...i,...j->...ij", sd, a).reshape(batch + (-1,))
        gR = np.einsum("...i,...j->...ij", delta, a).reshape(batch + (-1,))
        grads += [gR, sd, gW]  # reversed order, flipped below
        delta = sd @ W + delta @ R
    return np.concatenate(grads[::-1], axis=-1)


class NetGain:
    """Network gradient surrogate bound to a parameter set and a shift."""

    def __init__(self, theta: Theta, shift: ShiftFunction | None = None):
        self.theta = theta
        self.shift = ShiftFunction.zero(theta.shape.n) if shift is None else shift
        self.n = theta.shape.n

    def value(self, t, x):
        return h_eval(self.theta, t, x, self.shift)

    def input_jacobian(self, t, x):
        return input_jacobian(self.theta, t, x, self.shift)

    def param_vjp(self, t, x, u):
        return param_vjp(self.theta, t, x, self.shift, u)


# -- serialization ----------------------------------------------------------

def shape_path_for(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".shape.json")


def save_theta(path, theta: Theta) -> tuple[Path, Path]:
    """Write the flat vector (one 17-digit value per line) plus a shape sidecar."""
    path = Path(path)
    vec = theta.flatten()
    lines = [f"theta_N={vec.size}"] + [format(v, ".17g") for v in vec]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    side = shape_path_for(path)
    desc = {"dims": list(theta.shape.dims), "time_input": theta.shape.time_input}
    side.write_text(json.dumps(desc) + "\n", encoding="utf-8", newline="\n")
    return path, side


def load_theta(path, shape_path=None, expected: NetworkShape | None = None) -> Theta:
    path = Path(path)
    shape_path = shape_path_for(path) if shape_path is None else Path(shape_path)
    desc = json.loads(shape_path.read_text(encoding="utf-8"))
    try:
        shape = NetworkShape(tuple(desc["dims"]), bool(desc.get("time_input", False)))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad network shape sidecar {shape_path}: {exc}") from exc
    if expected is not None and expected != shape:
        raise ConfigError(f"theta shape {shape.dims} does not match configured {expected.dims}")

    lines = path.read_text(encoding="utf-8").split()
    if not lines or not lines[0].startswith("theta_N="):
        raise ConfigError(f"{path}: missing 'theta_N=' header")
    N = int(lines[0].split("=", 1)[1])
    vals = np.array([float(s) for s in lines[1:]])
    if N != vals.size or N != shape.n_params:
        raise ConfigError(
            f"{path}: header says {N} values, file has {vals.size},"
            f" shape needs {shape.n_params}"
        )
    return Theta.from_flat(shape, vals)
