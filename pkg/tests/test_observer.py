import numpy as np
import pytest

from moen.errors import SingularError
from moen.filters import LinearOracle
from moen.netgain import NetGain, NetworkShape, Theta, init_params
from moen.observer import gain_matrix, network_observer, rms


class _Constant:
    """Gradient model with a fixed Jacobian."""

    def __init__(self, J):
        self.J = np.asarray(J, float)

    def value(self, t, x):
        return np.asarray(x) @ self.J.T

    def input_jacobian(self, t, x):
        return self.J


def test_identity_jacobian_gives_ct():
    C = np.array([[1.0, 0.0]])
    assert np.array_equal(gain_matrix(_Constant(np.eye(2)), 0.0, np.zeros(2), C), C.T)


def test_oracle_gain_is_kalman_direction(harmonic):
    sc, _, kr = harmonic
    k = 300
    t = sc.grid.nodes[k]
    K = gain_matrix(LinearOracle(kr), t, kr.xhat.values[k], sc.model.C)
    assert np.allclose(K[:, 0], kr.sigma_at(k) @ sc.model.C[0], atol=1e-10)


def test_oracle_reduction_to_kalman(harmonic):
    sc, obs, kr = harmonic
    res = network_observer(LinearOracle(kr), obs, sc, ridge=0.0)
    assert np.max(np.abs(res.xhat.values - kr.xhat.values)) <= 1e-4


def test_initial_condition_and_gain_consistency(harmonic):
    sc, obs, _ = harmonic
    gain = NetGain(init_params(NetworkShape((2, 2, 2)), 1))
    res = network_observer(gain, obs, sc, ridge=0.0)
    assert np.array_equal(res.xhat.values[0], sc.x0_prior)
    for k in (0, 250, 1000):
        t, x = sc.grid.nodes[k], res.xhat.values[k]
        K = sc.alpha * gain_matrix(gain, t, x, sc.model.C)
        assert np.max(np.abs(res.gain.values[k] - K.ravel())) <= 1e-12
        assert res.conditioning.values[k] == pytest.approx(abs(np.linalg.det(gain.input_jacobian(t, x))))


def test_alpha_flag_scales_injection(harmonic):
    sc, obs, kr = harmonic
    sc10 = sc.with_(alpha=10.0)
    gain = _Constant(np.eye(2))
    a = network_observer(gain, obs, sc10, alpha_in_gain=True)
    b = network_observer(gain, obs, sc10, alpha_in_gain=False)
    assert np.allclose(a.gain.values, 10 * b.gain.values)


def test_symmetrize_flag():
    J = np.array([[2.0, 1.0], [0.0, 1.0]])
    C = np.array([[1.0, 0.0]])
    K = gain_matrix(_Constant(J), 0.0, np.zeros(2), C, symmetrize=True)
    assert np.allclose(K, np.linalg.solve(0.5 * (J + J.T), C.T))


def test_singular_jacobian_and_ridge():
    shape = NetworkShape((2, 2, 2))
    theta = Theta(shape, ((np.zeros((2, 2)), np.zeros(2), np.zeros((2, 2))),), np.zeros((2, 2)))
    gain = NetGain(theta)
    C = np.array([[1.0, 0.0]])
    with pytest.raises(SingularError):
        gain_matrix(gain, 0.0, np.zeros(2), C, ridge=0.0)
    K = gain_matrix(gain, 0.0, np.zeros(2), C, ridge=1e-6)
    assert np.all(np.isfinite(K)) and np.allclose(K[:, 0], [1e6, 0.0])


def test_rms():
    assert rms(np.array([3.0, -3.0])) == 3.0
    assert rms(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
