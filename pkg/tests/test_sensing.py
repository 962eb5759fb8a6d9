import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pnpecg import sensing
from pnpecg.sensing import Measurement, SensingOperator
from pnpecg.signals import snr_db


def test_square_operator_is_orthogonal():
    A = sensing.generate_sensing_operator(4, 4, seed=0).matrix
    assert np.max(np.abs(A.T @ A - np.eye(4))) < 1e-12


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_rows_orthonormal_any_seed(seed):
    A = sensing.generate_sensing_operator(2, 8, seed).matrix
    assert np.max(np.abs(A @ A.T - np.eye(2))) < 1e-10


def test_operator_deterministic():
    a = sensing.generate_sensing_operator(30, 90, seed=17)
    b = sensing.generate_sensing_operator(30, 90, seed=17)
    assert a.matrix.tobytes() == b.matrix.tobytes()
    c = sensing.generate_sensing_operator(30, 90, seed=18)
    assert not np.array_equal(a.matrix, c.matrix)


def test_operator_spans_gaussian_rows():
    # orthonormalization must keep the row space of the Gaussian draw
    G = np.random.default_rng(5).standard_normal((6, 20))
    A = sensing.generate_sensing_operator(6, 20, seed=5).matrix
    proj = A.T @ A
    assert np.max(np.abs(G @ proj - G)) < 1e-10


def test_operator_argument_errors():
    with pytest.raises(ValueError):
        sensing.generate_sensing_operator(9, 8, 0)
    with pytest.raises(ValueError):
        sensing.generate_sensing_operator(0, 8, 0)
    with pytest.raises(ValueError):
        SensingOperator(np.zeros((5, 3)))


def test_forward_examples():
    op = sensing.generate_sensing_operator(10, 40, seed=1)
    assert np.all(sensing.forward(op, np.zeros(40)).y == 0)
    rng = np.random.default_rng(2)
    for x in rng.standard_normal((20, 40)):
        assert np.linalg.norm(op.forward(x)) <= np.linalg.norm(x) * (1 + 1e-12)
    with pytest.raises(ValueError):
        op.forward(np.zeros(39))


def test_forward_vs_naive_loop():
    op = sensing.generate_sensing_operator(7, 19, seed=3)
    x = np.random.default_rng(4).standard_normal(19)
    A = op.matrix.tolist()
    naive = []
    for row in A:
        acc = 0.0
        for a, v in zip(row, x.tolist()):
            acc += a * v
        naive.append(acc)
    naive = np.array(naive)
    assert np.linalg.norm(op.forward(x) - naive) <= 1e-12 * np.linalg.norm(naive)


def test_adjoint_consistency():
    rng = np.random.default_rng(5)
    op = sensing.generate_sensing_operator(12, 30, seed=6)
    for _ in range(20):
        x, u = rng.standard_normal(30), rng.standard_normal(12)
        lhs, rhs = op.forward(x) @ u, x @ op.adjoint(u)
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_padded_operator():
    op = sensing.generate_sensing_operator(5, 12, seed=7)
    big = op.padded(15)
    x = np.random.default_rng(8).standard_normal(15)
    np.testing.assert_array_equal(big.forward(x), op.forward(x[:12]))
    assert big.orthonormal_rows and np.all(big.matrix[:, 12:] == 0)
    with pytest.raises(ValueError):
        op.padded(11)


# -- noise ----------------------------------------------------------------------


def _meas(seed=9, m=50):
    return Measurement(np.random.default_rng(seed).standard_normal(m))


def test_noise_zero_db():
    meas = _meas()
    noisy = sensing.add_noise_at_snr(meas, 0.0, seed=1)
    n = noisy.y - meas.y
    assert abs(np.linalg.norm(n) - np.linalg.norm(meas.y)) <= 1e-12 * np.linalg.norm(meas.y)


def test_noise_twenty_db_and_record():
    meas = _meas()
    noisy = sensing.add_noise_at_snr(meas, 20.0, seed=2)
    assert snr_db(meas.y, noisy.y) == pytest.approx(20.0, abs=1e-9)
    assert noisy.target_snr_db == 20.0 and noisy.noise_seed == 2
    n = noisy.y - meas.y
    assert noisy.noise_sigma == pytest.approx(np.linalg.norm(n) / math.sqrt(50), rel=1e-12)


def test_noise_infinite_snr_unchanged():
    meas = _meas()
    assert sensing.add_noise_at_snr(meas, math.inf, seed=3) is meas


def test_noise_deterministic_and_errors():
    meas = _meas()
    a = sensing.add_noise_at_snr(meas, 10.0, seed=4)
    b = sensing.add_noise_at_snr(meas, 10.0, seed=4)
    assert a.y.tobytes() == b.y.tobytes()
    with pytest.raises(ValueError):
        sensing.add_noise_at_snr(Measurement(np.zeros(5)), 10.0, seed=0)


# -- gradient and step size ------------------------------------------------------


def test_gradient_examples():
    op = sensing.generate_sensing_operator(8, 20, seed=10)
    x = np.random.default_rng(11).standard_normal(20)
    meas = sensing.forward(op, x)
    assert np.max(np.abs(sensing.data_gradient(op, x, meas))) < 1e-14
    np.testing.assert_allclose(sensing.data_gradient(op, np.zeros(20), meas), -op.adjoint(meas.y), atol=0)
    with pytest.raises(ValueError):
        sensing.data_gradient(op, np.zeros(19), meas)


def test_gradient_central_difference():
    rng = np.random.default_rng(12)
    op = sensing.generate_sensing_operator(8, 20, seed=13)
    meas = Measurement(rng.standard_normal(8))
    x = rng.standard_normal(20)
    h = 1e-6
    fd = np.empty(20)
    for i in range(20):
        e = np.zeros(20)
        e[i] = h
        fd[i] = (sensing.data_fidelity(op, x + e, meas) - sensing.data_fidelity(op, x - e, meas)) / (2 * h)
    g = sensing.data_gradient(op, x, meas)
    assert np.linalg.norm(fd - g) <= 1e-6 * np.linalg.norm(g)


def test_spectral_norm_examples():
    op = sensing.generate_sensing_operator(20, 60, seed=14)
    assert sensing.spectral_norm_gram(op) == pytest.approx(1.0, abs=1e-9)
    assert sensing.spectral_norm_gram(SensingOperator(2 * op.matrix)) == pytest.approx(4.0, abs=4e-9)
    assert sensing.max_step_size(op) == pytest.approx(2.0, abs=2e-9)


@pytest.mark.parametrize("seed", range(5))
def test_spectral_norm_vs_svd(seed):
    A = np.random.default_rng(seed).standard_normal((6, 15))
    est = sensing.spectral_norm_gram(SensingOperator(A))
    oracle = np.linalg.svd(A, compute_uv=False)[0] ** 2
    assert abs(est - oracle) <= 1e-8 * oracle


@pytest.mark.parametrize("frac", [0.25, 1.0, 1.5, 2.0])
def test_gradient_map_eigenvalues(frac):
    A = np.random.default_rng(15).standard_normal((5, 12))
    op = SensingOperator(A)
    gamma = frac * sensing.max_step_size(op) / 2
    lam = np.linalg.eigvalsh(np.eye(12) - gamma * A.T @ A)
    assert lam[0] >= -1 - 1e-9 and lam[-1] <= 1 + 1e-12
