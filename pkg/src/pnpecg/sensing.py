"""Random Gaussian sensing operators and simulated acquisition ``y = Phi x + n``."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import power_iteration


@dataclass(frozen=True)
class SensingOperator:
    """An M x N measurement matrix, optionally with orthonormal rows.

    Persist an operator by its ``(m, n, seed)``; :func:`generate_sensing_operator`
    regenerates it bit-for-bit.
    """

    matrix: np.ndarray
    seed: int | None = None
    orthonormal_rows: bool = False

    def __post_init__(self):
        A = np.array(self.matrix, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] > A.shape[1]:
            raise ValueError(f"sensing matrix must be M x N with M <= N, got {A.shape}")
        A.setflags(write=False)
        object.__setattr__(self, "matrix", A)

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def m(self):
        return self.matrix.shape[0]

    @property
    def n(self):
        return self.matrix.shape[1]

    def forward(self, x):
        x = np.asarray(getattr(x, "samples", x), dtype=np.float64)
        if x.shape != (self.n,):
            raise ValueError(f"expected signal of length {self.n}, got {x.shape}")
        return self.matrix @ x

    def adjoint(self, u):
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (self.m,):
            raise ValueError(f"expected measurement of length {self.m}, got {u.shape}")
        return self.matrix.T @ u

    def padded(self, n_total):
        """The operator acting on a zero-extended signal of length ``n_total``.

        The extra samples are unobserved; row orthonormality is preserved.
        """
        if n_total < self.n:
            raise ValueError("padded length shorter than signal length")
        A = np.zeros((self.m, n_total))
        A[:, : self.n] = self.matrix
        return SensingOperator(A, self.seed, self.orthonormal_rows)

    @classmethod
    def identity(cls, n):
        return cls(np.eye(n), None, True)


@dataclass(frozen=True)
class Measurement:
    y: np.ndarray
    noise_sigma: float = 0.0
    target_snr_db: float = math.inf
    noise_seed: int | None = None

    def __post_init__(self):
        y = np.array(self.y, dtype=np.float64).ravel()
        if not np.all(np.isfinite(y)):
            raise ValueError("measurement contains non-finite entries")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)


def generate_sensing_operator(m, n, seed) -> SensingOperator:
    """Standard-normal entries followed by row orthonormalization (QR)."""
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= M <= N, got M={m}, N={n}")
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((m, n))
    Q, R = np.linalg.qr(G.T)
    # sign convention that makes QR coincide with Gram-Schmidt on the rows
    Q = Q * np.where(np.diag(R) < 0, -1.0, 1.0)
    phi = np.ascontiguousarray(Q.T)
    err = np.max(np.abs(phi @ phi.T - np.eye(m)))
    if err >= 1e-10:
        raise ArithmeticError(f"row orthonormalization failed: max deviation {err:.3g}")
    return SensingOperator(phi, seed, True)


def forward(op: SensingOperator, x) -> Measurement:
    return Measurement(op.forward(x))


def add_noise_at_snr(meas: Measurement, target_snr_db, seed) -> Measurement:
    """Add white Gaussian noise rescaled so the measurement SNR is exactly the target."""
    if math.isinf(target_snr_db) and target_snr_db > 0:
        return meas
    y = meas.y
    ny = float(np.linalg.norm(y))
    if ny == 0.0:
        raise ValueError("cannot set an SNR relative to a zero measurement")
    noise = np.random.default_rng(seed).standard_normal(y.size)
    noise *= ny / (np.linalg.norm(noise) * 10.0 ** (target_snr_db / 20.0))
    sigma = float(np.linalg.norm(noise) / math.sqrt(y.size))
    return Measurement(y + noise, sigma, float(target_snr_db), seed)


def data_fidelity(op: SensingOperator, x, meas: Measurement) -> float:
    r = op.forward(x) - meas.y
    return 0.5 * float(r @ r)


def data_gradient(op: SensingOperator, x, meas: Measurement) -> np.ndarray:
    """``Phi^T (Phi x - y)``, the gradient of ``0.5 |Phi x - y|^2``."""
    y = getattr(meas, "y", meas)
    return op.adjoint(op.forward(x) - np.asarray(y, dtype=np.float64))


def spectral_norm_gram(op: SensingOperator, *, tol=1e-13, max_iters=100_000, seed=0) -> float:
    """Largest eigenvalue of ``Phi^T Phi`` by power iteration on the smaller Gram matrix."""
    A = op.matrix
    scale = float(np.sum(A * A)) or 1.0
    res = power_iteration(lambda u: A @ (A.T @ u), op.m, seed=seed, tol=tol * scale, max_iters=max_iters)
    return res.value


def max_step_size(op: SensingOperator) -> float:
    return 2.0 / spectral_norm_gram(op)
