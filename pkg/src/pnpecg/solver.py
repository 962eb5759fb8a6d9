"""Plug-and-play proximal gradient descent and the classical l1 baseline."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .denoiser import (
    AdaptiveDenoiser,
    ContractivityReport,
    FrozenCoefficients,
    denoise_adaptive,
    denoise_frozen,
    freeze_coefficients,
    verify_contractivity,
)
from .gmm import GmmModel
from .sensing import Measurement, SensingOperator, data_fidelity, data_gradient, spectral_norm_gram

logger = logging.getLogger(__name__)

ADAPTIVE = "adaptive"
FROZEN = "frozen"
RESIDUAL_FLOOR = 1e-13
SIGMA_FRACTION = 0.05


class SolverError(RuntimeError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


@dataclass
class SolverConfig:
    gamma: float = 1.0
    freeze_at: int = 10
    max_iters: int = 150
    tol: float = 1e-8
    sigma: float | None = None
    init: str = "backprojection"

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("step size must be positive")
        if not 0 <= self.freeze_at < self.max_iters:
            raise ValueError(f"need 0 <= freeze_at < max_iters, got {self.freeze_at}, {self.max_iters}")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("denoiser sigma must be positive")
        if self.init not in ("backprojection", "zeros"):
            raise ValueError(f"unknown initialization {self.init!r}")


@dataclass
class BaselineConfig:
    lam: float
    gamma: float = 1.0
    max_iters: int = 5000
    tol: float = 1e-10

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("regularization weight must be positive")
        if not self.gamma > 0:
            raise ValueError("step size must be positive")


@dataclass
class RunTrace:
    iteration: list = field(default_factory=list)
    phase: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    fidelity: list = field(default_factory=list)
    elapsed_ms: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    freeze_at: int | None = None
    contraction_ratio: float | None = None

    def record(self, k, phase, residual, fidelity, elapsed_ms, objective=None):
        self.iteration.append(k)
        self.phase.append(phase)
        self.residual.append(float(residual))
        self.fidelity.append(float(fidelity))
        self.elapsed_ms.append(float(elapsed_ms))
        if objective is not None:
            self.objective.append(float(objective))

    @property
    def n_iter(self):
        return len(self.iteration)

    def frozen_residuals(self):
        return np.array([r for r, ph in zip(self.residual, self.phase) if ph == FROZEN])

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("iter,phase,residual,fidelity,elapsed_ms\n")
            for row in zip(self.iteration, self.phase, self.residual, self.fidelity, self.elapsed_ms):
                fh.write("{},{},{!r},{!r},{:.3f}\n".format(*row))


@dataclass
class PnPResult:
    x: np.ndarray
    trace: RunTrace
    frozen: FrozenCoefficients
    contractivity: ContractivityReport
    sigma: float


def _check_step(op, gamma):
    limit = 2.0 / spectral_norm_gram(op)
    if gamma > limit * (1 + 1e-12):
        raise ValueError(f"step size {gamma} exceeds 2/sigma_max(Phi^T Phi) = {limit}")


def _initial(op, meas, init):
    if init == "zeros":
        return np.zeros(op.n)
    return op.adjoint(meas.y)


def reconstruct_pnp(meas: Measurement, op: SensingOperator, denoiser, cfg: SolverConfig | None = None,
                    *, x0=None, frozen: FrozenCoefficients | None = None) -> PnPResult:
    """Recover a signal from ``meas`` with PnP-PGD, ``x <- D(x - gamma grad f(x))``.

    Iterations ``1..freeze_at`` use the adaptive GMM denoiser; the
    responsibilities are then frozen at ``x_T`` and the remaining iterations
    use the contractive frozen denoiser.  Passing ``frozen`` skips the
    adaptive phase and uses the given coefficients from the first iteration.

    ``denoiser`` is an :class:`AdaptiveDenoiser` or a bare :class:`GmmModel`.
    When ``cfg.sigma`` is None, a model gets ``sigma = 0.05 * std`` of the
    first gradient-step output; an AdaptiveDenoiser keeps its own sigma.
    """
    cfg = cfg or SolverConfig()
    n = op.n
    _check_step(op, cfg.gamma)
    if meas.y.size != op.m:
        raise ValueError(f"measurement length {meas.y.size} does not match operator rows {op.m}")
    x = _initial(op, meas, cfg.init) if x0 is None else np.array(x0, dtype=np.float64)
    if x.shape != (n,):
        raise ValueError(f"initial point must have length {n}")

    gamma = cfg.gamma
    aty = op.adjoint(meas.y)

    def grad_step(v):
        return v - gamma * data_gradient(op, v, meas)

    if isinstance(denoiser, GmmModel):
        sigma = cfg.sigma
        if sigma is None:
            sigma = SIGMA_FRACTION * float(np.std(grad_step(x)))
            logger.warning("denoiser sigma not given; using %.6g (%.2f x std of first gradient step)",
                           sigma, SIGMA_FRACTION)
        den = AdaptiveDenoiser.from_model(denoiser, sigma)
    elif cfg.sigma is not None and cfg.sigma != denoiser.sigma:
        den = denoiser.with_sigma(cfg.sigma)
    else:
        den = denoiser
    if n % den.patch_len:
        raise ValueError(f"signal length {n} is not a multiple of patch length {den.patch_len}; pad it first")
    logger.info("PnP-PGD: N=%d M=%d gamma=%g sigma=%.6g T=%d", n, op.m, gamma, den.sigma, cfg.freeze_at)

    trace = RunTrace()
    report = None
    freeze_at = cfg.freeze_at
    if frozen is not None:
        freeze_at = 0
        report = verify_contractivity(den, frozen)
    trace.freeze_at = freeze_at
    t0 = time.perf_counter()

    for k in range(1, cfg.max_iters + 1):
        if k <= freeze_at:
            phase = ADAPTIVE
            x_new = denoise_adaptive(den, grad_step(x))
        else:
            if frozen is None:
                frozen = freeze_coefficients(den, x, iteration=k - 1)
                report = verify_contractivity(den, frozen)
                level = logging.INFO if report.passed else logging.WARNING
                logger.log(level, "froze coefficients at k=%d, lambda_max(W)=%.12f pass=%s",
                           k - 1, report.lambda_max, report.passed)
            phase = FROZEN
            # W (x - gamma Phi^T Phi x + gamma Phi^T y) + c
            x_new = denoise_frozen(den, frozen, x - gamma * op.adjoint(op.forward(x)) + gamma * aty)
        if not np.all(np.isfinite(x_new)):
            raise SolverError(f"non-finite iterate at iteration {k}", trace)
        res = float(np.linalg.norm(x_new - x))
        x = x_new
        trace.record(k, phase, res, data_fidelity(op, x, meas), 1e3 * (time.perf_counter() - t0))
        if phase == FROZEN and res < cfg.tol:
            break

    try:
        trace.contraction_ratio = frozen_contraction_ratio(trace)
    except ValueError:
        trace.contraction_ratio = None
    return PnPResult(x, trace, frozen, report, den.sigma)


def frozen_contraction_ratio(trace: RunTrace) -> float:
    """Largest ratio of consecutive frozen-phase residuals above the numerical floor."""
    r = trace.frozen_residuals()
    r = r[: np.argmax(r <= RESIDUAL_FLOOR)] if np.any(r <= RESIDUAL_FLOOR) else r
    if r.size < 3:
        raise ValueError(f"need at least 3 frozen-phase residuals above {RESIDUAL_FLOOR}, got {r.size}")
    return float(np.max(r[1:] / r[:-1]))


def soft_threshold(z, tau):
    if not tau > 0:
        raise ValueError("threshold must be positive")
    z = np.asarray(z, dtype=np.float64)
    return np.sign(z) * np.maximum(np.abs(z) - tau, 0.0)


def l1_objective(op, x, meas, lam):
    return data_fidelity(op, x, meas) + lam * float(np.sum(np.abs(x)))


def reconstruct_pgd_l1(meas: Measurement, op: SensingOperator, cfg: BaselineConfig, *, x0=None):
    """ISTA on ``0.5 |Phi x - y|^2 + lam |x|_1`` in the sample domain."""
    _check_step(op, cfg.gamma)
    x = op.adjoint(meas.y) if x0 is None else np.array(x0, dtype=np.float64)
    tau = cfg.gamma * cfg.lam
    trace = RunTrace()
    t0 = time.perf_counter()
    for k in range(1, cfg.max_iters + 1):
        x_new = soft_threshold(x - cfg.gamma * data_gradient(op, x, meas), tau)
        if not np.all(np.isfinite(x_new)):
            raise SolverError(f"non-finite iterate at iteration {k}", trace)
        res = float(np.linalg.norm(x_new - x))
        x = x_new
        trace.record(k, "l1", res, data_fidelity(op, x, meas), 1e3 * (time.perf_counter() - t0),
                     objective=l1_objective(op, x, meas, cfg.lam))
        if res < cfg.tol:
            break
    return x, trace
