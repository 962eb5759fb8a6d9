"""Gaussian-mixture patch prior: EM training, persistence and MMSE shrinkage."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.special import logsumexp

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GmmModel:
    """K-component Gaussian mixture over length-P patches."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).ravel()
        mu = np.array(self.means, dtype=np.float64)
        cov = np.array(self.covariances, dtype=np.float64)
        if mu.ndim != 2 or cov.shape != (mu.shape[0], mu.shape[1], mu.shape[1]) or w.size != mu.shape[0]:
            raise ValueError(
                f"inconsistent shapes: weights {w.shape}, means {mu.shape}, covariances {cov.shape}"
            )
        for a in (w, mu, cov):
            a.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariances", cov)

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def patch_len(self) -> int:
        return self.means.shape[1]

    def validate(self, reg_floor=0.0):
        """Raise ``ValueError`` unless the mixture is a valid SPD model."""
        w, cov = self.weights, self.covariances
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(self.means)) and np.all(np.isfinite(cov))):
            raise ValueError("model contains non-finite parameters")
        if np.any(w < 0):
            raise ValueError("negative mixture weight")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixture weights sum to {w.sum()!r}, not 1")
        asym = np.max(np.abs(cov - np.swapaxes(cov, 1, 2)))
        if asym >= 1e-10:
            raise ValueError(f"covariance asymmetry {asym:.3g} exceeds 1e-10")
        lam = np.linalg.eigvalsh(cov)
        lam_min = lam[:, 0]
        # eigenvalues are only resolved to a few ulps of the largest one
        slack = 64 * np.finfo(float).eps * lam[:, -1]
        if np.any(lam_min <= 0) or np.any(lam_min < reg_floor - slack):
            raise ValueError(f"covariance not positive definite above floor: min eigenvalue {lam_min.min():.3g}")
        return self

    def to_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "K": self.n_components,
            "P": self.patch_len,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "GmmModel":
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format_version {doc.get('format_version')!r}")
        model = cls(doc["weights"], doc["means"], doc["covariances"])
        if (model.n_components, model.patch_len) != (doc["K"], doc["P"]):
            raise ValueError("declared K/P disagree with parameter shapes")
        return model.validate()


def save_model(model: GmmModel, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_json(), fh)


def load_model(path) -> GmmModel:
    with open(path, encoding="utf-8") as fh:
        return GmmModel.from_json(json.load(fh))


# ---------------------------------------------------------------------------
# density evaluation


def _chol_logpdf(X, means, chols):
    """Per-component Gaussian log-densities, shape (n, K), from lower Cholesky factors."""
    X = np.atleast_2d(X)
    n, p = X.shape
    out = np.empty((n, means.shape[0]))
    eye = np.eye(p)
    for j, (mu, L) in enumerate(zip(means, chols)):
        Linv = solve_triangular(L, eye, lower=True, check_finite=False)
        y = (X - mu) @ Linv.T
        half_logdet = np.sum(np.log(np.diag(L)))
        out[:, j] = -0.5 * (p * _LOG_2PI + np.einsum("ij,ij->i", y, y)) - half_logdet
    return out


def log_density(model: GmmModel, v) -> np.ndarray | float:
    """Log of the mixture density at one patch (P,) or a batch (n, P)."""
    v = np.asarray(v, dtype=np.float64)
    chols = np.linalg.cholesky(model.covariances)
    lp = _chol_logpdf(v, model.means, chols) + np.log(model.weights)
    out = logsumexp(lp, axis=1)
    return float(out[0]) if v.ndim == 1 else out


# ---------------------------------------------------------------------------
# EM training


@dataclass
class EmConfig:
    n_components: int = 10
    max_iters: int = 200
    loglik_rel_tol: float = 1e-7
    reg_floor: float | None = None  # None -> 1e-6 * mean patch variance
    seed: int = 0
    init: str = "farthest"
    init_subsample: int = 4000
    init_lloyd_iters: int = 10

    def __post_init__(self):
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if self.reg_floor is not None and self.reg_floor <= 0:
            raise ValueError("reg_floor must be positive")
        if self.init != "farthest":
            raise ValueError(f"unknown init strategy {self.init!r}")


@dataclass
class FitReport:
    n_iter: int = 0
    converged: bool = False
    reg_floor: float = 0.0
    loglik: list = field(default_factory=list)
    reseeded: list = field(default_factory=list)  # (iteration, component)

    @property
    def final_loglik(self) -> float:
        return self.loglik[-1] if self.loglik else float("nan")


def extract_training_patches(x, patch_len) -> np.ndarray:
    """All ``N - P + 1`` overlapping interior patches (no wrap-around)."""
    x = np.asarray(getattr(x, "samples", x), dtype=np.float64)
    if patch_len < 1 or x.size < patch_len:
        raise ValueError(f"signal of length {x.size} shorter than patch length {patch_len}")
    return np.lib.stride_tricks.sliding_window_view(x, patch_len).copy()


def _floor_covariance(S, floor):
    S = 0.5 * (S + S.T)
    w, V = np.linalg.eigh(S)
    if w[0] >= floor:
        return S
    # constrained ML solution: clip the spectrum at the floor
    S = (V * np.maximum(w, floor)) @ V.T
    return 0.5 * (S + S.T)


def _farthest_point_centers(X, k, rng, subsample, lloyd_iters):
    n = X.shape[0]
    sub = X[rng.choice(n, size=min(n, subsample), replace=False)] if n > subsample else X
    idx = [int(rng.integers(sub.shape[0]))]
    d2 = np.sum((sub - sub[idx[0]]) ** 2, axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(d2))
        idx.append(nxt)
        d2 = np.minimum(d2, np.sum((sub - sub[nxt]) ** 2, axis=1))
    centers = sub[idx].copy()
    for _ in range(lloyd_iters):
        labels = _nearest(sub, centers)
        for j in range(k):
            members = sub[labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    return centers


def _nearest(X, centers):
    d2 = (
        np.sum(X * X, axis=1)[:, None]
        - 2.0 * X @ centers.T
        + np.sum(centers * centers, axis=1)[None, :]
    )
    return np.argmin(d2, axis=1)


def _m_step(X, R, floor, global_cov):
    nk = R.sum(axis=0)
    k, p = R.shape[1], X.shape[1]
    means = np.empty((k, p))
    covs = np.empty((k, p, p))
    for j in range(k):
        if nk[j] <= 0:
            means[j] = X.mean(axis=0)
            covs[j] = global_cov
            continue
        means[j] = R[:, j] @ X / nk[j]
        D = X - means[j]
        covs[j] = _floor_covariance((D * R[:, j, None]).T @ D / nk[j], floor)
    return nk / nk.sum(), means, covs


def fit_em(patches, config: EmConfig | None = None):
    """Fit a GMM to ``patches`` (n, P) by expectation-maximization.

    Returns ``(model, report)``.  The per-iteration mean log-likelihood is
    stored in ``report.loglik``; it is non-decreasing except across
    iterations listed in ``report.reseeded``.
    """
    cfg = config or EmConfig()
    X = np.asarray(patches, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("patches must be a 2-D array (n, P)")
    if not np.all(np.isfinite(X)):
        raise ValueError("patches contain non-finite values")
    k = cfg.n_components
    if np.unique(X, axis=0).shape[0] < k:
        raise ValueError(f"need at least {k} distinct patches, got fewer")
    n, p = X.shape

    floor = cfg.reg_floor
    if floor is None:
        floor = 1e-6 * float(np.mean(np.var(X, axis=0)))
        if floor <= 0:
            floor = 1e-12
    global_cov = _floor_covariance(np.cov(X, rowvar=False, bias=True).reshape(p, p), floor)
    rng = np.random.default_rng(cfg.seed)
    report = FitReport(reg_floor=floor)

    centers = _farthest_point_centers(X, k, rng, cfg.init_subsample, cfg.init_lloyd_iters)
    R = np.zeros((n, k))
    R[np.arange(n), _nearest(X, centers)] = 1.0
    weights, means, covs = _m_step(X, R, floor, global_cov)

    for it in range(cfg.max_iters + 1):
        chols = np.linalg.cholesky(covs)
        with np.errstate(divide="ignore"):
            lp = _chol_logpdf(X, means, chols) + np.log(weights)
        lse = logsumexp(lp, axis=1)
        ll = float(np.mean(lse))
        report.loglik.append(ll)
        report.n_iter = it
        if it > 0 and ll - report.loglik[-2] <= cfg.loglik_rel_tol * abs(report.loglik[-2]):
            report.converged = True
            break
        if it == cfg.max_iters:
            break
        R = np.exp(lp - lse[:, None])
        weights, means, covs = _m_step(X, R, floor, global_cov)
        empty = np.flatnonzero(R.sum(axis=0) < 1.0)
        if empty.size:
            order = np.argsort(-np.var(X, axis=1))
            for slot, j in enumerate(empty):
                means[j] = X[order[slot]]
                covs[j] = global_cov
                weights[j] = 1.0 / n
                report.reseeded.append((it, int(j)))
                logger.warning("EM iteration %d: component %d empty, re-seeded", it, j)
            weights = weights / weights.sum()

    model = GmmModel(weights / weights.sum(), means, covs).validate(floor)
    logger.info(
        "EM finished after %d iterations (converged=%s), mean log-likelihood %.6f",
        report.n_iter, report.converged, report.final_loglik,
    )
    return model, report


# ---------------------------------------------------------------------------
# MMSE shrinkage


@dataclass(frozen=True)
class ShrinkageSet:
    """Wiener shrinkage matrices ``C_j = S_j (S_j + sigma^2 I)^{-1}`` at one noise level.

    ``inflated_chol`` holds lower Cholesky factors of ``S_j + sigma^2 I``,
    used to evaluate the noisy-patch likelihoods.
    """

    sigma: float
    C: np.ndarray
    inflated_chol: np.ndarray


def make_shrinkage_set(model: GmmModel, sigma: float) -> ShrinkageSet:
    if not sigma > 0:
        raise ValueError(f"noise level must be positive, got {sigma!r}")
    p = model.patch_len
    eye = np.eye(p)
    C = np.empty_like(model.covariances)
    chols = np.empty_like(model.covariances)
    for j, S in enumerate(model.covariances):
        A = S + sigma**2 * eye
        fac = cho_factor(A, lower=True)
        Ct = cho_solve(fac, S.T)
        C[j] = 0.5 * (Ct + Ct.T)
        chols[j] = np.tril(fac[0])
    return ShrinkageSet(float(sigma), C, chols)


def responsibilities(model: GmmModel, shrink: ShrinkageSet, u) -> np.ndarray:
    """Posterior component probabilities of noisy patch(es) ``u``.

    Returns shape (K,) for a single patch or (n, K) for a batch.
    """
    u = np.asarray(u, dtype=np.float64)
    with np.errstate(divide="ignore"):
        lp = _chol_logpdf(u, model.means, shrink.inflated_chol) + np.log(model.weights)
    beta = np.exp(lp - logsumexp(lp, axis=1, keepdims=True))
    return beta[0] if u.ndim == 1 else beta


def mmse_denoise_patch(model: GmmModel, shrink: ShrinkageSet, u, beta=None) -> np.ndarray:
    """Posterior mean ``E[v | u]`` under the mixture prior.

    Each component contributes ``mu_j + C_j (u - mu_j)``, weighted by the
    responsibilities ``beta`` (computed from ``u`` when not supplied).
    """
    u = np.asarray(u, dtype=np.float64)
    U = np.atleast_2d(u)
    if beta is None:
        beta = responsibilities(model, shrink, U)
    beta = np.atleast_2d(beta)
    out = np.zeros_like(U)
    for j in range(model.n_components):
        mu = model.means[j]
        out += beta[:, j, None] * (mu + (U - mu) @ shrink.C[j].T)
    return out[0] if u.ndim == 1 else out


# ---------------------------------------------------------------------------
# diagnostics


def covariance_eigendump(model: GmmModel):
    """Per-component ``(eigenvalues, eigenvectors)``, eigenvalues descending.

    Eigenvectors are the columns of the returned matrices.
    """
    out = []
    for S in model.covariances:
        w, V = np.linalg.eigh(S)
        out.append((w[::-1].copy(), V[:, ::-1].copy()))
    return out


def write_eigendump_csv(model: GmmModel, path):
    """CSV columns: component, index, eigenvalue, v0..v{P-1}; index 0 is the largest."""
    p = model.patch_len
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(["component", "index", "eigenvalue"] + [f"v{i}" for i in range(p)]) + "\n")
        for j, (w, V) in enumerate(covariance_eigendump(model)):
            for r in range(p):
                vals = ",".join(repr(float(c)) for c in V[:, r])
                fh.write(f"{j},{r},{float(w[r])!r},{vals}\n")


def read_eigendump_csv(path):
    """Inverse of :func:`write_eigendump_csv`: list of (eigenvalues, eigenvectors)."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    comps = []
    for j in np.unique(data[:, 0]).astype(int):
        rows = data[data[:, 0] == j]
        rows = rows[np.argsort(rows[:, 1])]
        comps.append((rows[:, 2].copy(), rows[:, 3:].T.copy()))
    return comps
