"""Patch-averaging GMM signal denoiser and its frozen (linear) form.

The adaptive denoiser is

    D(z) = (1/P) sum_i P_i^T G(P_i z)

with ``G`` the per-patch posterior mean.  Freezing the responsibilities at a
surrogate signal turns it into the affine map ``z -> W z + c`` where

    W = (1/P) sum_i P_i^T (sum_j b[i, j] C_j) P_i

and ``c`` collects the component-mean terms (zero for zero-mean models).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import gmm
from .gmm import GmmModel, ShrinkageSet
from .linalg import power_iteration
from .signals import extract_all_patches, patch_index, scatter_all_patches


@dataclass(frozen=True)
class AdaptiveDenoiser:
    model: GmmModel
    shrink: ShrinkageSet

    def __post_init__(self):
        if self.shrink.C.shape[1] != self.model.patch_len:
            raise ValueError("shrinkage set and model disagree on patch length")

    @classmethod
    def from_model(cls, model: GmmModel, sigma: float):
        return cls(model, gmm.make_shrinkage_set(model, sigma))

    @property
    def patch_len(self):
        return self.model.patch_len

    @property
    def sigma(self):
        return self.shrink.sigma

    def with_sigma(self, sigma):
        return AdaptiveDenoiser.from_model(self.model, sigma)

    def __call__(self, z):
        return denoise_adaptive(self, z)


@dataclass(frozen=True)
class FrozenCoefficients:
    """Row-stochastic responsibilities ``b`` (N, K) frozen at a surrogate signal.

    ``offset`` is the constant term of the frozen affine denoiser.
    """

    b: np.ndarray
    offset: np.ndarray
    iteration: int | None = None
    surrogate_hash: str | None = None
    _blocks: list = field(default_factory=list, init=False, repr=False, compare=False)

    def __post_init__(self):
        b = np.array(self.b, dtype=np.float64)
        if b.ndim != 2:
            raise ValueError("frozen coefficients must be an (N, K) table")
        if np.any(b < 0) or np.max(np.abs(b.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("frozen coefficients must be nonnegative with rows summing to 1")
        b.setflags(write=False)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "offset", np.array(self.offset, dtype=np.float64))

    @property
    def n(self):
        return self.b.shape[0]

    def save(self, path):
        hdr = f"iteration={self.iteration} surrogate_sha256={self.surrogate_hash}\nb_j0,...,b_jK-1,offset"
        np.savetxt(path, np.column_stack([self.b, self.offset]), delimiter=",", header=hdr, fmt="%.17g")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            first = fh.readline().lstrip("# ").strip()
        meta = dict(kv.split("=", 1) for kv in first.split())
        data = np.loadtxt(path, delimiter=",", ndmin=2)
        it = meta.get("iteration")
        return cls(
            data[:, :-1], data[:, -1],
            None if it in (None, "None") else int(it),
            None if meta.get("surrogate_sha256") in (None, "None") else meta["surrogate_sha256"],
        )


@dataclass
class ContractivityReport:
    lambda_max: float
    n_iter: int
    residual: float
    passed: bool
    converged: bool
    # max_i lambda_max(B_i): an upper bound on lambda_max(W)
    block_bound: float
    # min_j sigma^2 / (lambda_max(Sigma_j) + sigma^2): a lower bound on 1 - lambda_max(W)
    certified_gap: float
    diagnostic: str = ""

    def to_json(self):
        return json.dumps(asdict(self), indent=2)


def _require_multiple(n, p):
    if n % p:
        raise ValueError(f"signal length {n} is not a multiple of patch length {p}; pad it first")


def denoise_adaptive(d: AdaptiveDenoiser, z) -> np.ndarray:
    z = np.asarray(getattr(z, "samples", z), dtype=np.float64)
    if z.ndim != 1 or z.size < d.patch_len:
        raise ValueError(f"signal length {z.size} incompatible with patch length {d.patch_len}")
    patches = extract_all_patches(z, d.patch_len)
    den = gmm.mmse_denoise_patch(d.model, d.shrink, patches)
    return scatter_all_patches(den, z.size) / d.patch_len


def signal_hash(z) -> str:
    return hashlib.sha256(np.ascontiguousarray(z, dtype=np.float64).tobytes()).hexdigest()


def freeze_coefficients(d: AdaptiveDenoiser, surrogate, iteration=None) -> FrozenCoefficients:
    """Responsibilities of every circular patch of ``surrogate``, held fixed."""
    z = np.asarray(getattr(surrogate, "samples", surrogate), dtype=np.float64)
    b = gmm.responsibilities(d.model, d.shrink, extract_all_patches(z, d.patch_len))
    # renormalize so rows sum to one to the last ulp
    b = b / b.sum(axis=1, keepdims=True)
    return FrozenCoefficients(b, _offset(d, b), iteration, signal_hash(z))


def uniform_coefficients(d: AdaptiveDenoiser, n) -> FrozenCoefficients:
    """Every row equal to the mixture weights."""
    b = np.tile(d.model.weights, (n, 1))
    b = b / b.sum(axis=1, keepdims=True)
    return FrozenCoefficients(b, _offset(d, b))


def coefficients_from_table(d: AdaptiveDenoiser, b) -> FrozenCoefficients:
    b = np.asarray(b, dtype=np.float64)
    return FrozenCoefficients(b, _offset(d, b))


def _offset(d, b):
    p = d.patch_len
    # (I - C_j) mu_j for every component, shape (K, P)
    resid_means = d.model.means - np.einsum("kab,kb->ka", d.shrink.C, d.model.means)
    return scatter_all_patches(b @ resid_means, b.shape[0]) / p


def apply_w(d: AdaptiveDenoiser, frozen: FrozenCoefficients, z) -> np.ndarray:
    """The linear part ``W z`` of the frozen denoiser, computed patchwise."""
    z = np.asarray(getattr(z, "samples", z), dtype=np.float64)
    n, p = z.size, d.patch_len
    if frozen.n != n:
        raise ValueError(f"coefficients are for length {frozen.n}, signal has length {n}")
    _require_multiple(n, p)
    patches = extract_all_patches(z, p)
    out = np.matmul(block_matrices(d, frozen), patches[:, :, None])[:, :, 0]
    return scatter_all_patches(out, n) / p


def denoise_frozen(d: AdaptiveDenoiser, frozen: FrozenCoefficients, z) -> np.ndarray:
    """Frozen denoiser ``W z + c``; exactly ``W z`` for zero-mean models."""
    return apply_w(d, frozen, z) + frozen.offset


def block_matrices(d: AdaptiveDenoiser, frozen: FrozenCoefficients) -> np.ndarray:
    """Per-patch shrinkage ``B_i = sum_j b[i, j] C_j``, shape (N, P, P).

    Cached on ``frozen`` for the most recent shrinkage set.
    """
    cache = frozen._blocks
    if cache and cache[0] is d.shrink:
        return cache[1]
    B = np.einsum("nk,kab->nab", frozen.b, d.shrink.C)
    B.setflags(write=False)
    cache[:] = [d.shrink, B]
    return B


def materialize_w(d: AdaptiveDenoiser, frozen: FrozenCoefficients) -> np.ndarray:
    """Dense N x N matrix of :func:`apply_w`; diagnostics only."""
    n, p = frozen.n, d.patch_len
    idx = patch_index(n, p)
    W = np.zeros((n, n))
    np.add.at(W, (idx[:, :, None], idx[:, None, :]), block_matrices(d, frozen))
    return W / p


def verify_contractivity(d, frozen, *, seed=0, tol=1e-10, max_iters=10_000) -> ContractivityReport:
    """Estimate ``lambda_max(W)`` by matrix-free power iteration.

    ``W`` is symmetric p.s.d., so this is also its spectral norm.  The
    residual margin is ``min(|W v - theta v|, block_bound - theta)``, where
    ``block_bound = max_i lambda_max(B_i)`` is a guaranteed upper bound on
    ``lambda_max(W)``.  The check passes when the power iteration converged
    and the estimate plus that margin is below 1.
    """
    n = frozen.n
    _require_multiple(n, d.patch_len)
    res = power_iteration(lambda v: apply_w(d, frozen, v), n, seed=seed, tol=tol, max_iters=max_iters)
    block_bound = float(np.max(np.linalg.eigvalsh(block_matrices(d, frozen))[:, -1]))
    s2 = d.sigma**2
    lam_sigma = np.linalg.eigvalsh(d.model.covariances)[:, -1]
    gap = float(np.min(s2 / (lam_sigma + s2)))
    margin = max(min(res.residual, block_bound - res.value), 0.0)
    passed = res.converged and res.value + margin < 1.0
    diag = ""
    if not res.converged:
        diag = f"power iteration did not converge in {max_iters} iterations"
    elif not passed:
        diag = f"estimate {res.value!r} + margin {margin:.3g} is not below 1"
        if gap < np.finfo(float).eps:
            diag += f" (analytic gap {gap:.3g} is below float64 resolution)"
    return ContractivityReport(res.value, res.n_iter, margin, passed, res.converged, block_bound, gap, diag)
