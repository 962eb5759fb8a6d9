"""Matrix-free power iteration for symmetric positive semidefinite operators."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class PowerResult:
    value: float
    vector: np.ndarray
    n_iter: int
    residual: float
    converged: bool


def power_iteration(apply, n, *, seed=0, tol=1e-10, max_iters=10_000) -> PowerResult:
    """Largest eigenvalue of the symmetric p.s.d. map ``apply`` on R^n.

    Stops when successive Rayleigh quotients differ by less than ``tol``.
    ``residual`` is ``|A v - theta v|`` at the final unit vector ``v``.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    Av = apply(v)
    theta = float(v @ Av)
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        nrm = np.linalg.norm(Av)
        if nrm == 0.0:
            return PowerResult(0.0, v, it, 0.0, True)
        v = Av / nrm
        Av = apply(v)
        new = float(v @ Av)
        if abs(new - theta) < tol:
            theta = new
            converged = True
            break
        theta = new
    residual = float(np.linalg.norm(Av - theta * v))
    return PowerResult(theta, v, it, residual, converged)
