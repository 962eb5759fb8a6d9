"""Signals, circular patch operators and reconstruction metrics.

Patch indices are 0-based throughout the code.  Patch ``i`` of a length-N
signal ``z`` is ``(z[i], z[i+1], ..., z[i+P-1])`` with indices taken mod N.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SNR_INF = math.inf


@dataclass(frozen=True)
class Signal:
    """A finite real sample vector with an optional source label."""

    samples: np.ndarray
    label: str | None = None

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64).ravel()
        if x.size < 1:
            raise ValueError("signal must have at least one sample")
        if not np.all(np.isfinite(x)):
            raise ValueError("signal contains non-finite samples")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.size


def read_signal(path, label=None) -> Signal:
    """Read a one-sample-per-line text file; ``#`` lines are comments."""
    values = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                values.append(float(line))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: not a number: {line!r}") from None
    return Signal(np.asarray(values), label=label or Path(path).stem)


def write_signal(path, x, header=None):
    x = np.asarray(getattr(x, "samples", x), dtype=np.float64)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        for v in x.tolist():
            fh.write(f"{v!r}\n")


def _check_patch_length(n, patch_len):
    if not 1 <= patch_len <= n:
        raise ValueError(f"patch length {patch_len} must lie in [1, {n}]")


def patch_index(n, patch_len) -> np.ndarray:
    """(n, P) integer table whose row ``i`` holds the sample indices of patch i."""
    _check_patch_length(n, patch_len)
    return _patch_index(int(n), int(patch_len))


@functools.lru_cache(maxsize=32)
def _patch_index(n, patch_len):
    idx = (np.arange(n)[:, None] + np.arange(patch_len)[None, :]) % n
    idx.setflags(write=False)
    return idx


def extract_patch(z, i, patch_len) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    n = z.size
    _check_patch_length(n, patch_len)
    if not 0 <= i < n:
        raise IndexError(f"patch index {i} out of range for length {n}")
    return z[(i + np.arange(patch_len)) % n]


def scatter_patch_adjoint(acc, i, p) -> np.ndarray:
    """Return ``acc + P_i^T p`` (the adjoint of :func:`extract_patch`)."""
    out = np.array(acc, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    n = out.size
    if p.ndim != 1 or not 1 <= p.size <= n:
        raise ValueError(f"patch of length {p.size} incompatible with length {n}")
    if not 0 <= i < n:
        raise IndexError(f"patch index {i} out of range for length {n}")
    np.add.at(out, (i + np.arange(p.size)) % n, p)
    return out


def extract_all_patches(z, patch_len) -> np.ndarray:
    """All N circular patches as an (N, P) array."""
    z = np.asarray(z, dtype=np.float64)
    return z[patch_index(z.size, patch_len)]


def scatter_all_patches(patches, n) -> np.ndarray:
    """Adjoint of :func:`extract_all_patches`: ``sum_i P_i^T patches[i]``."""
    patches = np.asarray(patches, dtype=np.float64)
    if patches.shape[0] != n:
        raise ValueError(f"expected {n} patches, got {patches.shape[0]}")
    idx = patch_index(n, patches.shape[1])
    return np.bincount(idx.ravel(), weights=patches.ravel(), minlength=n)


def pad_to_multiple(x, patch_len):
    """Circularly extend ``x`` to the next multiple of ``patch_len``.

    Returns the padded array and the original length.
    """
    if patch_len < 1:
        raise ValueError("patch length must be positive")
    x = np.asarray(getattr(x, "samples", x), dtype=np.float64)
    n = x.size
    padded = -(-n // patch_len) * patch_len
    return np.resize(x, padded), n


def snr_db(reference, estimate) -> float:
    """``10 log10(|x|^2 / |x - xhat|^2)``; :data:`SNR_INF` on exact recovery."""
    x = np.asarray(getattr(reference, "samples", reference), dtype=np.float64)
    xh = np.asarray(getattr(estimate, "samples", estimate), dtype=np.float64)
    if x.shape != xh.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {xh.shape}")
    sig = float(np.dot(x, x))
    if sig == 0.0:
        raise ValueError("reference signal is identically zero")
    err = float(np.sum((x - xh) ** 2))
    if err == 0.0:
        return SNR_INF
    return 10.0 * math.log10(sig / err)


def mse(reference, estimate) -> float:
    x = np.asarray(getattr(reference, "samples", reference), dtype=np.float64)
    xh = np.asarray(getattr(estimate, "samples", estimate), dtype=np.float64)
    if x.shape != xh.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {xh.shape}")
    return float(np.mean((x - xh) ** 2))


def compression_ratio(n, m) -> float:
    """Percentage of samples removed, ``(N - M) / N * 100``."""
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= M <= N, got M={m}, N={n}")
    return (n - m) / n * 100.0
