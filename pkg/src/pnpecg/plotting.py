"""Figure rendering for the CLI report path (PNG files next to the CSV output)."""
from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .gmm import covariance_eigendump  # noqa: E402

GOLDEN = (math.sqrt(5) - 1.0) / 2.0


def _figure(width=7.0, height=None, **kw):
    return plt.subplots(figsize=(width, height or width * GOLDEN), **kw)


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_residuals(trace, path, title=None):
    """Semilog plot of ``|x_{k+1} - x_k|`` against k, frozen phase shaded."""
    fig, ax = _figure()
    k = np.asarray(trace.iteration)
    r = np.maximum(np.asarray(trace.residual), 1e-300)
    ax.semilogy(k, r, color="C3", lw=1.2)
    if trace.freeze_at:
        ax.axvline(trace.freeze_at, color="0.5", ls="--", lw=0.8)
        ax.axvspan(trace.freeze_at, k.max() if k.size else trace.freeze_at, color="C0", alpha=0.06)
    ax.set_xlabel("iteration k")
    ax.set_ylabel(r"$\|x_{k+1} - x_k\|$")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_signals(path, reference=None, estimate=None, noisy=None, title=None):
    fig, ax = _figure(9.0, 3.2)
    if noisy is not None:
        ax.plot(noisy, color="0.7", lw=0.8, label="input")
    if reference is not None:
        ax.plot(reference, color="C2", lw=1.2, label="clean")
    if estimate is not None:
        ax.plot(estimate, color="C3", lw=1.0, label="estimate")
    ax.set_xlabel("sample")
    ax.legend(loc="upper right", frameon=False)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_eigenvectors(model, path, which="largest", count=10, depth=3, seed=0):
    """``count`` randomly chosen unit eigenvectors among the ``depth`` largest (or smallest) per component."""
    spectra = covariance_eigendump(model)
    p = model.patch_len
    pool = [(j, r) for j in range(len(spectra))
            for r in (range(depth) if which == "largest" else range(p - depth, p))]
    rng = np.random.default_rng(seed)
    pick = [pool[i] for i in sorted(rng.choice(len(pool), size=min(count, len(pool)), replace=False))]
    cols = 5
    rows = -(-len(pick) // cols)
    fig, axes = plt.subplots(rows, cols, figsize=(2.2 * cols, 1.8 * rows), sharex=True, squeeze=False)
    for ax in axes.flat:
        ax.set_axis_off()
    for ax, (j, r) in zip(axes.flat, pick):
        ax.set_axis_on()
        ax.plot(spectra[j][1][:, r], color="C0", lw=1.0)
        ax.set_title(f"comp {j}, #{r}", fontsize=8)
        ax.tick_params(labelsize=6)
    return _save(fig, path)


def plot_sweep(summary, path, x="m"):
    """Mean output SNR (with one-std error bars) against M or CR, one curve per signal and noise level."""
    fig, ax = _figure()
    keys = sorted({(s["signal_id"], s["input_snr_db"]) for s in summary}, key=str)
    for sid, snr in keys:
        cell = sorted((s for s in summary if s["signal_id"] == sid and s["input_snr_db"] == snr),
                      key=lambda s: s[x])
        label = sid if math.isinf(snr) else f"{sid} @ {snr:g} dB"
        ax.errorbar([s[x] for s in cell], [s["mean_snr_db"] for s in cell],
                    yerr=[s["std_snr_db"] for s in cell], marker="o", ms=3, capsize=2, label=label)
    ax.set_xlabel("measurements M" if x == "m" else "compression ratio (%)")
    ax.set_ylabel("mean output SNR (dB)")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_trials(rows, path):
    """Output SNR per trial, the stability view."""
    fig, ax = _figure()
    for m in sorted({r.m for r in rows}):
        rs = sorted((r for r in rows if r.m == m), key=lambda r: r.trial)
        ax.plot([r.trial for r in rs], [r.output_snr_db for r in rs], lw=0.8, marker=".", label=f"M={m}")
    ax.set_xlabel("trial")
    ax.set_ylabel("output SNR (dB)")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)
