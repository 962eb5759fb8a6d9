"""Compressive-sensing experiment sweeps with per-row reproducible seeds.

Seed splitting rule: the seed for ``(trial, purpose)`` under master seed ``s``
is the first 32-bit word of ``SeedSequence(s, spawn_key=(trial, purpose))``,
with purpose 0 for the sensing matrix and 1 for measurement noise.  Every
emitted row records the derived seeds, so :func:`run_trial` can replay it.
"""
from __future__ import annotations

import csv
import logging
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import sensing
from .gmm import GmmModel
from .signals import compression_ratio, mse, pad_to_multiple, snr_db
from .solver import SolverConfig, reconstruct_pnp

logger = logging.getLogger(__name__)

PURPOSE_SENSING = 0
PURPOSE_NOISE = 1


def derive_seed(master, trial, purpose) -> int:
    ss = np.random.SeedSequence(int(master), spawn_key=(int(trial), int(purpose)))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass
class ExperimentSpec:
    signals: dict  # id -> 1-D array
    m_values: list
    snr_levels: list = field(default_factory=lambda: [math.inf])
    n_trials: int = 20
    master_seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)
    output_dir: str | None = None

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValueError("need at least one trial")
        for sid, x in self.signals.items():
            bad = [m for m in self.m_values if not 1 <= m <= len(x)]
            if bad:
                raise ValueError(f"M values {bad} invalid for signal {sid!r} of length {len(x)}")


@dataclass
class ResultRow:
    signal_id: str
    n: int
    m: int
    cr: float
    input_snr_db: float
    output_snr_db: float
    mse: float
    trial: int
    phi_seed: int
    noise_seed: int
    iterations: int
    contraction: float
    contractive: bool
    error: str = ""


def run_trial(x, model: GmmModel, m, input_snr_db, phi_seed, noise_seed, cfg: SolverConfig | None = None,
              *, signal_id="signal", trial=0, return_result=False):
    """Measure ``x`` with a fresh sensing matrix, reconstruct it, and score it.

    The signal is padded to a multiple of the patch length; the padded
    samples are unobserved (zero columns in the sensing matrix).
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    xp, _ = pad_to_multiple(x, model.patch_len)
    op = sensing.generate_sensing_operator(m, n, phi_seed)
    meas = sensing.forward(op, x)
    if not math.isinf(input_snr_db):
        meas = sensing.add_noise_at_snr(meas, input_snr_db, noise_seed)
    res = reconstruct_pnp(meas, op.padded(xp.size), model, cfg or SolverConfig())
    xhat = res.x[:n]
    row = ResultRow(
        signal_id, n, m, compression_ratio(n, m), float(input_snr_db), snr_db(x, xhat), mse(x, xhat),
        trial, phi_seed, noise_seed, res.trace.n_iter, res.contractivity.lambda_max, res.contractivity.passed,
    )
    return (row, res) if return_result else row


def _cells(spec: ExperimentSpec):
    for sid, x in spec.signals.items():
        for m in spec.m_values:
            for snr in spec.snr_levels:
                for t in range(spec.n_trials):
                    yield sid, np.asarray(x, dtype=np.float64), m, snr, t


_worker_model = None


def _init_worker(model):
    global _worker_model
    _worker_model = model


def _run_cell(args):
    sid, x, m, snr, t, master, cfg = args
    phi_seed = derive_seed(master, t, PURPOSE_SENSING)
    noise_seed = derive_seed(master, t, PURPOSE_NOISE)
    try:
        return run_trial(x, _worker_model, m, snr, phi_seed, noise_seed, cfg, signal_id=sid, trial=t)
    except Exception as exc:  # recorded per row, the sweep continues
        logger.error("trial %s M=%d snr=%s t=%d failed: %s", sid, m, snr, t, exc)
        return ResultRow(sid, len(x), m, compression_ratio(len(x), m), float(snr), math.nan, math.nan,
                         t, phi_seed, noise_seed, 0, math.nan, False, f"{type(exc).__name__}: {exc}")


def run_sweep(spec: ExperimentSpec, model: GmmModel, jobs=1, progress=None) -> list[ResultRow]:
    """Run every (signal, M, SNR, trial) cell; rows come back in cell order."""
    tasks = [(*cell, spec.master_seed, spec.solver) for cell in _cells(spec)]
    if jobs <= 1:
        _init_worker(model)
        rows = []
        for task in tasks:
            rows.append(_run_cell(task))
            if progress:
                progress(len(rows), len(tasks))
        return rows
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(model,)) as pool:
        return list(pool.map(_run_cell, tasks))


def summarize(rows):
    """Mean and standard deviation of output SNR per (signal, M, input SNR) cell."""
    groups = {}
    for r in rows:
        groups.setdefault((r.signal_id, r.m, r.input_snr_db), []).append(r)
    out = []
    for (sid, m, snr), rs in groups.items():
        ok = [r for r in rs if not r.error]
        snrs = [r.output_snr_db for r in ok]
        out.append({
            "signal_id": sid, "n": rs[0].n, "m": m, "cr": rs[0].cr, "input_snr_db": snr,
            "trials": len(rs), "failed": len(rs) - len(ok),
            "mean_snr_db": statistics.fmean(snrs) if snrs else math.nan,
            "std_snr_db": statistics.stdev(snrs) if len(snrs) > 1 else 0.0 if snrs else math.nan,
            "mean_mse": statistics.fmean(r.mse for r in ok) if ok else math.nan,
        })
    return out


def write_rows(rows, path):
    names = [f.name for f in fields(ResultRow)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=names, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in asdict(r).items()})


def read_rows(path) -> list[ResultRow]:
    types = {f.name: f.type for f in fields(ResultRow)}
    conv = {"int": int, "float": float, "str": str, "bool": lambda s: s == "True"}
    with open(path, encoding="utf-8", newline="") as fh:
        return [ResultRow(**{k: conv[types[k]](v) for k, v in rec.items()}) for rec in csv.DictReader(fh)]


def write_summary(summary, path):
    if not summary:
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(summary[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(summary)
