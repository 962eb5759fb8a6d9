"""Deterministic synthetic ECG records (ECGSYN dynamical model via neurokit2)."""
from __future__ import annotations

import functools

import numpy as np

from .signals import Signal

SAMPLING_RATE = 360
TRAIN_LENGTH = 10_800


@functools.lru_cache(maxsize=8)
def _simulate(duration_s, fs, heart_rate, seed):
    import neurokit2 as nk

    x = nk.ecg_simulate(
        duration=duration_s, sampling_rate=fs, heart_rate=heart_rate,
        method="ecgsyn", noise=0.0, random_state=seed,
    )
    x = np.asarray(x, dtype=np.float64)
    x.setflags(write=False)
    return x


def synthetic_record(duration_s=60, *, fs=SAMPLING_RATE, heart_rate=70, seed=104) -> Signal:
    """A noiseless single-lead ECG record; identical for identical arguments."""
    return Signal(_simulate(int(duration_s), int(fs), int(heart_rate), int(seed)), label=f"ecgsyn-{seed}")


def train_test_split(record: Signal, train_length=TRAIN_LENGTH):
    """Leading ``train_length`` samples for training, the remainder held out."""
    x = record.samples
    if x.size <= train_length:
        raise ValueError("record too short to hold out a test part")
    return Signal(x[:train_length], record.label), Signal(x[train_length:], record.label)


def segment(x, start, length) -> np.ndarray:
    x = np.asarray(getattr(x, "samples", x))
    if start < 0 or start + length > x.size:
        raise ValueError("segment out of range")
    return x[start : start + length].copy()


def wrap_consistent_start(x, length, lo=0, hi=None) -> int:
    """Start index in ``[lo, hi)`` whose length-``length`` segment wraps most smoothly.

    Circular patch extraction joins the last sample of a segment to its
    first; this picks the start where that junction best matches the
    signal's own continuation, ``x[s + length] ~ x[s]`` in value and slope.
    """
    x = np.asarray(getattr(x, "samples", x), dtype=np.float64)
    hi = x.size - length - 1 if hi is None else min(hi, x.size - length - 1)
    if hi <= lo:
        raise ValueError("search window is empty")
    s = np.arange(lo, hi)
    cost = np.abs(x[s + length] - x[s]) + np.abs(x[s + length + 1] - x[s + 1])
    return int(s[np.argmin(cost)])
