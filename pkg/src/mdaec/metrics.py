"""Evaluation metrics: echo suppression, near-end fidelity, convergence."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

CLIP_DB = 80.0


@dataclass
class MetricSeries:
    """Values on a uniform time grid."""

    time_s: np.ndarray
    value: np.ndarray
    window_s: float


def erle(echo: np.ndarray, residual: np.ndarray, fs: float,
         window_s: float = 0.5, eval_span_s: float = 30.0
         ) -> tuple[MetricSeries, float]:
    """Echo return loss enhancement over sliding windows.

    ERLE(t) = 10 log10(sum_w echo^2 / sum_w residual^2); the scalar is
    the mean over the last `eval_span_s` seconds.  Windows with no
    residual energy clip at +80 dB.
    """
    d = np.asarray(echo, dtype=float)
    e = np.asarray(residual, dtype=float)
    n = min(len(d), len(e))
    d, e = d[:n], e[:n]
    win = int(round(window_s * fs))
    hop = max(1, win // 2)
    starts = np.arange(0, n - win + 1, hop)
    if len(starts) == 0:
        raise ConfigError("signal shorter than one analysis window")
    cd = np.concatenate([[0.0], np.cumsum(d * d)])
    ce = np.concatenate([[0.0], np.cumsum(e * e)])
    pd = cd[starts + win] - cd[starts]
    pe = ce[starts + win] - ce[starts]
    val = np.full(len(starts), CLIP_DB)
    ok = pe > 0
    val[ok] = 10.0 * np.log10(np.maximum(pd[ok], 1e-300) / pe[ok])
    val = np.minimum(val, CLIP_DB)
    t = (starts + win / 2) / fs
    series = MetricSeries(t, val, window_s)
    t_end = n / fs
    tail = t >= max(0.0, t_end - eval_span_s)
    return series, float(val[tail].mean())


def near_end_distortion(z_clean: np.ndarray, output: np.ndarray,
                        active_mask: np.ndarray) -> float:
    """Ratio of near-end power to near-end error power over active samples."""
    z = np.asarray(z_clean, dtype=float)
    y = np.asarray(output, dtype=float)
    m = np.asarray(active_mask, dtype=bool)
    n = min(len(z), len(y), len(m))
    z, y, m = z[:n], y[:n], m[:n]
    if not np.any(m):
        raise ConfigError("empty activity mask")
    num = float(np.sum(z[m] ** 2))
    den = float(np.sum((y[m] - z[m]) ** 2))
    if den <= 0:
        return CLIP_DB
    return min(CLIP_DB, 10.0 * math.log10(num / den))


def sro_convergence(traj: MetricSeries, true_ppm: float, tol_ppm: float) -> float:
    """First time after which the estimate stays within tol of the truth.

    Returns +inf if the trajectory never settles (or is empty beyond the
    last excursion).
    """
    if len(traj.value) == 0:
        raise ConfigError("empty trajectory")
    inside = np.abs(traj.value - true_ppm) < tol_ppm
    if not inside[-1]:
        return math.inf
    # last index where the estimate was outside the band
    outside = np.where(~inside)[0]
    if len(outside) == 0:
        return 0.0
    last_out = outside[-1]
    if last_out + 1 >= len(inside):
        return math.inf
    return float(traj.time_s[last_out + 1])
