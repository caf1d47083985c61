"""Trial runner: render a scene, run the requested systems, score them.

One trial = one seeded scene + one source draw, evaluated for a set of
systems.  Everything is deterministic given (seed, parameters); trials
are independent and safe to farm out to worker processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kalman import KalmanConfig
from .metrics import MetricSeries, erle, near_end_distortion, sro_convergence
from .pipeline import PipelineOutput, SystemKind, run_system
from .scenes import EpcEvent, RenderedScene, render, sample_scene
from .sources import SourceSpec, synth_speech_like
from .sro import DwacdConfig

PAPER_EPC_SCHEDULE = [
    EpcEvent(15.0, "device2_pos"),
    EpcEvent(30.0, "mic1_pos"),
    EpcEvent(45.0, "both"),
]


@dataclass
class TrialSpec:
    seed: int
    sro_ppm: float
    correlated: bool = False
    double_talk: bool = False
    duration_s: float = 36.0
    epc: bool = False
    systems: tuple = (SystemKind.NO_SRO, SystemKind.NO_COMPENSATION,
                      SystemKind.ORACLE_SRO, SystemKind.VARIANT1, SystemKind.VARIANT2)


@dataclass
class SystemResult:
    erle_db: float
    erle_series: MetricSeries
    ned_db: float | None
    sro_conv_s: float | None
    sro_trajectory: MetricSeries


@dataclass
class TrialResult:
    spec: TrialSpec
    systems: dict = field(default_factory=dict)   # SystemKind.value -> SystemResult


def component_activity_mask(component: np.ndarray, fs: float,
                            block: int = 256, margin_db: float = 20.0) -> np.ndarray:
    """Sample mask of blocks whose RMS sits within margin of the active level."""
    n = (len(component) // block) * block
    rms = np.sqrt(np.mean(component[:n].reshape(-1, block) ** 2, axis=1))
    nz = rms[rms > 0]
    if len(nz) == 0:
        return np.zeros(len(component), dtype=bool)
    thr = np.percentile(nz, 90) * 10.0 ** (-margin_db / 20.0)
    mask = np.repeat(rms > thr, block)
    return np.concatenate([mask, np.zeros(len(component) - len(mask), dtype=bool)])


def render_trial_scene(spec: TrialSpec, sro_override: float | None = None) -> RenderedScene:
    cfg = sample_scene(spec.seed)
    cfg.sro_ppm = spec.sro_ppm if sro_override is None else sro_override
    cfg.signal_mode = "correlated" if spec.correlated else "uncorrelated"
    cfg.double_talk = spec.double_talk
    if spec.epc:
        cfg.epc_schedule = list(PAPER_EPC_SCHEDULE)
    x1 = synth_speech_like(SourceSpec(duration_s=spec.duration_s, seed=spec.seed * 11 + 1))
    if spec.correlated:
        x2 = x1.copy()
    else:
        x2 = synth_speech_like(SourceSpec(duration_s=spec.duration_s, seed=spec.seed * 11 + 2))
    z = None
    if spec.double_talk:
        z = synth_speech_like(SourceSpec(duration_s=spec.duration_s, seed=spec.seed * 11 + 3,
                                         pattern="bursts", burst_on_s=2.0, burst_off_s=2.0))
    return render(cfg, x1, x2, z)


def run_trial(spec: TrialSpec, aec_cfg: KalmanConfig | None = None,
              dwacd_cfg: DwacdConfig | None = None,
              eval_span_s: float = 30.0) -> TrialResult:
    scene = render_trial_scene(spec)
    scene_no_sro = None
    if SystemKind.NO_SRO in spec.systems:
        scene_no_sro = render_trial_scene(spec, sro_override=0.0)

    result = TrialResult(spec=spec)
    for kind in spec.systems:
        sc = scene_no_sro if kind is SystemKind.NO_SRO else scene
        out = run_system(kind, sc, aec_cfg, dwacd_cfg)
        echo_total = sc.echo_components[0] + sc.echo_components[1]
        series, score = erle(echo_total, out.error_signal, sc.fs,
                             eval_span_s=eval_span_s)
        ned = None
        if spec.double_talk:
            mask = component_activity_mask(sc.near_end, sc.fs)
            ned = near_end_distortion(sc.near_end, out.error_signal, mask)
        conv = None
        if kind in (SystemKind.VARIANT1, SystemKind.VARIANT2):
            conv = sro_convergence(out.sro_trajectory, sc.config.sro_ppm, tol_ppm=2.0)
        result.systems[kind.value] = SystemResult(
            erle_db=score, erle_series=series, ned_db=ned,
            sro_conv_s=conv, sro_trajectory=out.sro_trajectory)
    return result


def epc_reentry_time(traj: MetricSeries, true_ppm: float, change_s: float,
                     window_s: float = 12.0, tol_ppm: float = 2.0) -> float:
    """Seconds after a path change until the estimate is back in band.

    Returns the first post-change time from which the estimate stays
    within the band for the rest of the window; inf if it never does.
    """
    sel = (traj.time_s > change_s) & (traj.time_s <= change_s + window_s)
    idx = np.where(sel)[0]
    if len(idx) == 0:
        return math.inf
    vals = traj.value[idx]
    inside = np.abs(vals - true_ppm) < tol_ppm
    if not inside[-1]:
        return math.inf
    outside = np.where(~inside)[0]
    if len(outside) == 0:
        return 0.0
    pos = outside[-1] + 1
    if pos >= len(idx):
        return math.inf
    return float(traj.time_s[idx[pos]] - change_s)


def epc_excursion(traj: MetricSeries, change_s: float, window_s: float = 10.0,
                  baseline_s: float = 5.0) -> float:
    """Peak deviation after a change, relative to the pre-change level."""
    before = (traj.time_s > change_s - baseline_s) & (traj.time_s <= change_s)
    after = (traj.time_s > change_s) & (traj.time_s <= change_s + window_s)
    if not np.any(before) or not np.any(after):
        return math.nan
    base = float(np.median(traj.value[before]))
    return float(np.max(np.abs(traj.value[after] - base)))
