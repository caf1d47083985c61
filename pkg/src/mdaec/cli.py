"""Experiment command line: sweeps, echo-path-change runs, single trials.

Configuration comes from defaults, then an optional key=value config
file, then flags (highest precedence).  Every run writes a manifest of
the resolved configuration next to its outputs; result CSVs contain no
timestamps so reruns with the same seed are byte-identical.
"""

from __future__ import annotations

import argparse
import math
import multiprocessing
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, MdaecError
from .harness import (TrialSpec, component_activity_mask, epc_reentry_time,
                      render_trial_scene, run_trial)
from .metrics import erle, near_end_distortion
from .pipeline import SystemKind, run_system
from .sources import load_wav, save_wav

SYSTEM_ALIASES = {
    "variant1": SystemKind.VARIANT1,
    "variant2": SystemKind.VARIANT2,
    "no_sro": SystemKind.NO_SRO,
    "no_compensation": SystemKind.NO_COMPENSATION,
    "oracle_sro": SystemKind.ORACLE_SRO,
}
ALL_SYSTEMS = tuple(SYSTEM_ALIASES)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isinf(value):
            return "inf"
        return f"{value:.6f}"
    return str(value)


@dataclass
class ExperimentConfig:
    systems: tuple = ALL_SYSTEMS
    sro_grid: tuple = tuple(range(-150, 151, 25))
    num_trials: int = 50
    mode: str = "echo_only"          # echo_only | double_talk
    playback: str = "uncorrelated"   # uncorrelated | correlated
    duration_s: float = 36.0
    sro_ppm: float = 100.0           # for epc/single
    seed_base: int = 1000
    seed: int = 0                    # single-trial seed offset
    jobs: int = 0                    # 0 -> cpu count
    output_dir: str = "results"

    def validate(self):
        if self.num_trials < 1:
            raise ConfigError("num_trials must be >= 1")
        if any(abs(g) > 150 for g in self.sro_grid):
            raise ConfigError("sro grid must stay within +-150 ppm")
        if self.mode not in ("echo_only", "double_talk"):
            raise ConfigError(f"unknown mode '{self.mode}'")
        if self.playback not in ("uncorrelated", "correlated"):
            raise ConfigError(f"unknown playback '{self.playback}'")
        for name in self.systems:
            if name not in SYSTEM_ALIASES:
                raise ConfigError(f"unknown system '{name}'")


def load_config_file(path: str) -> dict:
    values = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"bad config line: '{line}'")
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip()
    return values


def _parse_grid(text: str) -> tuple:
    if ":" in text:
        lo, hi, step = (float(p) for p in text.split(":"))
        count = int(round((hi - lo) / step)) + 1
        return tuple(lo + i * step for i in range(count))
    return tuple(float(p) for p in text.split(","))


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig()
    merged: dict = {}
    if getattr(args, "config", None):
        merged.update(load_config_file(args.config))
    for key in ("systems", "sro_grid", "num_trials", "mode", "playback",
                "duration_s", "sro_ppm", "seed_base", "seed", "jobs", "output_dir"):
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    if "systems" in merged:
        raw = merged["systems"]
        names = raw.split(",") if isinstance(raw, str) else raw
        cfg.systems = tuple(n.strip() for n in names)
    if "sro_grid" in merged:
        raw = merged["sro_grid"]
        cfg.sro_grid = _parse_grid(raw) if isinstance(raw, str) else tuple(raw)
    for key, cast in (("num_trials", int), ("duration_s", float), ("sro_ppm", float),
                      ("seed_base", int), ("seed", int), ("jobs", int)):
        if key in merged:
            setattr(cfg, key, cast(merged[key]))
    for key in ("mode", "playback", "output_dir"):
        if key in merged:
            setattr(cfg, key, str(merged[key]))
    env_out = os.environ.get("MDAEC_OUTPUT_DIR")
    if env_out and getattr(args, "output_dir", None) is None:
        cfg.output_dir = env_out
    cfg.validate()
    return cfg


def write_manifest(cfg: ExperimentConfig, out_dir: str, command: str):
    path = os.path.join(out_dir, "manifest.txt")
    with open(path, "w") as fh:
        fh.write(f"command={command}\n")
        fh.write(f"timestamp={time.strftime('%Y-%m-%dT%H:%M:%S')}\n")
        fh.write(f"systems={','.join(cfg.systems)}\n")
        fh.write(f"sro_grid={','.join(_fmt(float(g)) for g in cfg.sro_grid)}\n")
        for key in ("num_trials", "mode", "playback", "duration_s", "sro_ppm",
                    "seed_base", "seed", "jobs", "output_dir"):
            fh.write(f"{key}={getattr(cfg, key)}\n")


def read_manifest(path: str) -> ExperimentConfig:
    values = load_config_file(path)
    values.pop("command", None)
    values.pop("timestamp", None)
    ns = argparse.Namespace(config=None)
    for key, val in values.items():
        setattr(ns, key, val)
    return resolve_config(ns)


def _trial_spec(cfg: ExperimentConfig, sro: float, trial: int, epc: bool) -> TrialSpec:
    return TrialSpec(
        seed=cfg.seed_base + trial,
        sro_ppm=sro,
        correlated=cfg.playback == "correlated",
        double_talk=cfg.mode == "double_talk",
        duration_s=60.0 if epc else cfg.duration_s,
        epc=epc,
        systems=tuple(SYSTEM_ALIASES[s] for s in cfg.systems),
    )


def _run_trial_job(job):
    spec, eval_span = job
    return run_trial(spec, eval_span_s=eval_span)


def _pool_map(jobs, njobs):
    if njobs <= 0:
        njobs = multiprocessing.cpu_count()
    if njobs == 1 or len(jobs) == 1:
        return [_run_trial_job(j) for j in jobs]
    with multiprocessing.Pool(njobs) as pool:
        return pool.map(_run_trial_job, jobs)


def _write_rows(path: str, header: list, rows: list):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def cmd_sweep(args) -> int:
    cfg = resolve_config(args)
    out_dir = cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    if not os.access(out_dir, os.W_OK):
        raise ConfigError(f"output dir not writable: {out_dir}")
    write_manifest(cfg, out_dir, "sweep")

    jobs = [(_trial_spec(cfg, sro, t, epc=False), 30.0)
            for sro in cfg.sro_grid for t in range(cfg.num_trials)]
    results = _pool_map(jobs, cfg.jobs)

    rows = []
    for (spec, _), res in zip(jobs, results):
        trial = spec.seed - cfg.seed_base
        for name in cfg.systems:
            sr = res.systems[name]
            rows.append([trial, name, spec.sro_ppm,
                         f"{cfg.mode}/{cfg.playback}", sr.erle_db, sr.ned_db,
                         sr.sro_conv_s, spec.seed])
    rows.sort(key=lambda r: (r[2], r[0], r[1]))
    _write_rows(os.path.join(out_dir, "trials.csv"),
                ["trial", "system", "sro_ppm", "mode", "erle_db", "ned_db",
                 "sro_conv_s", "seed"], rows)

    agg = []
    for sro in cfg.sro_grid:
        for name in cfg.systems:
            vals = [r[4] for r in rows if r[2] == sro and r[1] == name]
            neds = [r[5] for r in rows if r[2] == sro and r[1] == name and r[5] is not None]
            agg.append([name, float(sro), float(np.mean(vals)), float(np.std(vals)),
                        float(np.mean(neds)) if neds else None, len(vals)])
    agg.sort(key=lambda r: (r[1], r[0]))
    _write_rows(os.path.join(out_dir, "aggregate.csv"),
                ["system", "sro_ppm", "erle_mean_db", "erle_std_db",
                 "ned_mean_db", "n"], agg)
    print(f"sweep: {len(rows)} rows -> {out_dir}")
    return 0


def cmd_epc(args) -> int:
    cfg = resolve_config(args)
    out_dir = cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    write_manifest(cfg, out_dir, "epc")

    jobs = [(_trial_spec(cfg, cfg.sro_ppm, t, epc=True), 30.0)
            for t in range(cfg.num_trials)]
    results = _pool_map(jobs, cfg.jobs)

    summary = []
    for (spec, _), res in zip(jobs, results):
        trial = spec.seed - cfg.seed_base
        for name in cfg.systems:
            sr = res.systems[name]
            traj = sr.sro_trajectory
            series_rows = [[f"{t:.6f}", f"{v:.6f}"]
                           for t, v in zip(traj.time_s, traj.value)]
            _write_rows(os.path.join(out_dir, f"sro_{name}_trial{trial}.csv"),
                        ["t_s", "sro_ppm_est"], series_rows)
            reentries = [epc_reentry_time(traj, spec.sro_ppm, t_c)
                         for t_c in (15.0, 30.0, 45.0)]
            summary.append([trial, name, spec.sro_ppm, sr.erle_db] + reentries)
    summary.sort(key=lambda r: (r[0], r[1]))
    _write_rows(os.path.join(out_dir, "epc_summary.csv"),
                ["trial", "system", "sro_ppm", "erle_db",
                 "reentry_15s", "reentry_30s", "reentry_45s"], summary)
    print(f"epc: {len(summary)} rows -> {out_dir}")
    return 0


def cmd_single(args) -> int:
    cfg = resolve_config(args)
    out_dir = cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    write_manifest(cfg, out_dir, "single")

    spec = _trial_spec(cfg, cfg.sro_ppm, cfg.seed, epc=False)
    scene = render_trial_scene(spec)
    save_wav(os.path.join(out_dir, "mic.wav"), scene.mic, scene.fs)
    save_wav(os.path.join(out_dir, "echo1.wav"), scene.echo_components[0], scene.fs)
    save_wav(os.path.join(out_dir, "echo2.wav"), scene.echo_components[1], scene.fs)
    save_wav(os.path.join(out_dir, "near_end.wav"), scene.near_end, scene.fs)
    save_wav(os.path.join(out_dir, "noise.wav"), scene.noise, scene.fs)
    save_wav(os.path.join(out_dir, "far_end1.wav"), scene.far_end[0], scene.fs)
    save_wav(os.path.join(out_dir, "far_end2.wav"), scene.far_end[1], scene.fs)

    rows = []
    for name in cfg.systems:
        kind = SYSTEM_ALIASES[name]
        sc = render_trial_scene(spec, sro_override=0.0) if kind is SystemKind.NO_SRO else scene
        out = run_system(kind, sc)
        save_wav(os.path.join(out_dir, f"output_{name}.wav"), out.error_signal, sc.fs)
        echo_total = sc.echo_components[0] + sc.echo_components[1]
        series, score = erle(echo_total, out.error_signal, sc.fs)
        _write_rows(os.path.join(out_dir, f"erle_{name}.csv"), ["t_s", "erle_db"],
                    [[f"{t:.6f}", f"{v:.6f}"] for t, v in zip(series.time_s, series.value)])
        ned = None
        if spec.double_talk:
            mask = component_activity_mask(sc.near_end, sc.fs)
            ned = near_end_distortion(sc.near_end, out.error_signal, mask)
        rows.append([cfg.seed, name, spec.sro_ppm, f"{cfg.mode}/{cfg.playback}",
                     score, ned, None, spec.seed])
    _write_rows(os.path.join(out_dir, "trials.csv"),
                ["trial", "system", "sro_ppm", "mode", "erle_db", "ned_db",
                 "sro_conv_s", "seed"], rows)
    print(f"single: outputs -> {out_dir}")
    return 0


def cmd_metrics(args) -> int:
    """Recompute metrics from the WAVs written by a previous `single` run."""
    run_dir = args.dir
    manifest = os.path.join(run_dir, "manifest.txt")
    if not os.path.isfile(manifest):
        raise ConfigError(f"no manifest found in {run_dir}")
    cfg = read_manifest(manifest)
    echo1, fs = load_wav(os.path.join(run_dir, "echo1.wav"))
    echo2, _ = load_wav(os.path.join(run_dir, "echo2.wav"))
    near, _ = load_wav(os.path.join(run_dir, "near_end.wav"))
    echo_total = echo1 + echo2
    rows = []
    for name in cfg.systems:
        path = os.path.join(run_dir, f"output_{name}.wav")
        if not os.path.isfile(path):
            continue
        out, _ = load_wav(path)
        _, score = erle(echo_total, out, fs)
        ned = None
        if np.any(near != 0.0):
            mask = component_activity_mask(near, fs)
            ned = near_end_distortion(near, out, mask)
        rows.append([name, score, ned])
    _write_rows(os.path.join(run_dir, "metrics_recomputed.csv"),
                ["system", "erle_db", "ned_db"], rows)
    print(f"metrics: {len(rows)} systems -> {run_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mdaec",
        description="Two-device echo cancellation experiments with clock-offset handling")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--systems", help="comma list: " + ",".join(ALL_SYSTEMS))
        p.add_argument("--trials", dest="num_trials", type=int)
        p.add_argument("--mode", choices=["echo_only", "double_talk"])
        p.add_argument("--playback", choices=["uncorrelated", "correlated"])
        p.add_argument("--duration", dest="duration_s", type=float)
        p.add_argument("--seed-base", dest="seed_base", type=int)
        p.add_argument("--jobs", type=int)
        p.add_argument("--out", dest="output_dir")

    p_sweep = sub.add_parser("sweep", help="ERLE vs offset over a grid of trials")
    add_common(p_sweep)
    p_sweep.add_argument("--sro-grid", dest="sro_grid",
                         help="lo:hi:step or comma list, ppm")
    p_sweep.set_defaults(func=cmd_sweep)

    p_epc = sub.add_parser("epc", help="echo-path-change runs (60 s, changes at 15/30/45 s)")
    add_common(p_epc)
    p_epc.add_argument("--sro", dest="sro_ppm", type=float)
    p_epc.set_defaults(func=cmd_epc)

    p_single = sub.add_parser("single", help="one trial with WAV and CSV artifacts")
    add_common(p_single)
    p_single.add_argument("--sro", dest="sro_ppm", type=float)
    p_single.add_argument("--seed", type=int)
    p_single.set_defaults(func=cmd_single)

    p_metrics = sub.add_parser("metrics", help="recompute metrics from stored WAVs")
    p_metrics.add_argument("--dir", required=True)
    p_metrics.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except MdaecError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
