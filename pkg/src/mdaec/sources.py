"""Synthetic speech-like sources and WAV I/O.

The generator stands in for a speech corpus: white noise shaped by a
time-varying all-pole filter (formant-like resonances redrawn every
20 ms), modulated by a syllabic-rate envelope, with an optional on/off
burst pattern.  Levels are set by the RMS of the active regions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile
from scipy.signal import lfilter

from .errors import ConfigError

DEFAULT_FS = 16000.0
POLE_UPDATE_S = 0.020
NUM_POLE_PAIRS = 4
MAX_POLE_RADIUS = 0.97
SYLLABIC_RATE_HZ = 4.0
OFF_FLOOR = 1e-3  # -60 dB, keeps "off" regions nonzero


@dataclass(frozen=True)
class SourceSpec:
    duration_s: float = 36.0
    level_dbfs: float = -25.0
    pattern: str = "continuous"    # or "bursts"
    burst_on_s: float = 1.0
    burst_off_s: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ConfigError("duration must be positive")
        if self.level_dbfs >= 0:
            raise ConfigError("level must be below 0 dBFS")
        if self.pattern not in ("continuous", "bursts"):
            raise ConfigError(f"unknown activity pattern '{self.pattern}'")


def activity_mask(spec: SourceSpec, fs: float = DEFAULT_FS) -> np.ndarray:
    n = int(round(spec.duration_s * fs))
    if spec.pattern == "continuous":
        return np.ones(n, dtype=bool)
    period = int(round((spec.burst_on_s + spec.burst_off_s) * fs))
    on = int(round(spec.burst_on_s * fs))
    t = np.arange(n) % period
    return t < on


def synth_speech_like(spec: SourceSpec, fs: float = DEFAULT_FS) -> np.ndarray:
    """Deterministic speech-like noise at the requested level."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x5E]))
    n = int(round(spec.duration_s * fs))
    excitation = rng.standard_normal(n)
    seg = int(round(POLE_UPDATE_S * fs))
    out = np.empty(n)
    zi = np.zeros(2 * NUM_POLE_PAIRS)
    for start in range(0, n, seg):
        radii = rng.uniform(0.80, MAX_POLE_RADIUS, NUM_POLE_PAIRS)
        freqs = rng.uniform(150.0, 3800.0, NUM_POLE_PAIRS)
        poles = radii * np.exp(2j * np.pi * freqs / fs)
        a = np.poly(np.concatenate([poles, np.conj(poles)])).real
        stop = min(start + seg, n)
        y, zi = lfilter([1.0], a, excitation[start:stop], zi=zi)
        # level the resonant gain per segment; the envelope alone sets
        # the level contour, keeping an ideal VAD threshold meaningful
        y_rms = math.sqrt(float(np.mean(y * y)))
        if y_rms > 0:
            y = y / y_rms
            zi = zi / y_rms
        out[start:stop] = y

    t = np.arange(n) / fs
    phase = rng.uniform(0.0, 2.0 * np.pi)
    env = 0.3 + 0.7 * (0.5 - 0.5 * np.cos(2.0 * np.pi * SYLLABIC_RATE_HZ * t + phase))
    out *= env

    mask = activity_mask(spec, fs)
    gate = np.where(mask, 1.0, OFF_FLOOR)
    out *= gate

    active_rms = math.sqrt(float(np.mean(out[mask] ** 2)))
    target = 10.0 ** (spec.level_dbfs / 20.0)
    out *= target / active_rms
    return out


def save_wav(path, samples: np.ndarray, fs: float = DEFAULT_FS,
             dtype: str = "float32"):
    """Write mono WAV, either IEEE float32 or PCM16."""
    x = np.asarray(samples, dtype=float)
    if dtype == "float32":
        wavfile.write(path, int(fs), x.astype(np.float32))
    elif dtype == "pcm16":
        q = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
        wavfile.write(path, int(fs), q)
    else:
        raise ConfigError(f"unsupported wav dtype '{dtype}'")


def load_wav(path, expected_fs: float = DEFAULT_FS) -> tuple[np.ndarray, float]:
    """Read a mono 16 kHz WAV into float samples in [-1, 1).

    PCM16 and float32 files are accepted; anything else (including other
    sample rates; there is no silent resampling) is an error.
    """
    fs, data = wavfile.read(path)
    if fs != int(expected_fs):
        raise ConfigError(f"expected a {int(expected_fs)} Hz file, got {fs} Hz")
    if data.ndim != 1:
        raise ConfigError(f"expected a mono file, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        return data.astype(float) / 32768.0, float(fs)
    if data.dtype == np.float32:
        return data.astype(float), float(fs)
    raise ConfigError(f"unsupported sample format {data.dtype}; use PCM16 or float32")
