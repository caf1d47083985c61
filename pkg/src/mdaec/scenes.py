"""Randomized two-device room scenes and microphone-signal rendering.

A scene is a shoebox room with two devices (each a loudspeaker plus, for
device one, the microphone running the canceller) and an optional
near-end talker.  Impulse responses come from the image-source method
with fractional-delay images; device two's echo is passed through the
offset simulator before mixing, and sensor noise is added at a fixed
SNR.  All clean components are kept so metrics and ideal VADs can use
ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .resampler import simulate_sro

SPEED_OF_SOUND = 343.0
WALL_MARGIN = 0.75
MIN_SEPARATION = 0.3
SPEAKER_OFFSET = np.array([0.10, 0.05, 0.0])
ROOM_LO = np.array([5.0, 5.0, 3.0])
ROOM_HI = np.array([8.0, 8.0, 6.0])
T60_RANGE = (0.2, 0.5)
CROSSFADE_S = 0.010


@dataclass
class EpcEvent:
    """One scheduled echo-path change."""

    time_s: float
    change: str  # device2_pos | mic1_pos | both


@dataclass
class SceneConfig:
    room_dims: np.ndarray
    t60: float
    device_pos: list          # [device1, device2] microphone positions
    talker_pos: np.ndarray
    sro_ppm: float = 0.0
    snr_sensor_db: float = 40.0
    signal_mode: str = "uncorrelated"   # or "correlated"
    double_talk: bool = False
    epc_schedule: list = field(default_factory=list)
    seed: int = 0
    fs: float = 16000.0

    def speaker_pos(self, device: int) -> np.ndarray:
        return np.asarray(self.device_pos[device]) + SPEAKER_OFFSET


@dataclass
class RenderedScene:
    mic: np.ndarray
    echo_components: list     # [h11*x1, sro(h12*x2)]
    near_end: np.ndarray
    far_end: list             # [x1, x2] at the primary rate
    noise: np.ndarray
    fs: float
    config: SceneConfig


def _draw_position(rng: np.random.Generator, room: np.ndarray) -> np.ndarray:
    return rng.uniform(WALL_MARGIN, room - WALL_MARGIN)


def _draw_separated(rng: np.random.Generator, room: np.ndarray,
                    others: list, min_dist: float = MIN_SEPARATION) -> np.ndarray:
    for _ in range(1000):
        p = _draw_position(rng, room)
        if all(np.linalg.norm(p - q) >= min_dist for q in others):
            return p
    raise ConfigError("could not place a point with the required separation")


def _displaced(rng: np.random.Generator, room: np.ndarray, pos: np.ndarray,
               lo: float = 0.3, hi: float = 0.6) -> np.ndarray:
    """Move a point by a random 0.3..0.6 m step, staying off the walls."""
    for _ in range(1000):
        step = rng.standard_normal(3)
        step *= rng.uniform(lo, hi) / np.linalg.norm(step)
        p = pos + step
        if np.all(p >= WALL_MARGIN) and np.all(p <= room - WALL_MARGIN):
            return p
    raise ConfigError("could not displace the point inside the room")


def sample_scene(seed: int) -> SceneConfig:
    """Uniform scene draw; identical seeds give identical configs."""
    rng = np.random.default_rng(seed)
    room = rng.uniform(ROOM_LO, ROOM_HI)
    t60 = rng.uniform(*T60_RANGE)
    d1 = _draw_separated(rng, room, [])
    d2 = _draw_separated(rng, room, [d1])
    talker = _draw_separated(rng, room, [d1, d2])
    return SceneConfig(room_dims=room, t60=t60, device_pos=[d1, d2],
                       talker_pos=talker, seed=seed)


def _ism_core(room: np.ndarray, src: np.ndarray, mic: np.ndarray, alpha: float,
              npts: int, fs: float, orders: np.ndarray, fractional: bool) -> np.ndarray:
    """Shoebox image sum with uniform absorption alpha.

    `fractional` switches between the 40-tap raised-cosine windowed-sinc
    kernel (production) and nearest-sample placement (cheap calibration
    probes, whose decay statistics are what matters).
    """
    c = SPEED_OF_SOUND
    beta = math.sqrt(max(0.0, 1.0 - alpha))
    tw = 40
    h = np.zeros(npts + tw + 2)
    rx = np.arange(-orders[0], orders[0] + 1)
    ry = np.arange(-orders[1], orders[1] + 1)
    rz = np.arange(-orders[2], orders[2] + 1)
    grid = np.stack(np.meshgrid(rx, ry, rz, indexing="ij"), axis=-1).reshape(-1, 3)
    kernel_n = np.arange(-tw // 2, tw // 2 + 1)
    fc = 0.9 * fs / 2.0

    for p in range(8):
        bits = np.array([(p >> i) & 1 for i in range(3)])
        img = (1 - 2 * bits) * src + 2.0 * grid * room
        dist = np.linalg.norm(img - mic[None, :], axis=1)
        refl = np.abs(grid + bits) + np.abs(grid)
        if beta > 0:
            amp = beta ** refl.sum(axis=1) / (4.0 * math.pi * np.maximum(dist, 1e-3))
        else:
            amp = np.where(refl.sum(axis=1) == 0,
                           1.0 / (4.0 * math.pi * np.maximum(dist, 1e-3)), 0.0)
        keep = (dist / c * fs < npts) & (amp > 1e-10)
        if not np.any(keep):
            continue
        dist = dist[keep]
        amp = amp[keep]
        base = np.round(dist / c * fs).astype(int)
        if fractional:
            t_rel = (base[:, None] + kernel_n[None, :]) / fs - (dist / c)[:, None]
            kern = 0.5 * (1.0 + np.cos(2.0 * np.pi * t_rel * fs / (2 * tw)))
            kern *= np.sinc(2.0 * fc * t_rel)
            idx = base[:, None] + kernel_n[None, :] + tw
            vals = kern * amp[:, None]
        else:
            idx = base + tw
            vals = amp
        ok = (idx >= 0) & (idx < len(h))
        h += np.bincount(np.asarray(idx)[ok].ravel(),
                         weights=np.asarray(vals)[ok].ravel(), minlength=len(h))
    return h[tw:tw + npts]


_absorption_cache: dict = {}


def _calibrated_absorption(room: np.ndarray, t60: float, fs: float) -> float:
    """Uniform wall absorption whose simulated decay hits the target time.

    Sabine's relation seeds the value; because the image-source decay of
    a shoebox is direction-mixed and not exactly exponential, the value
    is refined against the measured -60 dB decay of a cheap probe RIR at
    canonical positions.  Results are cached per (room, t60).
    """
    key = (round(room[0], 6), round(room[1], 6), round(room[2], 6), round(t60, 6), fs)
    if key in _absorption_cache:
        return _absorption_cache[key]
    volume = float(np.prod(room))
    surface = 2.0 * (room[0] * room[1] + room[0] * room[2] + room[1] * room[2])
    sabine = 0.161 * volume / (surface * t60)
    if sabine >= 1.0:
        _absorption_cache[key] = 1.0
        return 1.0
    src = room * np.array([0.31, 0.34, 0.40])
    mic = room * np.array([0.63, 0.57, 0.52])
    npts = int(math.ceil(1.5 * t60 * fs)) + 128
    orders = np.ceil((npts / fs * SPEED_OF_SOUND) / (2.0 * room)).astype(int)
    u = -math.log(1.0 - min(sabine, 0.999))
    for _ in range(3):
        alpha = 1.0 - math.exp(-u)
        probe = _ism_core(room, src, mic, alpha, npts, fs, orders, fractional=False)
        t_meas = schroeder_t60(probe, fs)
        if not math.isfinite(t_meas):
            break
        ratio = t_meas / t60
        if 0.95 < ratio < 1.05:
            break
        u *= min(3.0, max(0.3, ratio))
    alpha = 1.0 - math.exp(-u)
    _absorption_cache[key] = alpha
    return alpha


def image_source_rir(room: np.ndarray, src: np.ndarray, mic: np.ndarray,
                     t60: float, fs: float, max_order: int | None = None) -> np.ndarray:
    """Fractional-delay image-source impulse response.

    Uniform wall absorption is derived from the target reverberation
    time (Sabine seed, decay-calibrated; fully absorbing when the target
    is shorter than the room supports); each image writes a 40-sample
    raised-cosine windowed sinc at its true continuous delay.
    """
    room = np.asarray(room, dtype=float)
    src = np.asarray(src, dtype=float)
    mic = np.asarray(mic, dtype=float)
    if t60 <= 0:
        raise ConfigError("t60 must be positive")
    if np.linalg.norm(src - mic) < 0.01:
        raise ConfigError("source and microphone closer than 1 cm")
    if np.any(src <= 0) or np.any(src >= room) or np.any(mic <= 0) or np.any(mic >= room):
        raise ConfigError("positions must lie inside the room")

    c = SPEED_OF_SOUND
    alpha = _calibrated_absorption(room, t60, fs)
    direct = np.linalg.norm(src - mic)
    npts = int(math.ceil(1.5 * t60 * fs + direct / c * fs)) + 64
    max_dist = (npts / fs) * c
    if max_order is None:
        orders = np.ceil(max_dist / (2.0 * room)).astype(int)
    else:
        orders = np.array([max_order] * 3)
    return _ism_core(room, src, mic, alpha, npts, fs, orders, fractional=True)


def schroeder_t60(rir: np.ndarray, fs: float, drop_db: float = 60.0) -> float:
    """Reverberation time from the backward-integrated energy decay."""
    e = rir.astype(float) ** 2
    edc = np.cumsum(e[::-1])[::-1]
    edc /= edc[0]
    db = 10.0 * np.log10(np.maximum(edc, 1e-30))
    peak = int(np.argmax(e))
    below = np.where(db[peak:] <= -drop_db)[0]
    if len(below) == 0:
        return math.inf
    return below[0] / fs


def _epc_change_sets(cfg: SceneConfig) -> list:
    """Expand the schedule into epochs of (start_sample, h11, h12, hz).

    device2_pos displaces device two by 0.3..0.6 m (its loudspeaker
    moves, so only the cross path changes); mic1_pos displaces the
    primary microphone but by design regenerates only the own path,
    keeping the cross path frozen so the two change types stay isolated
    for the asymmetry experiments; both displaces both.  hz is the
    near-end talker path to the primary microphone.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xEC]))
    fs = cfg.fs
    mic1 = np.asarray(cfg.device_pos[0])
    spk1 = cfg.speaker_pos(0)
    spk2 = cfg.speaker_pos(1)
    talker = np.asarray(cfg.talker_pos)

    h11 = image_source_rir(cfg.room_dims, spk1, mic1, cfg.t60, fs)
    h12 = image_source_rir(cfg.room_dims, spk2, mic1, cfg.t60, fs)
    hz = image_source_rir(cfg.room_dims, talker, mic1, cfg.t60, fs)
    epochs = [(0, h11, h12, hz)]
    for event in sorted(cfg.epc_schedule, key=lambda ev: ev.time_s):
        start = int(round(event.time_s * fs))
        if event.change in ("device2_pos", "both"):
            spk2 = _displaced(rng, cfg.room_dims, spk2)
            h12 = image_source_rir(cfg.room_dims, spk2, mic1, cfg.t60, fs)
        if event.change in ("mic1_pos", "both"):
            mic1 = _displaced(rng, cfg.room_dims, mic1)
            h11 = image_source_rir(cfg.room_dims, spk1, mic1, cfg.t60, fs)
            hz = image_source_rir(cfg.room_dims, talker, mic1, cfg.t60, fs)
            if event.change == "both":
                h12 = image_source_rir(cfg.room_dims, spk2, mic1, cfg.t60, fs)
        if event.change not in ("device2_pos", "mic1_pos", "both"):
            raise ConfigError(f"unknown echo-path change '{event.change}'")
        epochs.append((start, h11, h12, hz))
    return epochs


def apply_epc(cfg: SceneConfig) -> list:
    """Public view of the epoch expansion (start_sample, h11, h12, hz)."""
    return _epc_change_sets(cfg)


def _convolve_epochs(x: np.ndarray, epochs: list, which: int, fs: float) -> np.ndarray:
    """Convolve x with the per-epoch RIR, crossfading at switch times."""
    from scipy.signal import fftconvolve

    n = len(x)
    fade = int(round(CROSSFADE_S * fs))
    out = np.zeros(n)
    for i, (start, *rirs) in enumerate(epochs):
        rir = rirs[which]
        y = fftconvolve(x, rir)[:n]
        w = np.zeros(n)
        end = epochs[i + 1][0] if i + 1 < len(epochs) else n
        if start >= n:
            continue
        w[start:end] = 1.0
        if start > 0:
            ramp = np.linspace(0.0, 1.0, fade, endpoint=False)
            hi = min(start + fade, n)
            w[start:hi] = ramp[: hi - start]
        if end < n:
            ramp = np.linspace(1.0, 0.0, fade, endpoint=False)
            hi = min(end + fade, n)
            w[end:hi] = ramp[: hi - end]
        out += w * y
    # overlapping ramps sum to one by construction
    return out


def render(cfg: SceneConfig, x1: np.ndarray, x2: np.ndarray,
           z: np.ndarray | None = None) -> RenderedScene:
    """Mix the microphone signal and keep every component.

    The device-two echo is rendered at the primary rate and then passed
    through the offset simulator, matching hardware where the offset
    lives in the playback clock of the second device.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if len(x1) != len(x2):
        raise ConfigError("far-end signals must have equal length")
    if z is not None and len(z) != len(x1):
        raise ConfigError("near-end signal length must match the far ends")
    n = len(x1)
    fs = cfg.fs

    epochs = _epc_change_sets(cfg)
    echo1 = _convolve_epochs(x1, epochs, 0, fs)
    echo2 = _convolve_epochs(x2, epochs, 1, fs)
    if cfg.sro_ppm != 0.0:
        echo2 = simulate_sro(echo2, cfg.sro_ppm)
        if len(echo2) < n:
            echo2 = np.concatenate([echo2, np.zeros(n - len(echo2))])
        else:
            echo2 = echo2[:n]

    near = _convolve_epochs(z.astype(float), epochs, 2, fs) if z is not None else np.zeros(n)
    pre = echo1 + echo2 + near
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x4E]))
    noise = rng.standard_normal(n)
    p_pre = float(np.mean(pre ** 2))
    target = p_pre * 10.0 ** (-cfg.snr_sensor_db / 10.0)
    noise *= math.sqrt(target / float(np.mean(noise ** 2))) if p_pre > 0 else 0.0
    mic = pre + noise
    return RenderedScene(mic=mic, echo_components=[echo1, echo2], near_end=near,
                         far_end=[x1, x2], noise=noise, fs=fs, config=cfg)
