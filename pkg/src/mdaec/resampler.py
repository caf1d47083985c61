"""Sample-rate-offset simulation and STFT-domain compensation.

Two jobs live here:

* ``simulate_sro`` renders a signal as if its device clock ran at
  (1+eps)*fs, used when generating test material.  A positive offset
  stretches the signal (a 1 kHz tone comes out at 1000/(1+eps) Hz) and
  the lag relative to the original grows by eps samples per sample.
* ``SroCompensator`` applies the matching per-bin phase ramp to
  reference spectra inside the echo canceller, keeping only the
  fractional part of the drift in the phase term and handing whole
  samples back to the caller as buffer shifts.

``sinc_resample_oracle`` is the ground-truth interpolator the tests
compare against; it plays no part in the processing chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .stft import SpectralFrame, StftConfig, make_window

MAX_ABS_SRO_PPM = 1000.0


def check_sro_ppm(ppm: float) -> float:
    if not np.isfinite(ppm) or abs(ppm) > MAX_ABS_SRO_PPM:
        raise ConfigError(f"SRO out of range: {ppm} ppm (|sro| <= {MAX_ABS_SRO_PPM})")
    return float(ppm)


@dataclass
class DriftState:
    """Book-keeping for fractional drift split into phase + buffer shifts.

    accumulated_shift is the total drift in samples since the start of
    the stream; integer_shift_applied is the part already absorbed by
    whole-sample buffer moves.  Their difference (the residual) is what
    the phase term carries and stays below half a sample.
    """

    accumulated_shift: float = 0.0
    integer_shift_applied: int = 0
    frames_processed: int = 0

    @property
    def residual(self) -> float:
        return self.accumulated_shift - self.integer_shift_applied


def simulate_sro(signal: np.ndarray, sro_ppm: float, segment_len: int = 8192) -> np.ndarray:
    """Render `signal` as if sampled at (1+eps)*fs, eps = sro_ppm*1e-6.

    Segment-wise frequency-domain fractional delays: sqrt-Hann windows
    of segment_len/8 samples at 50% overlap, each zero-padded to a
    segment_len FFT and rotated by the residual delay at its centre;
    whole samples of drift move the read position instead, so the phase
    term never exceeds half a sample.  Output length is
    round(len * (1+eps)).
    """
    x = np.asarray(signal, dtype=float)
    eps = check_sro_ppm(sro_ppm) * 1e-6
    if segment_len & (segment_len - 1) or segment_len <= 0:
        raise ConfigError(f"segment_len must be a power of two, got {segment_len}")
    if len(x) < segment_len:
        raise ConfigError("signal shorter than one segment")
    if eps == 0.0:
        return x.copy()
    win_len = segment_len // 8
    hop = win_len // 2
    if abs(eps) * segment_len > 0.25 * segment_len:
        raise ConfigError("drift per segment violates the small-drift condition")

    win = make_window("sqrt_hann", win_len)
    n_out = int(round(len(x) * (1.0 + eps)))
    n_seg = max(1, int(np.ceil((n_out - win_len) / hop)) + 1)
    max_shift = int(np.ceil(abs(eps) * (n_out + 1))) + 4
    pad_lo = max_shift + win_len
    xp = np.concatenate([np.zeros(pad_lo), x, np.zeros(max_shift + 2 * win_len + segment_len)])
    k = np.arange(segment_len // 2 + 1)
    out = np.zeros(n_seg * hop + win_len)
    delta = eps / (1.0 + eps)  # delay per output sample
    for s in range(n_seg):
        centre = s * hop + win_len / 2.0
        d = delta * centre
        d_int = int(np.round(d))
        d_frac = d - d_int
        start = s * hop - d_int
        seg = xp[pad_lo + start: pad_lo + start + win_len] * win
        spec = np.fft.rfft(seg, n=segment_len)
        spec *= np.exp(-2j * np.pi * k * d_frac / segment_len)
        out[s * hop: s * hop + win_len] += np.fft.irfft(spec, n=segment_len)[:win_len] * win
    return out[:n_out]


def sinc_resample_oracle(signal: np.ndarray, ratio: float, taps: int = 64,
                         kaiser_beta: float = 12.0) -> np.ndarray:
    """Band-limited resampling oracle: output[n] = signal(n / ratio).

    Kaiser-windowed sinc interpolation, `taps` taps per output sample,
    tap weights normalised to unit sum so DC passes exactly.  Only for
    validation; O(len*taps).
    """
    if not 0.9 < ratio < 1.1:
        raise ConfigError(f"oracle resampler supports 0.9 < ratio < 1.1, got {ratio}")
    x = np.asarray(signal, dtype=float)
    half = taps // 2
    n_out = int(round(len(x) * ratio))
    pad = half + 4
    xp = np.concatenate([np.zeros(pad), x, np.zeros(pad + 4)])
    n = np.arange(n_out)
    p = n / ratio
    i0 = np.floor(p).astype(int)
    t = np.arange(taps)
    pos = i0[:, None] + 1 - half + t[None, :]
    rel = pos - p[:, None]
    w = np.sinc(rel)
    w *= np.i0(kaiser_beta * np.sqrt(np.maximum(0.0, 1.0 - (rel / half) ** 2)))
    w /= w.sum(axis=1, keepdims=True)
    return (xp[pos + pad] * w).sum(axis=1)


def compensate_reference(frame: SpectralFrame, sro_hat_ppm: float, drift: DriftState,
                         cfg: StftConfig) -> tuple[SpectralFrame, DriftState, int]:
    """Multiply one reference frame by the drift phase ramp.

    The phase term carries only the residual fractional delay; the
    accumulator then advances by eps*hop for this frame, and once the
    new residual reaches half a sample the function reports a +-1 buffer
    shift for the caller to apply to the time-domain reference stream
    (+1 = delay the stream by one sample).  Returns (frame', drift', shift).
    """
    eps = check_sro_ppm(sro_hat_ppm) * 1e-6
    d = drift.residual
    k = np.arange(cfg.num_bins)
    bins = frame.bins * np.exp(-2j * np.pi * k * d / cfg.fft_size)
    out = SpectralFrame(bins, frame.frame_index, frame.channel_id)

    acc = drift.accumulated_shift + eps * cfg.hop_size
    applied = drift.integer_shift_applied
    shift = 0
    if abs(acc - applied) >= 0.5:
        shift = 1 if acc - applied > 0 else -1
        applied += shift
    new_drift = DriftState(acc, applied, drift.frames_processed + 1)
    return out, new_drift, shift
