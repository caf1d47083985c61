"""Shared STFT analysis/synthesis framework.

Weighted overlap-add (WOLA) transforms with a square-root Hann window
pair, used by the resamplers and available to every frame-based stage.
The adaptive filter uses the overlap-save framing helpers at the bottom
of this module, which produce the same ``SpectralFrame`` objects on the
same bin grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FrameGapError


def make_window(name: str, length: int) -> np.ndarray:
    """Return the named tapering function sampled at `length` points.

    Windows are periodic (DFT-even) so that 50% and 75% overlaps satisfy
    the constant-overlap-add property exactly.
    """
    n = np.arange(length)
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)
    if name == "sqrt_hann":
        return np.sqrt(hann)
    if name == "hann":
        return hann
    if name == "rect":
        return np.ones(length)
    raise ConfigError(f"unknown window '{name}'")


@dataclass(frozen=True)
class StftConfig:
    """Frame geometry for analysis/synthesis.

    window_size and fft_size coincide; hop_size must divide window_size
    (50% or 75% overlap in practice).
    """

    window_size: int = 512
    hop_size: int = 256
    window: str = "sqrt_hann"

    def __post_init__(self):
        n_w, n_h = self.window_size, self.hop_size
        if n_w <= 0 or (n_w & (n_w - 1)) != 0:
            raise ConfigError(f"window_size must be a power of two, got {n_w}")
        if n_h <= 0 or n_h > n_w or n_w % n_h != 0:
            raise ConfigError(f"hop_size must divide window_size, got {n_h}/{n_w}")
        make_window(self.window, 2)  # validate the name early

    @property
    def fft_size(self) -> int:
        return self.window_size

    @property
    def num_bins(self) -> int:
        return self.window_size // 2 + 1

    def analysis_window(self) -> np.ndarray:
        return make_window(self.window, self.window_size)

    def cola_error(self) -> float:
        """Relative deviation of the analysis*synthesis overlap sum from
        a constant.  sqrt-Hann at 50% overlap comes out at machine zero.
        """
        w = self.analysis_window()
        ws = w * w
        acc = np.zeros(self.window_size)
        for off in range(0, self.window_size, self.hop_size):
            acc += np.roll(ws, off)
        return float(np.max(np.abs(acc - acc.mean())) / acc.mean())


@dataclass
class SpectralFrame:
    """One STFT frame: rfft bins of one channel at frame index m."""

    bins: np.ndarray
    frame_index: int
    channel_id: int = 0

    def copy(self) -> "SpectralFrame":
        return SpectralFrame(self.bins.copy(), self.frame_index, self.channel_id)


def analyze(signal: np.ndarray, cfg: StftConfig, channel_id: int = 0) -> list[SpectralFrame]:
    """Windowed rfft frames starting at m*hop; only complete windows are
    emitted, so a signal shorter than one window yields no frames.
    """
    x = np.asarray(signal, dtype=float)
    n_w, n_h = cfg.window_size, cfg.hop_size
    if len(x) < n_w:
        return []
    win = cfg.analysis_window()
    num_frames = (len(x) - n_w) // n_h + 1
    frames = []
    for m in range(num_frames):
        seg = x[m * n_h: m * n_h + n_w] * win
        frames.append(SpectralFrame(np.fft.rfft(seg), m, channel_id))
    return frames


def synthesize(frames: list[SpectralFrame], cfg: StftConfig) -> np.ndarray:
    """Weighted overlap-add reconstruction.

    Frames must be contiguous in frame_index.  With the default
    sqrt-Hann pair the interior of the signal is reconstructed exactly;
    the first and last window_size - hop_size samples are attenuated by
    the missing overlap partners.
    """
    if not frames:
        return np.zeros(0)
    n_w, n_h = cfg.window_size, cfg.hop_size
    for prev, cur in zip(frames, frames[1:]):
        if cur.frame_index != prev.frame_index + 1:
            raise FrameGapError(
                f"frame index gap: {prev.frame_index} -> {cur.frame_index}")
    win = cfg.analysis_window()
    norm = np.zeros(n_w)
    for off in range(0, n_w, n_h):
        norm += np.roll(win * win, off)
    out = np.zeros((len(frames) - 1) * n_h + n_w)
    for i, fr in enumerate(frames):
        seg = np.fft.irfft(fr.bins, n=n_w) * win
        out[i * n_h: i * n_h + n_w] += seg
    # the overlap sum is constant (COLA); divide it out once
    out /= norm.mean()
    return out


def interior_slice(num_samples: int, cfg: StftConfig) -> slice:
    """Region of a round-tripped signal unaffected by edge attenuation."""
    edge = cfg.window_size
    return slice(edge, num_samples - edge)


# ---------------------------------------------------------------------------
# Overlap-save framing for the partitioned-block adaptive filter.
# ---------------------------------------------------------------------------

class ReferenceFramer:
    """Sliding-buffer rfft framing of a reference stream.

    Each pushed hop of M samples produces the spectrum of the most
    recent 2M samples (rectangular window), the frame layout expected by
    the partitioned-block filter.  An integer drift shift can be applied
    between hops: shift=+1 rewinds the stream by one sample (the next
    frame re-reads it), delaying the reference by one sample.
    """

    def __init__(self, signal: np.ndarray, hop: int):
        self._x = np.asarray(signal, dtype=float)
        self._hop = hop
        self._pos = 0
        self._frame_index = 0
        self._pending_shift = 0

    def apply_shift(self, shift: int):
        self._pending_shift += int(shift)

    @property
    def exhausted(self) -> bool:
        return self._pos + self._hop > len(self._x)

    def next_frame(self, channel_id: int = 0) -> SpectralFrame:
        m = self._hop
        self._pos -= self._pending_shift
        self._pending_shift = 0
        start = self._pos - m
        buf = np.zeros(2 * m)
        lo = max(start, 0)
        hi = min(self._pos + m, len(self._x))
        if hi > lo:
            buf[lo - start: hi - start] = self._x[lo:hi]
        self._pos += m
        frame = SpectralFrame(np.fft.rfft(buf), self._frame_index, channel_id)
        self._frame_index += 1
        return frame


def observation_frame(block: np.ndarray, frame_index: int,
                      channel_id: int = 0) -> SpectralFrame:
    """Zero-history rfft frame of one observation hop: rfft([0_M, block]).

    The filter only consumes the last M time samples of the observation,
    so the first half carries no information and is pinned to zero; this
    makes the returned error spectrum comparable bin-by-bin.
    """
    m = len(block)
    buf = np.concatenate([np.zeros(m), np.asarray(block, dtype=float)])
    return SpectralFrame(np.fft.rfft(buf), frame_index, channel_id)


def frame_to_block(frame: SpectralFrame) -> np.ndarray:
    """Recover the fresh M time samples carried by an rfft frame."""
    t = np.fft.irfft(frame.bins)
    return t[len(t) // 2:]
