"""Partitioned-block frequency-domain Kalman filter for 1 or 2 far-end channels.

The echo tail is modelled as B partitions per channel, each one hop
long.  Per frame the filter predicts the echo spectrum from delayed
reference spectra, forms the error in the time domain (overlap-save:
only the fresh half of each frame is compared), and updates every
partition with a per-bin diagonal Kalman gain.  The observation-noise
and process-noise covariances are tracked per bin with simple recursive
rules since no closed form exists for either.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InvalidFrameError
from .stft import SpectralFrame


@dataclass(frozen=True)
class KalmanConfig:
    num_channels: int = 2
    partitions: int = 10
    fft_size: int = 512            # V
    hop: int = 256                 # M
    transition: float = 0.999      # A
    process_noise_scale: float = 1.0
    obs_noise_smoothing: float = 0.9
    p_init: float = 1e-2
    psi_zz_init: float = 1e-4
    noise_floor: float = 1e-10

    def __post_init__(self):
        if self.num_channels < 1:
            raise ConfigError("need at least one far-end channel")
        if self.partitions < 1:
            raise ConfigError("need at least one partition")
        if self.hop * 2 != self.fft_size:
            raise ConfigError("hop must be fft_size/2")
        if not 0.0 < self.transition <= 1.0:
            raise ConfigError("transition must be in (0, 1]")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    def tail_seconds(self, fs: float) -> float:
        return self.partitions * self.hop / fs


class PartitionedKalmanAec:
    """Streaming filter state for one microphone; feed frames in order."""

    def __init__(self, cfg: KalmanConfig | None = None):
        self.cfg = cfg or KalmanConfig()
        q, b, k = self.cfg.num_channels, self.cfg.partitions, self.cfg.num_bins
        self.h_hat = np.zeros((q, b, k), dtype=complex)
        self.p_cov = np.full((q, b, k), self.cfg.p_init)
        self.x_history = np.zeros((q, b, k), dtype=complex)
        self.psi_zz = np.full(k, self.cfg.psi_zz_init)
        self.psi_delta = np.zeros((q, b, k))
        self.frames_processed = 0

    def update_observation_noise(self, error_bins: np.ndarray):
        lam = self.cfg.obs_noise_smoothing
        self.psi_zz = lam * self.psi_zz + (1.0 - lam) * np.abs(error_bins) ** 2

    def update_process_noise(self):
        a = self.cfg.transition
        self.psi_delta = (self.cfg.process_noise_scale * (1.0 - a * a)
                          * np.abs(self.h_hat) ** 2 + self.cfg.noise_floor)

    def process_frame(self, mic: SpectralFrame, refs: list[SpectralFrame]
                      ) -> tuple[SpectralFrame, SpectralFrame]:
        """One adaptation step; returns (echo_estimate, error) frames.

        `mic` and every reference must share a frame index; reference
        frames are ordered by channel.  Non-finite input leaves the
        state untouched and raises.
        """
        cfg = self.cfg
        if len(refs) != cfg.num_channels:
            raise ConfigError(f"expected {cfg.num_channels} reference frames, got {len(refs)}")
        for fr in (mic, *refs):
            if len(fr.bins) != cfg.num_bins:
                raise ConfigError("frame bin count does not match config")
            if not np.all(np.isfinite(fr.bins)):
                raise InvalidFrameError(f"non-finite bins in frame {fr.frame_index}")
        for fr in refs:
            if fr.frame_index != mic.frame_index:
                raise ConfigError("mic and reference frame indices differ")

        m, v = cfg.hop, cfg.fft_size
        a = cfg.transition

        self.x_history[:, 1:] = self.x_history[:, :-1]
        for qi, fr in enumerate(refs):
            self.x_history[qi, 0] = fr.bins

        d_hat = np.sum(self.h_hat * self.x_history, axis=(0, 1))
        y_hat = np.fft.irfft(d_hat, n=v)[m:]
        y_obs = np.fft.irfft(mic.bins, n=v)[m:]
        e = y_obs - y_hat
        e_bins = np.fft.rfft(np.concatenate([np.zeros(m), e]))
        echo_bins = np.fft.rfft(np.concatenate([np.zeros(m), y_hat]))

        self.update_observation_noise(e_bins)

        # innovation power summed over channels and partitions; the
        # shared denominator keeps the two-channel update stable
        denom = np.sum(np.abs(self.x_history) ** 2 * self.p_cov, axis=(0, 1))
        denom = np.maximum(denom + (m / v) * self.psi_zz, cfg.noise_floor)
        gain = self.p_cov * np.conj(self.x_history) / denom

        correction = gain * e_bins
        # overlap-save gradient constraint: each partition's correction
        # must be causal within its half-frame
        ct = np.fft.irfft(correction, n=v, axis=-1)
        ct[..., m:] = 0.0
        correction = np.fft.rfft(ct, axis=-1)
        self.h_hat = a * (self.h_hat + correction)

        self.update_process_noise()
        shrink = 1.0 - np.real(gain * self.x_history)
        self.p_cov = (a * a) * shrink * self.p_cov + self.psi_delta

        self.frames_processed += 1
        echo = SpectralFrame(echo_bins, mic.frame_index, mic.channel_id)
        err = SpectralFrame(e_bins, mic.frame_index, mic.channel_id)
        return echo, err

    def time_domain_filter(self, channel: int) -> np.ndarray:
        """Concatenated first-half impulse responses of the partitions,
        i.e. the modelled echo tail of length partitions*hop samples.
        """
        m, v = self.cfg.hop, self.cfg.fft_size
        parts = np.fft.irfft(self.h_hat[channel], n=v, axis=-1)[:, :m]
        return parts.reshape(-1)
