"""Online sample-rate-offset estimation from coherence drift.

The estimator watches an input signal (an echo-canceller error) and the
clean far-end reference.  Every half segment it computes the complex
coherence between the newest segment of both, multiplies it with the
conjugate coherence from exactly one segment earlier, smooths that
product recursively, and reads the offset from the peak lag of the
inverse DFT of the smoothed product: a constant offset makes the
inter-signal delay grow linearly, so the phase of the coherence product
is a ramp whose slope is the drift accumulated over one segment.

The reference ring is re-aligned while estimating (whole samples through
the read position, the sub-sample rest through a phase rotation) so the
coherence windows keep overlapping for arbitrarily long runs; each
product is rotated back by the alignment applied between its two
snapshots, so the smoothed average always measures the total offset and
the alignment loop cannot feed back into itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvalidFrameError
from .resampler import MAX_ABS_SRO_PPM
from .stft import make_window

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class DwacdConfig:
    """Estimator geometry and smoothing.

    The coherence is a Welch estimate over one segment using sub-frames
    of 2*welch_hop samples at 50% overlap; snapshots one segment apart
    are compared, so the drift denominator is temporal_distance *
    welch_hop = segment_len samples.
    """

    segment_len: int = 8192
    welch_hop: int = 512
    welch_window: str = "hann"
    smoothing: float = 0.95
    fs: float = 16000.0
    vad_threshold_dbfs: float = -45.0
    confidence_hold: float = 0.3
    warmup_s: float = 2.0

    def __post_init__(self):
        if self.segment_len % self.welch_hop != 0:
            raise ConfigError("welch_hop must divide segment_len")
        if not 0.0 < self.smoothing < 1.0:
            raise ConfigError("smoothing must be in (0, 1)")

    @property
    def temporal_distance(self) -> int:
        return self.segment_len // self.welch_hop

    @property
    def welch_len(self) -> int:
        return 2 * self.welch_hop

    @property
    def num_bins(self) -> int:
        return self.welch_len // 2 + 1

    @property
    def update_hop(self) -> int:
        return self.segment_len // 2


def energy_vad(block: np.ndarray, threshold_dbfs: float) -> bool:
    """True iff the block RMS exceeds the threshold (dB re full scale)."""
    x = np.asarray(block, dtype=float)
    if x.size == 0:
        return False
    rms = math.sqrt(float(np.mean(x * x)))
    if rms <= 0.0:
        return False
    return 20.0 * math.log10(rms) > threshold_dbfs


def coherence(input_seg: np.ndarray, ref_seg: np.ndarray, cfg: DwacdConfig,
              ref_delay_frac: float = 0.0) -> np.ndarray:
    """Complex coherence of two segments via Welch-averaged PSDs.

    Convention: an input that lags the reference by d samples gives
    arg(coherence(k)) = -2*pi*k*d/welch_len.  `ref_delay_frac` rotates
    the reference sub-frame spectra by a sub-sample delay before the
    PSDs are formed.  Bins whose PSD product falls below 1e-12 of the
    mean product are zeroed.
    """
    inp = np.asarray(input_seg, dtype=float)
    ref = np.asarray(ref_seg, dtype=float)
    if len(inp) != cfg.segment_len or len(ref) != cfg.segment_len:
        raise ConfigError("segments must have length segment_len")
    wlen, hop = cfg.welch_len, cfg.welch_hop
    win = make_window(cfg.welch_window, wlen)
    k = np.arange(cfg.num_bins)
    rot = np.exp(-2j * np.pi * k * ref_delay_frac / wlen)
    n_sub = (cfg.segment_len - wlen) // hop + 1
    phi_ii = np.zeros(cfg.num_bins)
    phi_rr = np.zeros(cfg.num_bins)
    phi_ir = np.zeros(cfg.num_bins, dtype=complex)
    for i in range(n_sub):
        a = np.fft.rfft(inp[i * hop: i * hop + wlen] * win)
        b = np.fft.rfft(ref[i * hop: i * hop + wlen] * win) * rot
        phi_ii += np.abs(a) ** 2
        phi_rr += np.abs(b) ** 2
        phi_ir += a * np.conj(b)
    prod = phi_ii * phi_rr
    floor = 1e-12 * prod.mean()
    gamma = np.zeros(cfg.num_bins, dtype=complex)
    ok = prod > floor if floor > 0.0 else prod > 0.0
    gamma[ok] = phi_ir[ok] / np.sqrt(prod[ok])
    return gamma


def _gcc_interp(phase_spec: np.ndarray, beta: float) -> float:
    """Evaluate the inverse-DFT of a half spectrum at a continuous lag.

    Conjugate-symmetric completion of the rfft layout; the 1/N factor is
    dropped (only peak locations matter).
    """
    n_bins = len(phase_spec)
    n = 2 * (n_bins - 1)
    k = np.arange(1, n_bins - 1)
    val = phase_spec[0].real
    val += 2.0 * np.sum(np.real(phase_spec[1:-1] * np.exp(2j * np.pi * k * beta / n)))
    val += np.real(phase_spec[-1] * np.exp(1j * np.pi * beta))
    return float(val)


def golden_section_peak(phase_spec: np.ndarray, beta_max: int,
                        tol: float = 1e-3) -> float:
    """Refine an integer peak lag to a fractional one.

    Maximises |IDFT(phase_spec)(beta)| over [beta_max-0.5, beta_max+0.5]
    by golden-section search, stopping when the bracket is narrower than
    `tol` samples.
    """
    lo = beta_max - 0.5
    hi = beta_max + 0.5
    c = hi - GOLDEN * (hi - lo)
    d = lo + GOLDEN * (hi - lo)
    fc = abs(_gcc_interp(phase_spec, c))
    fd = abs(_gcc_interp(phase_spec, d))
    while hi - lo > tol:
        if fc > fd:
            hi, d, fd = d, c, fc
            c = hi - GOLDEN * (hi - lo)
            fc = abs(_gcc_interp(phase_spec, c))
        else:
            lo, c, fc = c, d, fd
            d = lo + GOLDEN * (hi - lo)
            fd = abs(_gcc_interp(phase_spec, d))
    return 0.5 * (lo + hi)


class _SampleRing:
    """Fixed-capacity ring over a sample stream with absolute addressing."""

    def __init__(self, capacity: int):
        self._buf = np.zeros(capacity)
        self._cap = capacity
        self.head = 0  # absolute index of the next sample to be written

    def append(self, block: np.ndarray):
        n = len(block)
        if n > self._cap:
            raise ConfigError("block larger than ring capacity")
        idx = (self.head + np.arange(n)) % self._cap
        self._buf[idx] = block
        self.head += n

    def read(self, start: int, length: int) -> np.ndarray:
        """Samples [start, start+length); zeros before the stream began."""
        if start + length > self.head:
            raise ConfigError("read beyond ring head")
        if self.head - start > self._cap:
            raise ConfigError("read reaches behind ring capacity")
        out = np.zeros(length)
        lo = max(start, 0)
        if lo < start + length:
            idx = (lo + np.arange(start + length - lo)) % self._cap
            out[lo - start:] = self._buf[idx]
        return out


class DwacdEstimator:
    """Streaming offset estimator; one instance per (input, reference) pair.

    Feed equal-length blocks through :meth:`update`; an updated estimate
    in ppm is returned whenever half a segment of new samples has been
    gated through with activity on both signals, otherwise None.  Block
    length should divide segment_len/2 (the pipeline hop does).
    """

    def __init__(self, cfg: DwacdConfig | None = None):
        self.cfg = cfg or DwacdConfig()
        cap = 8 * self.cfg.segment_len
        self._input_ring = _SampleRing(cap)
        self._ref_ring = _SampleRing(cap)
        self.p_avg = np.zeros(self.cfg.num_bins, dtype=complex)
        self._snapshots: list[tuple[int, float, np.ndarray]] = []  # (pos, alignment, coherence)
        self.epsilon_hat_ppm = 0.0
        self.updates_count = 0
        self._alignment = 0.0          # total reference delay applied, samples
        self._last_trigger = 0
        self._window_active = True
        self._have_estimate = False
        self._mass_avg = 0.0

    @property
    def alignment_samples(self) -> float:
        return self._alignment

    @property
    def residual_alignment(self) -> float:
        return self._alignment - round(self._alignment)

    def update(self, input_block: np.ndarray, ref_block: np.ndarray,
               vad_input: bool, vad_ref: bool) -> float | None:
        inp = np.asarray(input_block, dtype=float)
        ref = np.asarray(ref_block, dtype=float)
        if len(inp) != len(ref):
            raise ConfigError("input and reference blocks must have equal length")
        if not (np.all(np.isfinite(inp)) and np.all(np.isfinite(ref))):
            raise InvalidFrameError("non-finite sample in estimator input")
        self._input_ring.append(inp)
        self._ref_ring.append(ref)
        self._window_active = self._window_active and vad_input and vad_ref

        pos = self._input_ring.head
        if pos - self._last_trigger < self.cfg.update_hop:
            return None
        span = pos - self._last_trigger
        self._last_trigger = pos
        # alignment tracks elapsed time regardless of gating
        self._alignment += self.epsilon_hat_ppm * 1e-6 * span
        active = self._window_active
        self._window_active = True
        if not active or pos < self.cfg.segment_len:
            return None
        return self._estimate(pos)

    def _estimate(self, pos: int) -> float | None:
        seg = self.cfg.segment_len
        d_int = int(round(self._alignment))
        d_frac = self._alignment - d_int
        # a positive alignment delays the reference read; a negative one
        # delays the input read instead (the ring holds no future samples)
        if d_int >= 0:
            inp_seg = self._input_ring.read(pos - seg, seg)
            ref_seg = self._ref_ring.read(pos - seg - d_int, seg)
        else:
            inp_seg = self._input_ring.read(pos - seg + d_int, seg)
            ref_seg = self._ref_ring.read(pos - seg, seg)
        gamma = coherence(inp_seg, ref_seg, self.cfg, ref_delay_frac=d_frac)

        partner = None
        for p0, a0, g0 in self._snapshots:
            if pos - p0 == seg:
                partner = (a0, g0)
        self._snapshots.append((pos, self._alignment, gamma))
        self._snapshots = self._snapshots[-2:]
        if partner is None:
            return None
        if pos < self.cfg.warmup_s * self.cfg.fs:
            # the error signals feeding the estimator are dominated by
            # the cancellers' initial transients; averaging those
            # products would take many time constants to flush out
            return None
        a0, g0 = partner
        product = gamma * np.conj(g0)
        # rotate by the alignment applied between the snapshots, so the
        # product measures the total offset, not the residual one
        k = np.arange(self.cfg.num_bins)
        product *= np.exp(-2j * np.pi * k * (self._alignment - a0) / self.cfg.welch_len)
        alpha = self.cfg.smoothing
        self.p_avg = alpha * self.p_avg + (1.0 - alpha) * product

        n = self.cfg.welch_len
        gcc = np.fft.irfft(self.p_avg, n=n)
        max_lag = int(math.ceil(MAX_ABS_SRO_PPM * 1e-6 * seg)) + 2
        lags = np.concatenate([np.arange(0, max_lag + 1), np.arange(n - max_lag, n)])
        signed = np.where(lags <= n // 2, lags, lags - n)
        mags = np.abs(gcc[lags])
        beta_int = int(signed[int(np.argmax(mags))])
        mass = float(np.max(mags)) * n

        # confidence hold: when the peak mass collapses (the canceller
        # re-converging after an echo-path change floods the input with
        # reference-incoherent residual), keep the previous estimate
        # instead of chasing a weak peak
        if self._have_estimate and mass < self.cfg.confidence_hold * self._mass_avg:
            self._mass_avg *= 0.97
            self.updates_count += 1
            return self.epsilon_hat_ppm
        self._mass_avg = 0.95 * self._mass_avg + 0.05 * mass if self._have_estimate else mass

        beta = golden_section_peak(self.p_avg, beta_int)
        # positive offset -> input lags ref by beta = eps*segment_len
        eps_ppm = beta / seg * 1e6
        self.epsilon_hat_ppm = float(np.clip(eps_ppm, -MAX_ABS_SRO_PPM, MAX_ABS_SRO_PPM))
        self.updates_count += 1
        self._have_estimate = True
        return self.epsilon_hat_ppm
