"""Frame-level wiring of the compared canceller systems.

Five configurations share one loop: the two proposed variants (offset
estimated online from an error signal, references compensated), a
no-offset upper bound, an uncompensated lower bound, and an oracle that
compensates with the true offset.  Per frame the order is fixed:
compensate the channel-2 reference, run the two-channel filter, then
(for variant 2 after its own single-channel filter) update the
estimator; a fresh estimate takes effect on the next frame.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MdaecError
from .kalman import KalmanConfig, PartitionedKalmanAec
from .metrics import MetricSeries
from .resampler import DriftState, compensate_reference
from .scenes import RenderedScene
from .sro import DwacdConfig, DwacdEstimator, energy_vad
from .stft import ReferenceFramer, SpectralFrame, StftConfig, frame_to_block, observation_frame


class SystemKind(enum.Enum):
    VARIANT1 = "variant1"
    VARIANT2 = "variant2"
    NO_SRO = "no_sro"
    NO_COMPENSATION = "no_compensation"
    ORACLE_SRO = "oracle_sro"


@dataclass
class PipelineOutput:
    error_signal: np.ndarray
    sro_trajectory: MetricSeries
    e0_signal: np.ndarray | None = None   # variant-2 probe error


def _component_threshold_dbfs(component: np.ndarray, fs: float, hop: int,
                              margin_db: float = 20.0) -> float:
    """Ideal-VAD threshold for a clean component: margin below its own
    active level (90th percentile of block RMS)."""
    n = (len(component) // hop) * hop
    if n == 0:
        return -margin_db - 100.0
    blocks = component[:n].reshape(-1, hop)
    rms = np.sqrt(np.mean(blocks ** 2, axis=1))
    rms = rms[rms > 0]
    if len(rms) == 0:
        return -margin_db - 100.0
    return 20.0 * math.log10(float(np.percentile(rms, 90))) - margin_db


def run_system(kind: SystemKind, scene: RenderedScene,
               aec_cfg: KalmanConfig | None = None,
               dwacd_cfg: DwacdConfig | None = None) -> PipelineOutput:
    """Run one system over a rendered scene and collect its outputs."""
    aec_cfg = aec_cfg or KalmanConfig()
    dwacd_cfg = dwacd_cfg or DwacdConfig(fs=scene.fs)
    fs = scene.fs
    m = aec_cfg.hop
    stft_cfg = StftConfig(window_size=aec_cfg.fft_size, hop_size=m)

    mic = scene.mic
    x1, x2 = scene.far_end
    n_frames = len(mic) // m

    aec = PartitionedKalmanAec(aec_cfg)
    framer1 = ReferenceFramer(x1, m)
    framer2 = ReferenceFramer(x2, m)

    compensating = kind in (SystemKind.VARIANT1, SystemKind.VARIANT2, SystemKind.ORACLE_SRO)
    estimating = kind in (SystemKind.VARIANT1, SystemKind.VARIANT2)
    drift = DriftState()
    if kind is SystemKind.ORACLE_SRO:
        sro_hat = scene.config.sro_ppm
    else:
        sro_hat = 0.0

    estimator = DwacdEstimator(dwacd_cfg) if estimating else None
    aec0 = None
    if kind is SystemKind.VARIANT2:
        # probe filter: near-unity transition (the 0.999 leak of the main
        # filter re-injects a static residual that biases the offset
        # estimate under correlated playback) and a hot start
        cfg0 = KalmanConfig(num_channels=1, partitions=aec_cfg.partitions,
                            fft_size=aec_cfg.fft_size, hop=aec_cfg.hop,
                            transition=0.9999, p_init=1.0,
                            process_noise_scale=aec_cfg.process_noise_scale,
                            obs_noise_smoothing=aec_cfg.obs_noise_smoothing)
        aec0 = PartitionedKalmanAec(cfg0)

    vad_thr_ref = dwacd_cfg.vad_threshold_dbfs
    vad_thr_inp = _component_threshold_dbfs(scene.echo_components[1], fs, m)

    err_out = np.zeros(n_frames * m)
    e0_out = np.zeros(n_frames * m) if aec0 is not None else None
    traj_t = np.zeros(n_frames)
    traj_v = np.zeros(n_frames)

    for frame in range(n_frames):
        blk = slice(frame * m, (frame + 1) * m)
        try:
            x1_frame = framer1.next_frame(channel_id=0)
            x2_frame = framer2.next_frame(channel_id=1)
            if compensating:
                x2_frame, drift, shift = compensate_reference(
                    x2_frame, sro_hat, drift, stft_cfg)
                if shift:
                    framer2.apply_shift(shift)
            mic_frame = observation_frame(mic[blk], frame)
            _, err_frame = aec.process_frame(mic_frame, [x1_frame, x2_frame])
            e_blk = frame_to_block(err_frame)
            err_out[blk] = e_blk

            if estimating:
                if aec0 is not None:
                    _, e0_frame = aec0.process_frame(mic_frame, [x1_frame])
                    probe = frame_to_block(e0_frame)
                    e0_out[blk] = probe
                else:
                    probe = e_blk
                vad_inp = energy_vad(scene.echo_components[1][blk], vad_thr_inp)
                vad_ref = energy_vad(x2[blk], vad_thr_ref)
                new_est = estimator.update(probe, x2[blk], vad_inp, vad_ref)
                if new_est is not None:
                    sro_hat = new_est
        except MdaecError as exc:
            raise type(exc)(f"frame {frame}: {exc}") from exc

        traj_t[frame] = (frame + 1) * m / fs
        traj_v[frame] = sro_hat

    traj = MetricSeries(traj_t, traj_v, m / fs)
    return PipelineOutput(error_signal=err_out, sro_trajectory=traj, e0_signal=e0_out)
