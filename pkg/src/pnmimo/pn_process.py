"""Oscillator phase-noise trajectory generation.

Each oscillator contributes one *atomic* phase process; the channel taps only
expose *sum* processes (one transmit plus one receive atomic process).  Two
generators are provided: a Wiener random walk and a frequency-mask-shaped
process synthesized by spectral coloring.  All trajectories use the
differential convention: sample 0 is the channel-estimation epoch and is
forced to zero, so every row describes the phase drift since that epoch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PnConfig",
    "wrap_phase",
    "gen_wiener",
    "gen_mask",
    "atomic_to_sum",
    "expected_mask_increment_std",
]


@dataclass
class PnConfig:
    """Phase-noise model configuration.

    Parameters
    ----------
    model : str
        Either ``"wiener"`` or ``"mask"``.
    rho : float
        Standard deviation (radians) of the per-slot Wiener increments.
    mask_segments : list of (f_start_hz, f_end_hz, slope_dbc_per_decade)
        Contiguous one-sided PSD mask segments, only used by the mask model.
    mask_ref_level_dbc : float
        Mask level in dBc/Hz at ``mask_ref_freq_hz``.
    mask_ref_freq_hz : float
        Anchor frequency for the reference level.
    sample_rate_hz : float
        Slot rate; the synthesis band is [first f_start, sample_rate/2].
    mask_scale_to_increment_std : float or None
        If set, rescale the mask realization so the *expected* rms
        slot-to-slot increment equals this value.  The mask then only fixes
        the spectral shape, not the absolute level.
    """

    model: str = "wiener"
    rho: float = 0.0
    mask_segments: list = field(default_factory=list)
    mask_ref_level_dbc: float = 0.0
    mask_ref_freq_hz: float = 0.0
    sample_rate_hz: float = 1.0
    mask_scale_to_increment_std: float | None = None

    def __post_init__(self):
        if self.model not in ("wiener", "mask"):
            raise ValueError(f"pn.model must be 'wiener' or 'mask', got {self.model!r}")
        if self.rho < 0:
            raise ValueError(f"pn.rho must be >= 0, got {self.rho}")
        if self.sample_rate_hz <= 0:
            raise ValueError("pn.sample_rate_hz must be positive")
        if self.model == "mask":
            if not self.mask_segments:
                raise ValueError("pn.mask_segments must be nonempty for the mask model")
            segs = [tuple(map(float, s)) for s in self.mask_segments]
            for f0, f1, _ in segs:
                if not f0 < f1:
                    raise ValueError("pn.mask_segments: each segment needs f_start < f_end")
            for (_, f1, _), (g0, _, _) in zip(segs, segs[1:]):
                if f1 != g0:
                    raise ValueError("pn.mask_segments must be contiguous (f_end == next f_start)")
            if not segs[0][0] <= self.mask_ref_freq_hz <= segs[-1][1]:
                raise ValueError("pn.mask_ref_freq_hz must lie within the mask band")
            self.mask_segments = segs


def wrap_phase(x):
    """Wrap angles to the interval (-pi, pi].

    Accepts scalars or arrays; result is congruent to ``x`` modulo 2*pi.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("wrap_phase requires finite input")
    w = x - 2.0 * np.pi * np.ceil((x - np.pi) / (2.0 * np.pi))
    return w if w.ndim else float(w)


def _check_counts(n_osc, n_slots):
    if n_osc < 1:
        raise ValueError(f"n_osc must be >= 1, got {n_osc}")
    if n_slots < 1:
        raise ValueError(f"n_slots must be >= 1, got {n_slots}")


def gen_wiener(cfg: PnConfig, n_osc: int, n_slots: int, rng: np.random.Generator) -> np.ndarray:
    """Generate Wiener (random-walk) atomic phase trajectories.

    Returns an ``(n_osc, n_slots)`` array of radians.  Row ``i`` is the
    cumulative sum of i.i.d. zero-mean Gaussian increments with standard
    deviation ``cfg.rho``, starting at 0 (differential convention); rows are
    mutually independent.
    """
    if cfg.model != "wiener":
        raise ValueError("gen_wiener requires cfg.model == 'wiener'")
    _check_counts(n_osc, n_slots)
    phases = np.zeros((n_osc, n_slots))
    if n_slots > 1 and cfg.rho > 0:
        incr = rng.normal(0.0, cfg.rho, size=(n_osc, n_slots - 1))
        np.cumsum(incr, axis=1, out=phases[:, 1:])
    return phases


def _mask_level_dbc(cfg: PnConfig, freqs: np.ndarray) -> np.ndarray:
    """Evaluate the piecewise log-linear mask (dBc/Hz) at the given frequencies.

    Below the first corner the mask is extended flat; the same holds above
    the last corner (only reachable when the mask stops short of Nyquist).
    """
    segs = cfg.mask_segments
    starts = np.array([s[0] for s in segs])
    slopes = np.array([s[2] for s in segs])

    # Level at each segment start, chained from the reference anchor.
    ref_seg = len(segs) - 1
    for k, (f0, f1, _) in enumerate(segs):
        if f0 <= cfg.mask_ref_freq_hz < f1:
            ref_seg = k
            break
    start_levels = np.empty(len(segs))
    start_levels[ref_seg] = cfg.mask_ref_level_dbc - slopes[ref_seg] * np.log10(
        cfg.mask_ref_freq_hz / starts[ref_seg]
    )
    for k in range(ref_seg + 1, len(segs)):
        f0, f1, slope = segs[k - 1]
        start_levels[k] = start_levels[k - 1] + slope * np.log10(f1 / f0)
    for k in range(ref_seg - 1, -1, -1):
        f0, f1, slope = segs[k]
        start_levels[k] = start_levels[k + 1] - slope * np.log10(f1 / f0)

    f = np.asarray(freqs, dtype=float)
    fc = np.clip(f, starts[0], segs[-1][1])
    idx = np.clip(np.searchsorted(starts, fc, side="right") - 1, 0, len(segs) - 1)
    return start_levels[idx] + slopes[idx] * np.log10(fc / starts[idx])


def _mask_bin_psd(cfg: PnConfig, n_slots: int):
    """One-sided target PSD (rad^2/Hz) on the rFFT bin grid for n_slots."""
    freqs = np.fft.rfftfreq(n_slots, d=1.0 / cfg.sample_rate_hz)
    psd = 10.0 ** (_mask_level_dbc(cfg, freqs) / 10.0)
    return freqs, psd


def expected_mask_increment_std(cfg: PnConfig, n_slots: int) -> float:
    """Ensemble rms of slot-to-slot increments of the synthesized mask process.

    Differencing multiplies the phase PSD by ``4 sin^2(pi f / fs)``; the
    expected increment variance is that spectrum summed over the synthesis
    bins.
    """
    freqs, psd = _mask_bin_psd(cfg, n_slots)
    gain = 4.0 * np.sin(np.pi * freqs / cfg.sample_rate_hz) ** 2
    var = float(np.sum(gain * psd) * cfg.sample_rate_hz / n_slots)
    return np.sqrt(var)


def gen_mask(cfg: PnConfig, n_osc: int, n_slots: int, rng: np.random.Generator) -> np.ndarray:
    """Generate mask-shaped atomic phase trajectories by spectral coloring.

    Unit-variance complex Gaussian spectral bins are scaled by the square
    root of the target one-sided PSD and inverse-transformed, so the
    realization's periodogram follows the mask within estimation noise.
    The differential convention (subtract sample 0) is applied afterwards.

    Returns an ``(n_osc, n_slots)`` array of radians.
    """
    if cfg.model != "mask":
        raise ValueError("gen_mask requires cfg.model == 'mask'")
    _check_counts(n_osc, n_slots)
    fs = cfg.sample_rate_hz
    _, psd = _mask_bin_psd(cfg, n_slots)
    n_bins = psd.size

    # E|A_k|^2 = S_k * fs * n / 2 makes the one-sided periodogram
    # 2|A_k|^2/(fs*n) match S_k in expectation.
    amp = np.sqrt(psd * fs * n_slots / 2.0)
    g = rng.normal(size=(n_osc, n_bins)) + 1j * rng.normal(size=(n_osc, n_bins))
    spec = amp * g / np.sqrt(2.0)
    spec[:, 0] = 0.0  # DC offset is removed by the differential convention anyway
    if n_slots % 2 == 0:
        spec[:, -1] = amp[-1] * rng.normal(size=n_osc)
    phases = np.fft.irfft(spec, n=n_slots, axis=1)

    if cfg.mask_scale_to_increment_std is not None:
        target = cfg.mask_scale_to_increment_std
        nominal = expected_mask_increment_std(cfg, n_slots)
        phases *= target / nominal if nominal > 0 else 0.0
    return phases - phases[:, :1]


def atomic_to_sum(traj: np.ndarray, o_t: int, o_r: int) -> np.ndarray:
    """Expand atomic trajectories into the o_t*o_r sum processes.

    Row ``i*o_r + j`` of the output is ``traj[i] + traj[o_t + j]``: the pair
    process of transmit oscillator ``i`` and receive oscillator ``j``.
    """
    traj = np.asarray(traj)
    if traj.shape[0] != o_t + o_r:
        raise ValueError(
            f"atomic trajectory has {traj.shape[0]} rows, expected o_t + o_r = {o_t + o_r}"
        )
    return (traj[:o_t, None, :] + traj[None, o_t:, :]).reshape(o_t * o_r, -1)
