"""Iterative receiver: phase detection, LMMSE demodulation, decoding, feedback.

Iteration 1 is a plain demodulate/demap/decode pass using the pilot-based
phase initialization (there is no symbol feedback yet); from iteration 2 on,
each pass first re-detects the phases with the previous iteration's hard
symbol estimates and then demodulates and decodes again.  Early stopping is
either genie-aided (all info bits correct; the truth feeds *only* this
predicate) or syndrome-based (all codewords converged).

The LMMSE filter is formed once per frame from the channel estimate; the
per-slot phase estimates enter as unitary rotations of the filter input and
output, which is exactly equivalent to re-deriving the filter from the
rotated channel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import EstimatedChannel, SystemConfig
from .framing import FrameCodec, FrameTruth
from .opcount import OperationCounts, count_ops  # re-exported  # noqa: F401
from .phase_estimator import (
    SdConfig,
    detect_phases,
    interpolate_init,
    pilot_coarse_estimate,
    sum_to_atomic_ls,
)
from .pn_process import atomic_to_sum, wrap_phase

__all__ = [
    "ReceiverConfig",
    "FrameResult",
    "OperationCounts",
    "count_ops",
    "lmmse_filter",
    "demodulate_slot",
    "demodulate_slots",
    "sum_phase_mse",
    "receive_frame",
]

PHASE_MODES = ("em", "pilot", "off")
STOP_RULES = ("genie", "syndrome", "none")


@dataclass
class ReceiverConfig:
    """Iteration budget, stopping rule and phase-detection mode."""

    max_rx_iters: int = 10
    stopping: str = "genie"
    sd: SdConfig = field(default_factory=SdConfig)
    phase_mode: str = "em"  # "em", "pilot" (init only) or "off" (no compensation)
    demod_var_floor: float = 1e-12

    def __post_init__(self):
        if self.max_rx_iters < 1:
            raise ValueError("receiver.max_rx_iters must be >= 1")
        if self.stopping not in STOP_RULES:
            raise ValueError(f"receiver.stopping must be one of {STOP_RULES}")
        if self.phase_mode not in PHASE_MODES:
            raise ValueError(f"receiver.phase_mode must be one of {PHASE_MODES}")


@dataclass
class FrameResult:
    """Decoded output and per-frame diagnostics."""

    info_bits: np.ndarray
    converged: np.ndarray
    phi: np.ndarray  # final window estimate, (o_t+o_r, n_slots-1)
    rx_iters: int
    sd_steps: int
    ops: OperationCounts
    ber_per_iter: list = field(default_factory=list)
    mse_per_iter: list = field(default_factory=list)
    sd_steps_per_iter: list = field(default_factory=list)


def lmmse_filter(hh: EstimatedChannel, cfg: SystemConfig) -> np.ndarray:
    """Spatial LMMSE filter ``(Hh^H Hh + sigma2 (n_t/e_c + 1/e_s) I)^-1 Hh^H``.

    The ``n_t/e_c`` term inflates the regularizer for channel-estimation
    error; perfect CSI drops it.  With ``sigma2 = 0`` (test use only) the
    pseudo-inverse limit is returned.
    """
    h = hh.h_hat
    alpha = cfg.sigma2 * (cfg.n_t * hh.inv_e_c + 1.0 / cfg.e_s)
    gram = h.conj().T @ h + alpha * np.eye(cfg.n_t)
    if cfg.sigma2 > 0:
        cond = np.linalg.cond(gram)
        if not np.isfinite(cond):
            raise np.linalg.LinAlgError("LMMSE system is singular despite sigma2 > 0")
    return np.linalg.solve(gram, h.conj().T)


def _bias_diag(f: np.ndarray, hh: EstimatedChannel) -> np.ndarray:
    g = np.einsum("ij,ji->i", f, hh.h_hat).real
    return np.clip(g, 1e-12, None)


def _effective_noise_var(f: np.ndarray, hh: EstimatedChannel, cfg: SystemConfig) -> np.ndarray:
    """Exact per-stream error variance of the unbiased filter output.

    For ``x_hat = (F y) / diag(F Hh)`` under ``y = Hh x + n`` with complex
    noise variance ``2 sigma2 (1 + n_t e_s / e_c)`` this is the residual
    interference plus filtered noise; it reduces to the textbook
    ``e_s (1 - g) / g`` when F is the exactly matched MMSE filter.
    """
    gram = f @ hh.h_hat  # (n_t, n_t)
    g = _bias_diag(f, hh)
    interference = cfg.e_s * (np.sum(np.abs(gram) ** 2, axis=1) - np.abs(np.diag(gram)) ** 2)
    n0_eff = 2.0 * cfg.sigma2 * (1.0 + cfg.n_t * cfg.e_s * hh.inv_e_c)
    noise = n0_eff * np.sum(np.abs(f) ** 2, axis=1)
    return (interference + noise) / g**2


def demodulate_slots(
    f: np.ndarray,
    hh: EstimatedChannel,
    phi: np.ndarray,
    y: np.ndarray,
    cfg: SystemConfig,
    var_floor: float = 1e-12,
):
    """Equalize many slots at once with per-slot phase compensation.

    ``phi`` is (o_t+o_r, n) atomic phases and ``y`` the matching received
    columns.  Returns unbiased symbol estimates (n_t, n) and per-stream
    effective noise variances; the rotated filter ``Phi_T^H F Phi_R^H``
    equals the filter rebuilt from the rotated channel because the phase
    matrices are unitary and diagonal, and the variances are rotation
    invariant.
    """
    if phi.shape[1] != y.shape[1]:
        raise ValueError("phi and y must cover the same slots")
    d_t = np.repeat(np.exp(1j * phi[: cfg.o_t]), cfg.n_ot, axis=0)
    d_r = np.repeat(np.exp(1j * phi[cfg.o_t :]), cfg.n_or, axis=0)
    x_tilde = np.conj(d_t) * (f @ (np.conj(d_r) * y))
    g = _bias_diag(f, hh)
    nv = np.maximum(_effective_noise_var(f, hh, cfg), var_floor * cfg.e_s)
    return x_tilde / g[:, None], nv


def demodulate_slot(
    f: np.ndarray,
    hh: EstimatedChannel,
    phi_n: np.ndarray,
    y_n: np.ndarray,
    cfg: SystemConfig,
    var_floor: float = 1e-12,
):
    """Single-slot variant of :func:`demodulate_slots`."""
    x, nv = demodulate_slots(f, hh, phi_n.reshape(-1, 1), y_n.reshape(-1, 1), cfg, var_floor)
    return x[:, 0], nv


def sum_phase_mse(
    phi_window: np.ndarray, traj: np.ndarray, data_slots: np.ndarray, cfg: SystemConfig
) -> float:
    """Mean wrapped squared sum-phase error over data slots."""
    est = atomic_to_sum(phi_window[:, data_slots - 1], cfg.o_t, cfg.o_r)
    true = atomic_to_sum(traj[:, data_slots], cfg.o_t, cfg.o_r)
    return float(np.mean(wrap_phase(est - true) ** 2))


def _initial_phases(
    y: np.ndarray,
    hh: EstimatedChannel,
    codec: FrameCodec,
    pilot_symbols: np.ndarray,
    cfg: SystemConfig,
    mode: str,
) -> np.ndarray:
    layout = codec.layout
    if mode == "off":
        return np.zeros((cfg.o_t + cfg.o_r, layout.n_slots - 1))
    raw = pilot_coarse_estimate(codec.pilot_observations(y), hh, pilot_symbols, cfg)
    atomic = sum_to_atomic_ls(raw, cfg.o_t, cfg.o_r)
    full = interpolate_init(layout.block_times, atomic, layout.n_slots)
    return full[:, 1:]


def receive_frame(
    y: np.ndarray,
    hh: EstimatedChannel,
    codec: FrameCodec,
    pilot_symbols: np.ndarray,
    cfg: SystemConfig,
    rx: ReceiverConfig,
    rho2: float,
    truth: FrameTruth | None = None,
) -> FrameResult:
    """Run the full iterative receiver on one frame.

    ``truth`` enables the genie stopping rule and the per-iteration BER/MSE
    diagnostics; it never influences LLRs or phase detection.  With
    ``rx.stopping == "genie"`` and no truth supplied, the syndrome rule is
    used instead.
    """
    layout = codec.layout
    window = slice(1, layout.n_slots)
    y_win = y[:, window]
    data_cols = layout.data_slots - 1  # window-relative indices

    phi = _initial_phases(y, hh, codec, pilot_symbols, cfg, rx.phase_mode)
    f = lmmse_filter(hh, cfg)
    ops = OperationCounts()
    result = FrameResult(
        info_bits=np.zeros(0), converged=np.zeros(0, dtype=bool), phi=phi,
        rx_iters=0, sd_steps=0, ops=ops,
    )

    x_hat_frame = None
    for it in range(1, rx.max_rx_iters + 1):
        steps = 0
        if it >= 2 and rx.phase_mode == "em":
            det = detect_phases(
                phi, x_hat_frame[:, window], hh, y_win, cfg, rx.sd, rho2, counter=ops
            )
            phi = det.phi
            steps = det.steps
            result.sd_steps += steps

        x_eq, nv = demodulate_slots(
            f, hh, phi[:, data_cols], y[:, layout.data_slots], cfg, rx.demod_var_floor
        )
        llrs = codec.llrs_to_codewords(x_eq, nv)
        info_hat, converged = codec.decode_frame(llrs)
        x_hat_frame = codec.rebuild_symbols(info_hat, pilot_symbols)

        result.info_bits, result.converged = info_hat, converged
        result.phi, result.rx_iters = phi, it
        result.sd_steps_per_iter.append(steps)
        if truth is not None:
            result.ber_per_iter.append(float(np.mean(info_hat != truth.info_bits)))
            result.mse_per_iter.append(sum_phase_mse(phi, truth.traj, layout.data_slots, cfg))

        if rx.stopping == "genie" and truth is not None:
            if np.array_equal(info_hat, truth.info_bits):
                break
        elif rx.stopping != "none" and converged.all():
            break
    return result
