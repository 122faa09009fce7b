"""Rician block-fading MIMO channel with per-oscillator phase rotations.

The array is partitioned into oscillator groups: transmit oscillator ``i``
feeds antennas ``i*n_ot .. (i+1)*n_ot - 1`` and receive oscillator ``j``
feeds antennas ``j*n_or .. (j+1)*n_or - 1`` (0-based).  A slot's input-output
relation is ``y = Phi_R H Phi_T x + z`` where the Phi matrices are diagonal
per-group phase rotations and ``z`` is circular Gaussian with ``sigma2``
variance per real dimension.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "SystemConfig",
    "EstimatedChannel",
    "snr_db_to_sigma2",
    "gen_rician",
    "phase_matrices",
    "apply_channel",
    "estimate_channel",
    "block_pair",
    "block_tx",
    "block_rx",
    "average_tx_energy",
]


@dataclass
class SystemConfig:
    """Array geometry, energies and frame shape.

    ``l`` is the number of data slots per frame and ``r`` the number of data
    slots between phase-pilot blocks.  ``e_c`` is the channel-pilot energy;
    ``math.inf`` encodes perfect CSI.
    """

    n_t: int = 32
    n_r: int = 64
    o_t: int = 16
    o_r: int = 4
    e_s: float = 1.0
    e_c: float = math.inf
    sigma2: float = 0.1
    k_rice_db: float = 100.0
    l: int = 1086
    r: int = 60

    def __post_init__(self):
        for name in ("n_t", "n_r", "o_t", "o_r", "l", "r"):
            if getattr(self, name) < 1:
                raise ValueError(f"system.{name} must be >= 1")
        if self.n_t % self.o_t:
            raise ValueError("system.o_t must divide system.n_t")
        if self.n_r % self.o_r:
            raise ValueError("system.o_r must divide system.n_r")
        if self.e_s <= 0:
            raise ValueError("system.e_s must be positive")
        if self.e_c <= 0:
            raise ValueError("system.e_c must be positive (inf = perfect CSI)")
        if self.sigma2 <= 0:
            raise ValueError("system.sigma2 must be positive")

    @property
    def n_ot(self) -> int:
        return self.n_t // self.o_t

    @property
    def n_or(self) -> int:
        return self.n_r // self.o_r

    @property
    def perfect_csi(self) -> bool:
        return math.isinf(self.e_c)

    def with_sigma2(self, sigma2: float) -> "SystemConfig":
        return replace(self, sigma2=sigma2)


@dataclass
class EstimatedChannel:
    """Receiver-side channel estimate plus the pilot energy that produced it."""

    h_hat: np.ndarray
    e_c: float = math.inf

    @property
    def perfect(self) -> bool:
        return math.isinf(self.e_c)

    @property
    def inv_e_c(self) -> float:
        return 0.0 if self.perfect else 1.0 / self.e_c


def snr_db_to_sigma2(snr_db: float, e_s: float = 1.0) -> float:
    """Noise variance per real dimension for a given Es/N0 (N0 = 2*sigma2)."""
    return e_s * 10.0 ** (-snr_db / 10.0) / 2.0


def gen_rician(cfg: SystemConfig, rng: np.random.Generator) -> np.ndarray:
    """Draw an n_r x n_t Rician channel matrix.

    Entries are ``sqrt(K/(K+1)) * exp(j*theta) + sqrt(1/(K+1)) * g`` with
    theta uniform and g circular complex Gaussian of unit variance, i.i.d.
    """
    k_lin = 10.0 ** (cfg.k_rice_db / 10.0)
    shape = (cfg.n_r, cfg.n_t)
    los = np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, size=shape))
    scatter = (rng.normal(size=shape) + 1j * rng.normal(size=shape)) / np.sqrt(2.0)
    return np.sqrt(k_lin / (k_lin + 1.0)) * los + np.sqrt(1.0 / (k_lin + 1.0)) * scatter


def phase_matrices(phi_slot: np.ndarray, cfg: SystemConfig):
    """Per-antenna phase factors (diag of Phi_T, diag of Phi_R) for one slot."""
    phi_slot = np.asarray(phi_slot)
    if phi_slot.shape[0] != cfg.o_t + cfg.o_r:
        raise ValueError("phi_slot must hold o_t + o_r atomic phases")
    d_t = np.repeat(np.exp(1j * phi_slot[: cfg.o_t]), cfg.n_ot)
    d_r = np.repeat(np.exp(1j * phi_slot[cfg.o_t :]), cfg.n_or)
    return d_t, d_r


def apply_channel(
    h: np.ndarray,
    phi_slot: np.ndarray,
    x: np.ndarray,
    sigma2: float,
    cfg: SystemConfig,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """One slot through the PN-impaired channel: ``Phi_R H Phi_T x + z``.

    ``sigma2`` is the noise variance per real dimension; pass 0 (or no rng)
    for a noiseless slot.
    """
    h = np.asarray(h)
    x = np.asarray(x)
    if h.shape != (cfg.n_r, cfg.n_t) or x.shape[0] != cfg.n_t:
        raise ValueError("apply_channel: inconsistent dimensions")
    d_t, d_r = phase_matrices(phi_slot, cfg)
    y = d_r * (h @ (d_t * x))
    if sigma2 > 0 and rng is not None:
        y = y + np.sqrt(sigma2) * (rng.normal(size=cfg.n_r) + 1j * rng.normal(size=cfg.n_r))
    return y


def estimate_channel(
    h: np.ndarray,
    phi0: np.ndarray,
    cfg: SystemConfig,
    rng: np.random.Generator | None = None,
) -> EstimatedChannel:
    """Channel estimate with the slot-0 phases embedded.

    Returns ``Phi_R[0] H Phi_T[0] + Z_C`` where Z_C is i.i.d. circular
    Gaussian with variance ``sigma2 / e_c`` per real dimension; perfect CSI
    (``e_c = inf``) returns the rotated channel exactly.  Downstream phase
    estimation is differential, so the embedded slot-0 phases become the
    phase reference.
    """
    d_t, d_r = phase_matrices(phi0, cfg)
    h_rot = d_r[:, None] * np.asarray(h) * d_t[None, :]
    if cfg.perfect_csi:
        return EstimatedChannel(h_rot, math.inf)
    if rng is None:
        raise ValueError("estimate_channel with finite e_c needs an rng")
    std = np.sqrt(cfg.sigma2 / cfg.e_c)
    z = std * (rng.normal(size=h_rot.shape) + 1j * rng.normal(size=h_rot.shape))
    return EstimatedChannel(h_rot + z, cfg.e_c)


def _check_range(i, n, what):
    if not 0 <= i < n:
        raise IndexError(f"{what} index {i} out of range [0, {n})")


def block_pair(hh: EstimatedChannel | np.ndarray, i: int, j: int, cfg: SystemConfig) -> np.ndarray:
    """View of the (receive oscillator i, transmit oscillator j) block, n_or x n_ot."""
    h = hh.h_hat if isinstance(hh, EstimatedChannel) else hh
    _check_range(i, cfg.o_r, "receive oscillator")
    _check_range(j, cfg.o_t, "transmit oscillator")
    return h[i * cfg.n_or : (i + 1) * cfg.n_or, j * cfg.n_ot : (j + 1) * cfg.n_ot]


def block_tx(hh: EstimatedChannel | np.ndarray, i: int, cfg: SystemConfig) -> np.ndarray:
    """View of the columns fed by transmit oscillator i, n_r x n_ot."""
    h = hh.h_hat if isinstance(hh, EstimatedChannel) else hh
    _check_range(i, cfg.o_t, "transmit oscillator")
    return h[:, i * cfg.n_ot : (i + 1) * cfg.n_ot]


def block_rx(hh: EstimatedChannel | np.ndarray, i: int, cfg: SystemConfig) -> np.ndarray:
    """View of the rows fed by receive oscillator i, n_or x n_t."""
    h = hh.h_hat if isinstance(hh, EstimatedChannel) else hh
    _check_range(i, cfg.o_r, "receive oscillator")
    return h[i * cfg.n_or : (i + 1) * cfg.n_or, :]


def average_tx_energy(cfg: SystemConfig) -> float:
    """Average transmitted symbol energy over a frame plus its channel pilots."""
    return (cfg.l * cfg.e_s + cfg.n_t * cfg.e_c) / (cfg.l + cfg.n_t)
