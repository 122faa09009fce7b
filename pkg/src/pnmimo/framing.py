"""Frame assembly: slot layout, pilot blocks, codeword packing and rebuild.

Timeline convention: column 0 of every time-indexed array is the
channel-estimation epoch (the phase reference; it carries no payload), and
columns ``1 .. n_slots-1`` are the frame slots.  A frame interleaves
phase-pilot blocks with runs of data slots: each block spans ``o_t``
consecutive slots and slot ``i`` of a block activates only the antennas fed
by transmit oscillator ``i``, so every oscillator pair is sounded once per
block.  Blocks are placed at the frame start and after every ``r`` data
slots until ``l`` data slots have been laid out.

Per user, the payload of a frame is ``l * n_ot`` symbols ordered
antenna-major/slot-minor; the coded stream is the concatenation of that
user's codewords followed by known zero filler bits for the leftover
capacity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import SystemConfig
from .modem_fec import BITS_PER_SYMBOL, LdpcCode, Qam64

__all__ = ["FrameLayout", "FrameCodec", "FrameTruth", "build_layout", "draw_pilot_symbols"]


@dataclass
class FrameLayout:
    """Slot bookkeeping for one frame (indices refer to the full timeline)."""

    n_slots: int
    data_slots: np.ndarray
    pilot_slots: np.ndarray
    block_slots: np.ndarray  # (n_blocks, o_t): slot where oscillator i transmits
    block_times: np.ndarray  # (n_blocks,) block centers used for interpolation

    @property
    def n_blocks(self) -> int:
        return self.block_slots.shape[0]

    @property
    def n_data(self) -> int:
        return self.data_slots.size


def build_layout(cfg: SystemConfig) -> FrameLayout:
    data, pilots, blocks = [], [], []
    t = 1
    remaining = cfg.l
    while remaining > 0:
        block = list(range(t, t + cfg.o_t))
        pilots.extend(block)
        blocks.append(block)
        t += cfg.o_t
        take = min(cfg.r, remaining)
        data.extend(range(t, t + take))
        t += take
        remaining -= take
    block_slots = np.array(blocks, dtype=int)
    return FrameLayout(
        n_slots=t,
        data_slots=np.array(data, dtype=int),
        pilot_slots=np.array(pilots, dtype=int),
        block_slots=block_slots,
        block_times=block_slots.mean(axis=1),
    )


def draw_pilot_symbols(layout: FrameLayout, cfg: SystemConfig, rng: np.random.Generator) -> np.ndarray:
    """Known QPSK phase-pilot symbols at energy e_s, shape (n_blocks, o_t, n_ot)."""
    quadrant = rng.integers(0, 4, size=(layout.n_blocks, cfg.o_t, cfg.n_ot))
    return np.sqrt(cfg.e_s) * np.exp(1j * (np.pi / 4 + quadrant * np.pi / 2))


@dataclass
class FrameTruth:
    """Ground truth kept outside the receiver's signal path."""

    info_bits: np.ndarray  # (n_users, n_cw, k)
    traj: np.ndarray  # atomic phases, (o_t+o_r, n_slots)


class FrameCodec:
    """Maps user info bits to/from the frame symbol grid."""

    def __init__(
        self,
        layout: FrameLayout,
        cfg: SystemConfig,
        code: LdpcCode,
        codewords_per_user: int | None = None,
    ):
        self.layout = layout
        self.cfg = cfg
        self.code = code
        self.qam = Qam64(cfg.e_s)
        self.n_users = cfg.o_t
        self.symbols_per_user = layout.n_data * cfg.n_ot
        capacity = self.symbols_per_user * BITS_PER_SYMBOL
        max_cw = capacity // code.n
        if codewords_per_user is None:
            codewords_per_user = max_cw
        if not 1 <= codewords_per_user <= max_cw:
            raise ValueError(
                f"codewords_per_user must be in [1, {max_cw}] for this frame, "
                f"got {codewords_per_user}"
            )
        self.n_cw = codewords_per_user
        self.coded_bits_per_user = self.n_cw * code.n
        self.filler_bits = capacity - self.coded_bits_per_user

    def random_info(self, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, 2, size=(self.n_users, self.n_cw, self.code.k)).astype(np.uint8)

    def _user_symbols(self, info_user: np.ndarray) -> np.ndarray:
        """Encode one user's codewords and map to its (n_ot, n_data) symbol grid."""
        cw = self.code.encode(info_user.T)  # (n, n_cw)
        stream = np.concatenate([cw.T.ravel(), np.zeros(self.filler_bits, dtype=np.uint8)])
        sym = self.qam.map_bits(stream)
        return sym.reshape(self.cfg.n_ot, self.layout.n_data)

    def encode_to_frame(self, info_bits: np.ndarray, pilot_symbols: np.ndarray) -> np.ndarray:
        """Full transmit frame (n_t, n_slots); column 0 and idle antennas are 0."""
        x = np.zeros((self.cfg.n_t, self.layout.n_slots), dtype=complex)
        for k in range(self.n_users):
            rows = slice(k * self.cfg.n_ot, (k + 1) * self.cfg.n_ot)
            x[rows, self.layout.data_slots] = self._user_symbols(info_bits[k])
        for b in range(self.layout.n_blocks):
            for i in range(self.cfg.o_t):
                rows = slice(i * self.cfg.n_ot, (i + 1) * self.cfg.n_ot)
                x[rows, self.layout.block_slots[b, i]] = pilot_symbols[b, i]
        return x

    def pilot_observations(self, y: np.ndarray) -> np.ndarray:
        """Slice received pilot slots into (n_blocks, o_t, n_r)."""
        return np.transpose(y[:, self.layout.block_slots], (1, 2, 0))

    def llrs_to_codewords(self, x_eq: np.ndarray, nv_eff: np.ndarray) -> np.ndarray:
        """Demap equalized data symbols into per-user channel LLR batches.

        ``x_eq`` is (n_t, n_data) over data slots, ``nv_eff`` the matching
        per-stream noise variances; returns (n_users, n, n_cw) LLRs.  Filler
        positions are dropped.
        """
        out = np.empty((self.n_users, self.code.n, self.n_cw))
        for k in range(self.n_users):
            rows = slice(k * self.cfg.n_ot, (k + 1) * self.cfg.n_ot)
            sym = x_eq[rows].ravel()
            nv = np.broadcast_to(
                np.asarray(nv_eff)[rows, None], (self.cfg.n_ot, self.layout.n_data)
            ).ravel()
            llr = self.qam.demap_llr(sym, nv).ravel()[: self.coded_bits_per_user]
            out[k] = llr.reshape(self.n_cw, self.code.n).T
        return out

    def decode_frame(self, llrs: np.ndarray):
        """Decode every codeword; returns info (n_users, n_cw, k) and flags."""
        batch = llrs.transpose(1, 0, 2).reshape(self.code.n, -1)
        info, conv = self.code.decode(batch)
        info = info.reshape(self.code.k, self.n_users, self.n_cw).transpose(1, 2, 0)
        return info.astype(np.uint8), conv.reshape(self.n_users, self.n_cw)

    def rebuild_symbols(self, decoded_info: np.ndarray, pilot_symbols: np.ndarray) -> np.ndarray:
        """Hard symbol frame from decoded info bits.

        Re-encodes and re-maps each user's stream (filler bits are known
        zeros) and restores the known pilot symbols, so the result is a
        complete (n_t, n_slots) transmit hypothesis.
        """
        return self.encode_to_frame(decoded_info, pilot_symbols)
