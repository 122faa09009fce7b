"""64-QAM mapping/demapping and the per-user LDPC code.

The constellation is Gray-labeled per axis (3 bits I, 3 bits Q) and scaled
to average energy ``e_s``.  Bit LLRs use the max-log approximation with the
convention that a positive LLR favors bit 0.

The code is a deterministic systematic (104, 83) LDPC code: a 21-column
staircase parity part (back-substitution encoding) plus weight-3 information
columns placed by a fixed-seed greedy search that balances check loads and
avoids short cycles where possible.  The parity-check matrix can be exported
and imported in alist format so alternate constructions can be swapped in.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "Qam64",
    "qam64",
    "qam_map",
    "qam_demap_llr",
    "LdpcCode",
    "default_code",
    "ldpc_encode",
    "ldpc_decode",
]

# Gray amplitude table: 3-bit label b2 b1 b0 -> level, adjacent levels differ
# in exactly one bit.
_GRAY_LEVELS = np.array([-7.0, -5.0, -1.0, -3.0, 7.0, 5.0, 1.0, 3.0])
_QAM64_MEAN_POWER = 42.0  # mean of (I^2 + Q^2) over the unscaled grid

BITS_PER_SYMBOL = 6


@dataclass(frozen=True)
class Qam64:
    """Gray-labeled 64-QAM at average symbol energy ``e_s``.

    A 6-bit label (b0..b5, b0 first) maps bits (b0,b1,b2) to the in-phase
    level and (b3,b4,b5) to the quadrature level through the per-axis Gray
    table, so label 000000 is the (-7, -7) corner.
    """

    e_s: float = 1.0

    @property
    def scale(self) -> float:
        return np.sqrt(self.e_s / _QAM64_MEAN_POWER)

    @property
    def points(self) -> np.ndarray:
        """All 64 points ordered by integer label (b0 most significant)."""
        i = np.arange(64)
        return self.scale * (_GRAY_LEVELS[i >> 3] + 1j * _GRAY_LEVELS[i & 7])

    def map_bits(self, bits: np.ndarray) -> np.ndarray:
        """Map a bit vector (length divisible by 6) to symbols."""
        bits = np.asarray(bits, dtype=np.int64).ravel()
        if bits.size % BITS_PER_SYMBOL:
            raise ValueError("bit count must be divisible by 6")
        b = bits.reshape(-1, BITS_PER_SYMBOL)
        idx_i = (b[:, 0] << 2) | (b[:, 1] << 1) | b[:, 2]
        idx_q = (b[:, 3] << 2) | (b[:, 4] << 1) | b[:, 5]
        return self.scale * (_GRAY_LEVELS[idx_i] + 1j * _GRAY_LEVELS[idx_q])

    def demap_llr(self, y: np.ndarray, noise_var_eff) -> np.ndarray:
        """Max-log bit LLRs, shape (len(y), 6); positive means bit 0 more likely.

        ``LLR_b = min_{s: b=1} |y-s|^2 / nv  -  min_{s: b=0} |y-s|^2 / nv``.
        ``noise_var_eff`` may be scalar or per-symbol.
        """
        y = np.atleast_1d(np.asarray(y, dtype=complex))
        nv = np.broadcast_to(np.asarray(noise_var_eff, dtype=float), y.shape)
        if np.any(nv <= 0):
            raise ValueError("noise_var_eff must be positive")
        d2 = np.abs(y[:, None] - self.points[None, :]) ** 2 / nv[:, None]
        labels = np.arange(64)
        llrs = np.empty((y.size, BITS_PER_SYMBOL))
        for b in range(BITS_PER_SYMBOL):
            one = (labels >> (BITS_PER_SYMBOL - 1 - b)) & 1 == 1
            llrs[:, b] = d2[:, one].min(axis=1) - d2[:, ~one].min(axis=1)
        return llrs

    def hard_demap(self, y: np.ndarray) -> np.ndarray:
        """Nearest-point hard decisions, returned as a flat bit vector."""
        y = np.atleast_1d(np.asarray(y, dtype=complex))
        idx = np.abs(y[:, None] - self.points[None, :]).argmin(axis=1)
        b = np.arange(BITS_PER_SYMBOL - 1, -1, -1)
        return ((idx[:, None] >> b) & 1).ravel().astype(np.int8)


@lru_cache(maxsize=8)
def qam64(e_s: float = 1.0) -> Qam64:
    return Qam64(e_s)


def qam_map(bits, e_s: float = 1.0) -> np.ndarray:
    return qam64(e_s).map_bits(bits)


def qam_demap_llr(y, noise_var_eff, e_s: float = 1.0) -> np.ndarray:
    return qam64(e_s).demap_llr(y, noise_var_eff)


_DEFAULT_N = 104
_DEFAULT_K = 83
_CONSTRUCTION_SEED = 0x1D9C


def _build_default_h(n_info: int = _DEFAULT_K, n_par: int = _DEFAULT_N - _DEFAULT_K) -> np.ndarray:
    """Deterministic parity-check matrix: staircase parity, weight-3 info columns."""
    rng = np.random.default_rng(_CONSTRUCTION_SEED)
    m = n_par
    h = np.zeros((m, n_info + m), dtype=np.uint8)
    for j in range(m):
        h[j, n_info + j] = 1
        if j + 1 < m:
            h[j + 1, n_info + j] = 1

    used_pairs = {(j, j + 1) for j in range(m - 1)}
    row_load = h.sum(axis=1).astype(int)
    for c in range(n_info):
        best_rows, best_score = None, None
        for _ in range(60):
            rows = np.sort(rng.choice(m, size=3, replace=False))
            pairs = [(rows[0], rows[1]), (rows[0], rows[2]), (rows[1], rows[2])]
            collisions = sum(p in used_pairs for p in pairs)
            score = (collisions, int(row_load[rows].sum()))
            if best_score is None or score < best_score:
                best_rows, best_score = rows, score
            if score[0] == 0:
                break
        h[best_rows, c] = 1
        row_load[best_rows] += 1
        used_pairs.update(
            [(best_rows[0], best_rows[1]), (best_rows[0], best_rows[2]), (best_rows[1], best_rows[2])]
        )
    return h


class LdpcCode:
    """Systematic binary LDPC code with a staircase parity part.

    decode() runs flooding-schedule sum-product (tanh rule) with syndrome
    early stopping; the LLR convention is positive = bit 0.
    """

    def __init__(self, h: np.ndarray, max_iters: int = 50):
        h = np.asarray(h, dtype=np.uint8)
        self.h = h
        self.m, self.n = h.shape
        self.k = self.n - self.m
        self.max_iters = max_iters
        if not self._parity_is_staircase():
            raise ValueError("LdpcCode expects a staircase parity part in the last m columns")
        self._rows, self._cols = np.nonzero(h)  # edge list, row-major
        counts = np.bincount(self._rows, minlength=self.m)
        self._row_starts = np.concatenate([[0], np.cumsum(counts)[:-1]])

    def _parity_is_staircase(self) -> bool:
        p = self.h[:, self.k :]
        expect = np.zeros_like(p)
        for j in range(self.m):
            expect[j, j] = 1
            if j + 1 < self.m:
                expect[j + 1, j] = 1
        return bool(np.array_equal(p, expect))

    @property
    def rate(self) -> float:
        return self.k / self.n

    def encode(self, info: np.ndarray) -> np.ndarray:
        """Systematic encoding by parity back-substitution.

        Accepts shape (k,) or (k, batch); returns (n,) or (n, batch).
        """
        info = np.asarray(info, dtype=np.uint8)
        squeeze = info.ndim == 1
        u = info.reshape(self.k, -1)
        if u.shape[0] != self.k:
            raise ValueError(f"info length must be {self.k}")
        s = (self.h[:, : self.k].astype(np.int64) @ u.astype(np.int64)) % 2
        p = np.zeros_like(s)
        p[0] = s[0]
        for j in range(1, self.m):
            p[j] = s[j] ^ p[j - 1]
        cw = np.concatenate([u, p.astype(np.uint8)], axis=0)
        return cw[:, 0] if squeeze else cw

    def syndrome(self, bits: np.ndarray) -> np.ndarray:
        bits = np.asarray(bits, dtype=np.int64)
        flat = bits.reshape(self.n, -1)
        return (self.h.astype(np.int64) @ flat) % 2

    def decode(self, llrs: np.ndarray, max_iters: int | None = None):
        """Sum-product decoding of one codeword or a batch.

        Accepts (n,) or (n, batch) channel LLRs; returns (info_bits,
        converged) with matching shape, where converged flags a zero
        syndrome within the iteration budget.  Ties (LLR 0) resolve to
        bit 0.
        """
        if max_iters is None:
            max_iters = self.max_iters
        llrs = np.asarray(llrs, dtype=float)
        if not np.all(np.isfinite(llrs)):
            raise ValueError("LLRs must be finite")
        squeeze = llrs.ndim == 1
        lch = llrs.reshape(self.n, -1)
        batch = lch.shape[1]

        hard = (lch < 0).astype(np.uint8)
        converged = ~np.any(self.syndrome(hard), axis=0)
        out = hard.copy()

        c2v = np.zeros((self._rows.size, batch))
        total = lch.copy()
        for _ in range(max_iters):
            if converged.all():
                break
            v2c = total[self._cols] - c2v
            t = np.tanh(0.5 * np.clip(v2c, -40.0, 40.0))
            t = np.where(np.abs(t) < 1e-12, 1e-12, t)
            log_t = np.log(np.abs(t))
            neg = (t < 0).astype(np.int64)
            sum_log = np.add.reduceat(log_t, self._row_starts, axis=0)
            sum_neg = np.add.reduceat(neg, self._row_starts, axis=0)
            prod_excl = np.exp(np.clip(sum_log[self._rows] - log_t, -700.0, 25.0))
            sign_excl = 1.0 - 2.0 * ((sum_neg[self._rows] - neg) % 2)
            c2v = 2.0 * np.arctanh(np.clip(prod_excl * sign_excl, -1 + 1e-15, 1 - 1e-15))
            total = lch.copy()
            np.add.at(total, self._cols, c2v)

            hard = (total < 0).astype(np.uint8)
            ok = ~np.any(self.syndrome(hard), axis=0)
            newly = ok & ~converged
            if newly.any():
                out[:, newly] = hard[:, newly]
                converged |= newly
        info = out[: self.k]
        if squeeze:
            return info[:, 0], bool(converged[0])
        return info, converged

    def to_alist(self, path: str) -> None:
        """Write the parity-check matrix in (padded) alist format."""
        col_idx = [np.nonzero(self.h[:, j])[0] + 1 for j in range(self.n)]
        row_idx = [np.nonzero(self.h[i, :])[0] + 1 for i in range(self.m)]
        cmax = max(len(v) for v in col_idx)
        rmax = max(len(v) for v in row_idx)
        lines = [f"{self.n} {self.m}", f"{cmax} {rmax}"]
        lines.append(" ".join(str(len(v)) for v in col_idx))
        lines.append(" ".join(str(len(v)) for v in row_idx))
        for v in col_idx:
            lines.append(" ".join(map(str, list(v) + [0] * (cmax - len(v)))))
        for v in row_idx:
            lines.append(" ".join(map(str, list(v) + [0] * (rmax - len(v)))))
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")

    @classmethod
    def from_alist(cls, path: str, max_iters: int = 50) -> "LdpcCode":
        with open(path) as f:
            tokens = f.read().split()
        it = iter(tokens)
        n, m = int(next(it)), int(next(it))
        next(it), next(it)
        col_deg = [int(next(it)) for _ in range(n)]
        [int(next(it)) for _ in range(m)]
        h = np.zeros((m, n), dtype=np.uint8)
        pos = 2 + 2 + n + m
        # column lists may be zero-padded; read degree-many nonzero entries
        remaining = tokens[pos:]
        ri = 0
        for j in range(n):
            got = 0
            while got < col_deg[j]:
                v = int(remaining[ri])
                ri += 1
                if v:
                    h[v - 1, j] = 1
                    got += 1
            while ri < len(remaining) and int(remaining[ri]) == 0:
                ri += 1
        return cls(h, max_iters=max_iters)


@lru_cache(maxsize=1)
def default_code() -> LdpcCode:
    return LdpcCode(_build_default_h())


def ldpc_encode(info: np.ndarray) -> np.ndarray:
    return default_code().encode(info)


def ldpc_decode(llrs: np.ndarray, max_iters: int | None = None):
    return default_code().decode(llrs, max_iters=max_iters)
