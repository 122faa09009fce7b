"""Bayesian Cramer-Rao lower bound on sum-phase estimation error.

The per-slot information about the atomic phases combines the observation
term (built from squared Frobenius norms of the true channel's oscillator
blocks) with the Wiener-increment prior, giving a block-tridiagonal Bayesian
information matrix over the frame.  Mapping atomic to sum coordinates goes
through the minimum-norm Jacobian (pseudo-inverse of the pair incidence
map), which leaves the matrix supported on the observable sum subspace of
dimension ``o_t + o_r - 1``; the bound is therefore evaluated with
pseudo-inverse semantics by reducing every block onto that subspace before
running the block-tridiagonal inversion recursion.  The full matrix is never
densified except by the small-frame test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BimBlocks",
    "BcrbBound",
    "incidence_matrix",
    "jacobian",
    "build_m0y",
    "build_blocks",
    "assemble_dense",
    "assemble_and_bound",
    "bcrb_bound",
]


def incidence_matrix(o_t: int, o_r: int) -> np.ndarray:
    """Pair incidence map A with ``phi_sum = A @ phi_atomic``.

    Row ``i*o_r + j`` has ones in columns ``i`` and ``o_t + j``.  The rank
    is ``o_t + o_r - 1``: the common mode split between transmit and receive
    sets is unobservable.
    """
    if o_t < 1 or o_r < 1:
        raise ValueError("oscillator counts must be positive")
    a = np.zeros((o_t * o_r, o_t + o_r))
    rows = np.arange(o_t * o_r)
    a[rows, rows // o_r] = 1.0
    a[rows, o_t + rows % o_r] = 1.0
    return a


def jacobian(o_t: int, o_r: int) -> np.ndarray:
    """Minimum-norm sum-to-atomic transformation: the pseudo-inverse of A."""
    return np.linalg.pinv(incidence_matrix(o_t, o_r))


def build_m0y(h: np.ndarray, sigma2: float, o_t: int, o_r: int) -> np.ndarray:
    """Observation information over atomic phases for one slot.

    ``(1/sigma2) [[Gamma_T, Omega^T], [Omega, Gamma_R]]`` where Gamma_T and
    Gamma_R hold squared Frobenius norms of the per-transmit-oscillator and
    per-receive-oscillator blocks of the true channel, and
    ``Omega[i, j] = ||H_ij||_F^2`` for receive i, transmit j.  Symbols are
    taken at unit energy; scale ``sigma2`` by ``1/e_s`` otherwise.
    """
    h = np.asarray(h)
    n_r, n_t = h.shape
    if n_t % o_t or n_r % o_r:
        raise ValueError("oscillator counts must divide the antenna counts")
    n_ot, n_or = n_t // o_t, n_r // o_r
    power = np.abs(h) ** 2
    omega = power.reshape(o_r, n_or, o_t, n_ot).sum(axis=(1, 3))  # (o_r, o_t)
    m = np.zeros((o_t + o_r, o_t + o_r))
    m[:o_t, :o_t] = np.diag(omega.sum(axis=0))
    m[o_t:, o_t:] = np.diag(omega.sum(axis=1))
    m[:o_t, o_t:] = omega.T
    m[o_t:, :o_t] = omega
    return m / sigma2


@dataclass
class BimBlocks:
    """Building blocks of the Bayesian information matrix."""

    m0_tilde_y: np.ndarray
    j: np.ndarray
    a: np.ndarray
    o_t: int
    o_r: int
    m0: np.ndarray | None = None
    m1: np.ndarray | None = None


@dataclass
class BcrbBound:
    """Per-slot diagonal of the pseudo-inverted BIM plus its average."""

    per_slot: np.ndarray  # (l, o_t*o_r)
    mean: float
    ridge: float
    condition: float = field(default=np.nan)


def build_blocks(h: np.ndarray, sigma2: float, o_t: int, o_r: int) -> BimBlocks:
    return BimBlocks(
        m0_tilde_y=build_m0y(h, sigma2, o_t, o_r),
        j=jacobian(o_t, o_r),
        a=incidence_matrix(o_t, o_r),
        o_t=o_t,
        o_r=o_r,
    )


def _project_blocks(blocks: BimBlocks, rho2: float, ridge: float):
    n_a = blocks.o_t + blocks.o_r
    m0_tilde = blocks.m0_tilde_y + (2.0 / rho2 + ridge) * np.eye(n_a)
    m1_tilde = -(1.0 / rho2) * np.eye(n_a)
    m0 = blocks.j.T @ m0_tilde @ blocks.j
    m1 = blocks.j.T @ m1_tilde @ blocks.j
    blocks.m0, blocks.m1 = m0, m1
    return m0, m1


def assemble_dense(blocks: BimBlocks, rho2: float, l: int, ridge: float = 1e-12) -> np.ndarray:
    """Densely assembled BIM, intended only as a small-frame test oracle."""
    if l > 8:
        raise ValueError("dense assembly is reserved for the test oracle (l <= 8)")
    m0, m1 = _project_blocks(blocks, rho2, ridge)
    s = m0.shape[0]
    m = np.zeros((l * s, l * s))
    for i in range(l):
        m[i * s : (i + 1) * s, i * s : (i + 1) * s] = m0
        if i + 1 < l:
            m[i * s : (i + 1) * s, (i + 1) * s : (i + 2) * s] = m1
            m[(i + 1) * s : (i + 2) * s, i * s : (i + 1) * s] = m1
    return m


def assemble_and_bound(
    blocks: BimBlocks, rho2: float, l: int, ridge: float = 1e-12
) -> BcrbBound:
    """Per-slot MSE lower bounds from the block-tridiagonal BIM.

    Runs a forward/backward Schur-complement recursion on blocks reduced to
    the observable subspace (never forming the full matrix) and maps the
    per-slot inverse diagonal back to sum coordinates.
    """
    if l < 1:
        raise ValueError("l must be >= 1")
    if rho2 <= 0:
        raise ValueError("rho2 must be positive")
    m0, m1 = _project_blocks(blocks, rho2, ridge)

    u_full, sv, _ = np.linalg.svd(blocks.a)
    rank = int(np.sum(sv > sv[0] * 1e-12))
    u = u_full[:, :rank]
    b0 = u.T @ m0 @ u
    b1 = u.T @ m1 @ u

    cond = float(np.linalg.cond(b0))
    if not np.isfinite(cond) or cond > 1e14:
        raise np.linalg.LinAlgError(
            f"BIM diagonal block is numerically singular (condition {cond:.3e})"
        )

    forward = [b0]
    for _ in range(1, l):
        forward.append(b0 - b1 @ np.linalg.solve(forward[-1], b1))
    backward = [b0]
    for _ in range(1, l):
        backward.append(b0 - b1 @ np.linalg.solve(backward[-1], b1))
    backward.reverse()

    per_slot = np.empty((l, blocks.o_t * blocks.o_r))
    for i in range(l):
        g = np.linalg.inv(forward[i] + backward[i] - b0)
        per_slot[i] = np.einsum("ij,jk,ik->i", u, g, u)
    return BcrbBound(per_slot=per_slot, mean=float(per_slot.mean()), ridge=ridge, condition=cond)


def bcrb_bound(
    h: np.ndarray, sigma2: float, rho2: float, o_t: int, o_r: int, l: int
) -> BcrbBound:
    """One-shot bound for a channel draw (unit-energy known symbols)."""
    return assemble_and_bound(build_blocks(h, sigma2, o_t, o_r), rho2, l)
