"""Per-frame phase detection: pilot initialization and steepest-ascent search.

The detector estimates one phase per oscillator per slot over an estimation
window (the frame slots after the channel-estimation epoch).  The search
climbs the symbol-conditioned log-likelihood plus a Wiener-increment
log-prior; the first step size comes from Armijo backtracking and later
steps from the Barzilai-Borwein rule; iterations stop when the relative
objective increment falls below a threshold.

Conventions used throughout:

* ``phi``/``x_hat``/``y`` are matrices whose columns are slots of the
  estimation window; the channel-estimation epoch is *not* a column, so the
  prior couples only adjacent window slots.  This makes the objective
  exactly invariant to the unobservable common phase split (adding a
  constant to all transmit rows and subtracting it from all receive rows).
* A slot's likelihood weight is ``sigma2 * (1 + ||x_hat[n]||^2 / e_c)``,
  which accounts for both thermal noise and channel-estimation error;
  perfect CSI drops the second term.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import EstimatedChannel, SystemConfig, block_pair
from .opcount import OperationCounts, count_ops
from .pn_process import wrap_phase

__all__ = [
    "SdConfig",
    "DetectResult",
    "pilot_coarse_estimate",
    "sum_to_atomic_ls",
    "incidence_pinv",
    "interpolate_init",
    "objective",
    "gradient",
    "armijo_first_step",
    "bb_step",
    "detect_phases",
]


@dataclass
class SdConfig:
    """Steepest-ascent settings.

    ``theta`` is the relative-increment stopping threshold; ``lambda_init``
    is the first Armijo candidate step in normalized gradient units and is
    halved (``backtrack_factor``) until the sufficient-increase condition
    with constant ``armijo_c`` holds.
    """

    theta: float = 1e-6
    max_steps: int = 300
    armijo_c: float = 0.5
    lambda_init: float = 1.0
    backtrack_factor: float = 0.5
    max_backtracks: int = 60
    debug_trace: bool = False

    def __post_init__(self):
        if self.theta <= 0:
            raise ValueError("sd.theta must be positive")
        if not 0 < self.armijo_c < 1:
            raise ValueError("sd.armijo_c must be in (0, 1)")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("sd.backtrack_factor must be in (0, 1)")
        if self.max_steps < 1:
            raise ValueError("sd.max_steps must be >= 1")


@dataclass
class DetectResult:
    """Outcome of one phase-detection call."""

    phi: np.ndarray
    steps: int
    obj_evals: int
    backtrack_evals: int
    armijo_flagged: bool = False
    g_trace: list = field(default_factory=list)
    lam_trace: list = field(default_factory=list)


def pilot_coarse_estimate(
    y_pilot_blocks: np.ndarray,
    hh: EstimatedChannel,
    pilot_symbols: np.ndarray,
    cfg: SystemConfig,
) -> np.ndarray:
    """Correlate-and-angle estimates of all sum phases at each pilot block.

    Parameters
    ----------
    y_pilot_blocks : (n_blocks, o_t, n_r) array
        Received vector of the slot, within each block, where only transmit
        oscillator ``i``'s antennas were active.
    pilot_symbols : (n_blocks, o_t, n_ot) array
        The known symbols those antennas sent.

    Returns
    -------
    (o_t * o_r, n_blocks) array of raw angles in (-pi, pi]; row ``i*o_r + j``
    is the pair (transmit i, receive j) estimate
    ``arg((H_hat_block @ p)^H y_block)``.
    """
    y_pilot_blocks = np.asarray(y_pilot_blocks)
    pilot_symbols = np.asarray(pilot_symbols)
    n_blocks = y_pilot_blocks.shape[0]
    if y_pilot_blocks.shape[1:] != (cfg.o_t, cfg.n_r):
        raise ValueError("y_pilot_blocks must have shape (n_blocks, o_t, n_r)")
    if pilot_symbols.shape != (n_blocks, cfg.o_t, cfg.n_ot):
        raise ValueError("pilot_symbols must have shape (n_blocks, o_t, n_ot)")

    est = np.empty((cfg.o_t * cfg.o_r, n_blocks))
    for b in range(n_blocks):
        for i in range(cfg.o_t):
            y_slot = y_pilot_blocks[b, i]
            for j in range(cfg.o_r):
                ref = block_pair(hh, j, i, cfg) @ pilot_symbols[b, i]
                corr = np.vdot(ref, y_slot[j * cfg.n_or : (j + 1) * cfg.n_or])
                est[i * cfg.o_r + j, b] = np.angle(corr)
    return est


def incidence_pinv(o_t: int, o_r: int) -> np.ndarray:
    """Minimum-norm linear map from sum-phase vectors to atomic-phase vectors."""
    a = np.zeros((o_t * o_r, o_t + o_r))
    for i in range(o_t):
        for j in range(o_r):
            a[i * o_r + j, i] = 1.0
            a[i * o_r + j, o_t + j] = 1.0
    return np.linalg.pinv(a)


def sum_to_atomic_ls(sum_est: np.ndarray, o_t: int, o_r: int) -> np.ndarray:
    """Least-squares atomic phases from per-block sum-phase estimates.

    The raw angles of each block are first unwrapped against the previous
    block's (unwrapped) values, then projected through the minimum-norm
    pseudo-inverse of the pair incidence map.  Input and output are
    ``(o_t*o_r, n_blocks)`` and ``(o_t+o_r, n_blocks)``.
    """
    s = np.atleast_2d(np.asarray(sum_est, dtype=float))
    unwrapped = np.empty_like(s)
    prev = np.zeros(s.shape[0])
    for b in range(s.shape[1]):
        prev = prev + wrap_phase(s[:, b] - prev)
        unwrapped[:, b] = prev
    return incidence_pinv(o_t, o_r) @ unwrapped


def interpolate_init(
    block_times: np.ndarray, atomic_at_blocks: np.ndarray, n_slots: int
) -> np.ndarray:
    """Piecewise-linear initial phase estimate over a whole window.

    Each oscillator's per-block values (already unwrapped by the LS stage)
    are unwrapped once more along time for safety and linearly interpolated
    onto slots ``0..n_slots-1``; slots before the first and after the last
    block take the nearest block's value.
    """
    t = np.asarray(block_times, dtype=float)
    vals = np.unwrap(np.atleast_2d(atomic_at_blocks), axis=1)
    slots = np.arange(n_slots, dtype=float)
    return np.vstack([np.interp(slots, t, row) for row in vals])


def _phase_factors(phi: np.ndarray, cfg: SystemConfig):
    et = np.exp(1j * phi[: cfg.o_t])
    er = np.exp(1j * phi[cfg.o_t :])
    return np.repeat(et, cfg.n_ot, axis=0), np.repeat(er, cfg.n_or, axis=0)


def _slot_weights(x_hat: np.ndarray, hh: EstimatedChannel, sigma2: float) -> np.ndarray:
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    energy = np.sum(np.abs(x_hat) ** 2, axis=0)
    return sigma2 * (1.0 + hh.inv_e_c * energy)


def _check_shapes(phi, x_hat, y, cfg):
    if phi.shape[0] != cfg.o_t + cfg.o_r:
        raise ValueError("phi must have o_t + o_r rows")
    if x_hat.shape != (cfg.n_t, phi.shape[1]) or y.shape != (cfg.n_r, phi.shape[1]):
        raise ValueError("phi, x_hat and y must cover the same slots")


def _prior_increments(phi: np.ndarray, rho2: float) -> np.ndarray:
    if rho2 <= 0:
        raise ValueError("rho2 must be positive")
    if phi.shape[1] < 2:
        return np.zeros((phi.shape[0], 0))
    return wrap_phase(np.diff(phi, axis=1))


def objective(
    phi: np.ndarray,
    x_hat: np.ndarray,
    hh: EstimatedChannel,
    y: np.ndarray,
    cfg: SystemConfig,
    rho2: float,
) -> float:
    """Symbol-conditioned log-likelihood plus Wiener log-prior (up to constants).

    Per slot the likelihood term is
    ``(Re{x^H Phi_T^H Hh^H Phi_R^H y} - ||Hh Phi_T x||^2 / 2) / weight``
    and the prior contributes ``-wrap(diff(phi))^2 / (2 rho2)`` summed over
    window-interior increments.
    """
    phi = np.asarray(phi, dtype=float)
    _check_shapes(phi, x_hat, y, cfg)
    dt, dr = _phase_factors(phi, cfg)
    xt = dt * x_hat
    u = hh.h_hat @ xt
    r = np.conj(dr) * y
    term1 = np.sum(np.conj(xt) * (hh.h_hat.conj().T @ r), axis=0).real
    term2 = 0.5 * np.sum(np.abs(u) ** 2, axis=0)
    weights = _slot_weights(x_hat, hh, cfg.sigma2)
    d = _prior_increments(phi, rho2)
    return float(np.sum((term1 - term2) / weights) - np.sum(d**2) / (2.0 * rho2))


def gradient(
    phi: np.ndarray,
    x_hat: np.ndarray,
    hh: EstimatedChannel,
    y: np.ndarray,
    cfg: SystemConfig,
    rho2: float,
) -> np.ndarray:
    """Gradient of :func:`objective` with respect to every phase entry.

    Transmit rows use ``Im{e^{-j phi} x_i^H Hh_i^H (Phi_R^H y - Hh Phi_T x)}``
    per slot, receive rows ``Im{e^{-j phi} (Hh Phi_T x)_i^H y_i}``, each
    divided by the slot weight; the prior adds the wrapped-increment pull of
    the two neighbor slots (boundary slots lose the missing term).
    """
    phi = np.asarray(phi, dtype=float)
    _check_shapes(phi, x_hat, y, cfg)
    dt, dr = _phase_factors(phi, cfg)
    xt = dt * x_hat
    u = hh.h_hat @ xt
    resid = np.conj(dr) * y - u
    v = hh.h_hat.conj().T @ resid
    w = phi.shape[1]
    g_tx = (np.conj(xt) * v).reshape(cfg.o_t, cfg.n_ot, w).sum(axis=1).imag
    g_rx = (np.conj(dr * u) * y).reshape(cfg.o_r, cfg.n_or, w).sum(axis=1).imag
    g = np.vstack([g_tx, g_rx]) / _slot_weights(x_hat, hh, cfg.sigma2)

    d = _prior_increments(phi, rho2)
    g[:, :-1] += d / rho2
    g[:, 1:] -= d / rho2
    return g


def armijo_first_step(phi0, grad0, eval_fn, cfg: SdConfig, g0=None):
    """Backtracking line search along the gradient direction.

    Halves the candidate step until
    ``g(phi0 + lam*grad0) >= g(phi0) + lam * c * ||grad0||^2``.

    Returns ``(lam, accepted, g_new, n_evals)`` where ``n_evals`` counts the
    objective evaluations performed here (including ``g0`` when it was not
    supplied) and ``g_new`` is the objective at the returned step, or None
    for a zero gradient.  When no candidate passes within the backtrack
    budget the last tried step is returned with ``accepted=False``.
    """
    gnorm2 = float(np.sum(np.asarray(grad0) ** 2))
    n_evals = 0
    if g0 is None:
        g0 = eval_fn(phi0)
        n_evals += 1
    if gnorm2 == 0.0:
        return cfg.lambda_init, True, None, n_evals
    lam = cfg.lambda_init
    g_new = None
    for _ in range(cfg.max_backtracks + 1):
        g_new = eval_fn(phi0 + lam * grad0)
        n_evals += 1
        if g_new >= g0 + lam * cfg.armijo_c * gnorm2:
            return lam, True, g_new, n_evals
        last = lam
        lam *= cfg.backtrack_factor
    return last, False, g_new, n_evals


def bb_step(phi_prev, phi_prev2, grad_prev, grad_prev2, fallback: float) -> float:
    """Barzilai-Borwein step ``|dPhi . dGrad| / ||dGrad||^2``.

    Falls back to ``fallback`` (the previous step size) when the gradient
    difference vanishes.
    """
    dphi = np.asarray(phi_prev) - np.asarray(phi_prev2)
    dg = np.asarray(grad_prev) - np.asarray(grad_prev2)
    den = float(np.sum(dg**2))
    if den == 0.0:
        return fallback
    return abs(float(np.sum(dphi * dg))) / den


def detect_phases(
    init: np.ndarray,
    x_hat: np.ndarray,
    hh: EstimatedChannel,
    y: np.ndarray,
    cfg: SystemConfig,
    sd: SdConfig,
    rho2: float,
    counter: OperationCounts | None = None,
) -> DetectResult:
    """Steepest-ascent phase search from an initial estimate.

    Runs at most ``sd.max_steps`` ascent steps (Armijo-backtracked first
    step, Barzilai-Borwein afterwards) and stops when the relative objective
    increment drops below ``sd.theta``.  Later BB steps may transiently
    decrease the objective; that is inherent to the step rule and not
    guarded against.  When ``counter`` is given, the per-step/per-slot
    operation tally of the gradient/step-size path is accumulated onto it.
    """
    phi = np.array(init, dtype=float)
    n_slots = phi.shape[1]
    step_ops = count_ops(cfg)

    def eval_g(p):
        return objective(p, x_hat, hh, y, cfg, rho2)

    g_prev = eval_g(phi)
    obj_evals = 1
    backtrack_evals = 1  # the baseline evaluation
    grad_prev = gradient(phi, x_hat, hh, y, cfg, rho2)

    lam, accepted, g_new, evals = armijo_first_step(phi, grad_prev, eval_g, sd, g0=g_prev)
    obj_evals += evals
    backtrack_evals += evals - 1
    phi_prev = phi
    phi = phi + lam * grad_prev
    if g_new is None:  # zero gradient: re-evaluate so the step is accounted for
        g_new = eval_g(phi)
        obj_evals += 1
    if counter is not None:
        counter.add(step_ops, scale=n_slots)

    steps = 1
    g_trace, lam_trace = [g_new], [lam]
    denom = max(abs(g_prev), np.finfo(float).tiny)
    stop = abs(g_new - g_prev) / denom < sd.theta
    g_prev = g_new

    while not stop and steps < sd.max_steps:
        grad = gradient(phi, x_hat, hh, y, cfg, rho2)
        lam = bb_step(phi, phi_prev, grad, grad_prev, fallback=lam)
        phi_prev, grad_prev = phi, grad
        phi = phi + lam * grad
        g_new = eval_g(phi)
        obj_evals += 1
        if counter is not None:
            counter.add(step_ops, scale=n_slots)
        steps += 1
        if sd.debug_trace:
            g_trace.append(g_new)
            lam_trace.append(lam)
        denom = max(abs(g_prev), np.finfo(float).tiny)
        stop = abs(g_new - g_prev) / denom < sd.theta
        g_prev = g_new

    return DetectResult(
        phi=phi,
        steps=steps,
        obj_evals=obj_evals,
        backtrack_evals=backtrack_evals,
        armijo_flagged=not accepted,
        g_trace=g_trace if sd.debug_trace else [g_trace[0]],
        lam_trace=lam_trace if sd.debug_trace else [lam_trace[0]],
    )
