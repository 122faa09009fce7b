"""Arithmetic-operation accounting for the phase-detection path.

The closed-form tallies describe one steepest-ascent step applied to one
time slot: gradient evaluation for every oscillator plus the step-size
update.  LUT accesses cover transcendental evaluations (complex
exponentials and angles).
"""

from __future__ import annotations

from dataclasses import dataclass

from .channel import SystemConfig

__all__ = ["OperationCounts", "count_ops"]


@dataclass
class OperationCounts:
    """Additive counters for real sums, products, divisions and LUT reads."""

    sums: int = 0
    products: int = 0
    divisions: int = 0
    lut_accesses: int = 0

    def add(self, other: "OperationCounts", scale: int = 1) -> None:
        self.sums += other.sums * scale
        self.products += other.products * scale
        self.divisions += other.divisions * scale
        self.lut_accesses += other.lut_accesses * scale

    def total(self) -> int:
        return self.sums + self.products + self.divisions + self.lut_accesses


def count_ops(cfg: SystemConfig, m_constellation: int = 64) -> OperationCounts:
    """Per-step, per-slot operation counts of the steepest-ascent detector.

    ``m_constellation`` is accepted for interface symmetry with detectors
    whose complexity scales with the constellation size; the steepest-ascent
    path does not depend on it.
    """
    del m_constellation
    n_t, n_r = cfg.n_t, cfg.n_r
    n_ot, n_or = cfg.n_ot, cfg.n_or
    return OperationCounts(
        sums=4 * n_t * n_t + 8 * n_r * n_t + 12 * n_or + 11 * n_ot,
        products=5 * n_t * (n_t - 1) + 10 * n_r * n_t + 7 * (n_or + n_ot),
        divisions=n_ot + n_or,
        lut_accesses=n_t * (n_t - 1) + 2 * n_r * n_t,
    )
