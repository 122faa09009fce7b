"""Seeded Monte Carlo experiment runner with CSV emission.

Every random draw derives from ``SeedSequence([seed, snr_index, frame_index,
purpose])``, so results are bit-identical across runs and worker counts;
frames are simulated in index chunks and aggregated in index order.  In BER
mode a sweep point stops once the error budget is reached within the
canonical frame prefix (the cut is a pure function of the per-frame results,
not of scheduling).

The CSV contract: a ``#``-prefixed header block carrying the config hash,
seed and code version, then one row per SNR point with the MetricRow columns
in order.  ``wallclock_s`` is zeroed in the file by default so identical
(seed, config) pairs produce identical bytes; disable
``deterministic_output`` to record measured wall time instead.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .bcrb import bcrb_bound
from .channel import SystemConfig, estimate_channel, gen_rician, snr_db_to_sigma2
from .em_receiver import ReceiverConfig, receive_frame
from .framing import FrameCodec, FrameTruth, build_layout, draw_pilot_symbols
from .modem_fec import LdpcCode, default_code
from .opcount import OperationCounts, count_ops
from .phase_estimator import SdConfig
from .pn_process import PnConfig, expected_mask_increment_std, gen_mask, gen_wiener

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "MetricRow",
    "FrameStats",
    "parse_config",
    "parse_config_dict",
    "serialize_config",
    "config_hash",
    "run_experiment",
    "write_csv",
    "summarize",
    "PAPER_PRESET",
    "DESK_PRESET",
    "FULL_SCALE_REFERENCE",
]

MODES = ("ber", "mse", "bcrb", "opcount")

# Purpose tags folded into the per-frame stream keys.
_CHAN, _PN, _DATA, _NOISE, _CSI, _PILOT = range(6)


class ConfigError(ValueError):
    """Raised for malformed or inconsistent experiment configuration."""


@dataclass
class ExperimentConfig:
    mode: str = "ber"
    system: SystemConfig = field(default_factory=SystemConfig)
    pn: PnConfig = field(default_factory=lambda: PnConfig(rho=0.2))
    receiver: ReceiverConfig = field(default_factory=ReceiverConfig)
    snr_db_list: list = field(default_factory=lambda: [9.0])
    max_frames: int = 100
    max_frame_errors: int = 100
    seed: int = 0
    output_path: str | None = None
    workers: int = 1
    codewords_per_user: int | None = None
    deterministic_output: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.snr_db_list:
            raise ConfigError("snr_db_list must be nonempty")
        if self.max_frames < 1:
            raise ConfigError("max_frames must be >= 1")
        if self.max_frame_errors < 1:
            raise ConfigError("max_frame_errors must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.seed < 0 or self.seed > 2**64 - 1:
            raise ConfigError("seed must fit in 64 bits")
        if self.receiver.phase_mode in ("em", "pilot") and self.pn.model == "wiener" and self.pn.rho == 0:
            raise ConfigError("receiver.phase_mode requires pn.rho > 0 (set phase_mode='off' for no PN)")


@dataclass
class MetricRow:
    """One sweep point; field order defines the CSV column order."""

    snr_db: float
    ber: float
    mse_sum_phase_rad2: float
    bcrb_rad2: float
    avg_rx_iters: float
    avg_total_sd_steps: float
    frames: int
    frame_errors: int
    wallclock_s: float


@dataclass
class FrameStats:
    """Per-frame results shipped back from workers."""

    frame_idx: int
    bit_errors: int
    info_bits: int
    frame_error: bool
    mse: float
    bcrb: float
    rx_iters: int
    sd_steps: int
    ops: OperationCounts


# ---------------------------------------------------------------------------
# Configuration parsing

_TOP_KEYS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def _build_section(cls, data: dict, prefix: str):
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown key {prefix}.{sorted(unknown)[0]}")
    try:
        return cls(**data)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def parse_config_dict(raw: dict) -> ExperimentConfig:
    raw = dict(raw)
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]}")

    sections = {}
    if "system" in raw:
        system = dict(raw.pop("system"))
        if system.get("e_c") in (None, "inf"):
            system["e_c"] = math.inf
        sections["system"] = _build_section(SystemConfig, system, "system")
    if "pn" in raw:
        sections["pn"] = _build_section(PnConfig, dict(raw.pop("pn")), "pn")
    if "receiver" in raw:
        receiver = dict(raw.pop("receiver"))
        sd = dict(receiver.pop("sd", {}))
        receiver["sd"] = _build_section(SdConfig, sd, "receiver.sd")
        sections["receiver"] = _build_section(ReceiverConfig, receiver, "receiver")
    try:
        return ExperimentConfig(**sections, **raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(path: str) -> ExperimentConfig:
    """Load and validate a JSON experiment configuration."""
    try:
        with open(path) as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_dict(raw)


def serialize_config(cfg: ExperimentConfig) -> dict:
    """Round-trippable plain-dict form (inf energies become null)."""
    out = dataclasses.asdict(cfg)
    if math.isinf(out["system"]["e_c"]):
        out["system"]["e_c"] = None
    out["pn"]["mask_segments"] = [list(s) for s in out["pn"]["mask_segments"]]
    return out


def config_hash(cfg: ExperimentConfig) -> str:
    """Hash of the result-determining configuration.

    Execution details that cannot change the simulated numbers (output path,
    worker count, wallclock reporting) are excluded, so reruns and different
    worker counts of the same experiment carry the same hash.
    """
    payload = serialize_config(cfg)
    for key in ("output_path", "workers", "deterministic_output"):
        payload.pop(key, None)
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Presets and full-scale reference points

PAPER_PRESET = {
    "mode": "ber",
    "seed": 1,
    "snr_db_list": [7.0, 8.0, 9.0, 10.0, 11.0, 12.0],
    "max_frames": 1000000,
    "max_frame_errors": 100,
    "system": {
        "n_t": 32, "n_r": 64, "o_t": 16, "o_r": 4,
        "e_s": 1.0, "e_c": None, "sigma2": 0.1, "k_rice_db": 100.0,
        "l": 1086, "r": 60,
    },
    "pn": {"model": "wiener", "rho": 0.2},
    "receiver": {
        "max_rx_iters": 10, "stopping": "genie", "phase_mode": "em",
        "sd": {"theta": 1e-6, "max_steps": 300},
    },
}

DESK_PRESET = {
    "mode": "ber",
    "seed": 1,
    "snr_db_list": [4.5, 5.0, 5.5],
    "max_frames": 200,
    "max_frame_errors": 40,
    "system": {
        "n_t": 8, "n_r": 32, "o_t": 4, "o_r": 4,
        "e_s": 1.0, "e_c": None, "sigma2": 0.1, "k_rice_db": 100.0,
        "l": 120, "r": 8,
    },
    "pn": {"model": "wiener", "rho": 0.015},
    "receiver": {
        "max_rx_iters": 10, "stopping": "genie", "phase_mode": "em",
        "sd": {"theta": 1e-6, "max_steps": 300},
    },
}

# Operating points reported for the full-scale configuration (BER 1e-4,
# threshold 1e-6): required Es/N0, average receiver iterations and average
# total steepest-ascent steps.  Used by summarize() for delta columns.
FULL_SCALE_REFERENCE = {
    "perfect_csi_los": {"snr_db": 9.18, "avg_rx_iters": 4.87, "avg_total_sd_steps": 246.52},
    "ec_es_20db": {"snr_db": 10.55, "avg_rx_iters": 4.61, "avg_total_sd_steps": 218.71},
    "ec_es_15db": {"snr_db": 12.47, "avg_rx_iters": 4.54, "avg_total_sd_steps": 193.06},
    "ec_es_10db": {"snr_db": 15.67, "avg_rx_iters": 4.55, "avg_total_sd_steps": 153.97},
    "ec_es_5db": {"snr_db": 20.01, "avg_rx_iters": 4.61, "avg_total_sd_steps": 15.48},
    "rice_10db": {"snr_db": 9.44, "avg_rx_iters": 4.72, "avg_total_sd_steps": 243.22},
    "rice_0db": {"snr_db": 10.44, "avg_rx_iters": 4.74, "avg_total_sd_steps": 249.87},
    "rice_m10db": {"snr_db": 11.85, "avg_rx_iters": 4.78, "avg_total_sd_steps": 250.44},
    "rayleigh": {"snr_db": 12.26, "avg_rx_iters": 4.51, "avg_total_sd_steps": 250.17},
}

# Average steepest-ascent effort at Es/N0 = 10 dB for the full-scale setup,
# used by the opcount mode to convert per-step counts into totals.
FULL_SCALE_AVG_STEPS_PER_ITER = 74.9
FULL_SCALE_AVG_RX_ITERS = 2.7


# ---------------------------------------------------------------------------
# Frame simulation (worker side)


@dataclass
class _RunContext:
    system: SystemConfig
    pn: PnConfig
    receiver: ReceiverConfig
    mode: str
    seed: int
    code: LdpcCode
    codewords_per_user: int | None

    def rho2_rx(self, n_slots: int) -> float:
        if self.pn.model == "wiener":
            return self.pn.rho**2
        std = self.pn.mask_scale_to_increment_std
        if std is None:
            std = expected_mask_increment_std(self.pn, n_slots)
        return max(std, 1e-9) ** 2


def _rng(ctx: _RunContext, snr_idx: int, frame_idx: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([ctx.seed, snr_idx, frame_idx, purpose]))


def _simulate_frame(ctx: _RunContext, sys_cfg: SystemConfig, snr_idx: int, frame_idx: int) -> FrameStats:
    layout = build_layout(sys_cfg)
    n_osc = sys_cfg.o_t + sys_cfg.o_r

    h = gen_rician(sys_cfg, _rng(ctx, snr_idx, frame_idx, _CHAN))
    rho2 = ctx.rho2_rx(layout.n_slots)
    if rho2 > 0:
        bound = bcrb_bound(
            h, sys_cfg.sigma2 / sys_cfg.e_s, rho2,
            sys_cfg.o_t, sys_cfg.o_r, layout.n_slots - 1,
        )
        bcrb_data = float(bound.per_slot[layout.data_slots - 1].mean())
    else:  # no phase process, no bound
        bcrb_data = math.nan
    if ctx.mode == "bcrb":
        return FrameStats(frame_idx, 0, 0, False, math.nan, bcrb_data, 0, 0, OperationCounts())

    pn_rng = _rng(ctx, snr_idx, frame_idx, _PN)
    if ctx.pn.model == "wiener":
        traj = gen_wiener(ctx.pn, n_osc, layout.n_slots, pn_rng)
    else:
        traj = gen_mask(ctx.pn, n_osc, layout.n_slots, pn_rng)

    hh = estimate_channel(h, traj[:, 0], sys_cfg, _rng(ctx, snr_idx, frame_idx, _CSI))
    codec = FrameCodec(layout, sys_cfg, ctx.code, ctx.codewords_per_user)
    pilots = draw_pilot_symbols(layout, sys_cfg, _rng(ctx, snr_idx, frame_idx, _PILOT))
    info = codec.random_info(_rng(ctx, snr_idx, frame_idx, _DATA))
    x = codec.encode_to_frame(info, pilots)

    d_t = np.repeat(np.exp(1j * traj[: sys_cfg.o_t]), sys_cfg.n_ot, axis=0)
    d_r = np.repeat(np.exp(1j * traj[sys_cfg.o_t :]), sys_cfg.n_or, axis=0)
    noise_rng = _rng(ctx, snr_idx, frame_idx, _NOISE)
    z = np.sqrt(sys_cfg.sigma2) * (
        noise_rng.normal(size=(sys_cfg.n_r, layout.n_slots))
        + 1j * noise_rng.normal(size=(sys_cfg.n_r, layout.n_slots))
    )
    y = d_r * (h @ (d_t * x)) + z
    y[:, 0] = 0.0

    rx = ctx.receiver
    if ctx.mode == "mse":
        rx = replace(rx, stopping="none")
    truth = FrameTruth(info, traj)
    res = receive_frame(y, hh, codec, pilots, sys_cfg, rx, ctx.rho2_rx(layout.n_slots), truth)

    bit_errors = int(np.sum(res.info_bits != info))
    return FrameStats(
        frame_idx=frame_idx,
        bit_errors=bit_errors,
        info_bits=int(info.size),
        frame_error=bit_errors > 0,
        mse=res.mse_per_iter[-1],
        bcrb=bcrb_data,
        rx_iters=res.rx_iters,
        sd_steps=res.sd_steps,
        ops=res.ops,
    )


def _frame_batch(args):
    ctx, sys_cfg, snr_idx, frame_indices = args
    return [_simulate_frame(ctx, sys_cfg, snr_idx, i) for i in frame_indices]


# ---------------------------------------------------------------------------
# Experiment driver


def _run_point(ctx: _RunContext, cfg: ExperimentConfig, snr_idx: int, pool) -> list[FrameStats]:
    sys_cfg = cfg.system.with_sigma2(snr_db_to_sigma2(cfg.snr_db_list[snr_idx], cfg.system.e_s))
    stats: list[FrameStats] = []
    chunk = max(8, 4 * cfg.workers) if cfg.mode == "ber" else cfg.max_frames
    next_frame = 0
    while next_frame < cfg.max_frames:
        hi = min(next_frame + chunk, cfg.max_frames)
        indices = list(range(next_frame, hi))
        next_frame = hi
        if pool is None:
            batch = _frame_batch((ctx, sys_cfg, snr_idx, indices))
        else:
            shards = [indices[k :: cfg.workers] for k in range(cfg.workers)]
            futures = [
                pool.submit(_frame_batch, (ctx, sys_cfg, snr_idx, shard))
                for shard in shards
                if shard
            ]
            batch = [st for fut in futures for st in fut.result()]
            batch.sort(key=lambda s: s.frame_idx)
        stats.extend(batch)
        if cfg.mode == "ber":
            stats.sort(key=lambda s: s.frame_idx)
            errors = 0
            for pos, st in enumerate(stats):
                errors += st.frame_error
                if errors >= cfg.max_frame_errors:
                    return stats[: pos + 1]
    return stats


def _aggregate(snr_db: float, stats: list[FrameStats], wallclock_s: float) -> MetricRow:
    frames = len(stats)
    bits = sum(s.info_bits for s in stats)
    return MetricRow(
        snr_db=snr_db,
        ber=(sum(s.bit_errors for s in stats) / bits) if bits else math.nan,
        mse_sum_phase_rad2=float(np.mean([s.mse for s in stats])),
        bcrb_rad2=float(np.mean([s.bcrb for s in stats])),
        avg_rx_iters=float(np.mean([s.rx_iters for s in stats])),
        avg_total_sd_steps=float(np.mean([s.sd_steps for s in stats])),
        frames=frames,
        frame_errors=sum(s.frame_error for s in stats),
        wallclock_s=wallclock_s,
    )


def run_experiment(cfg: ExperimentConfig) -> list[MetricRow]:
    """Run all sweep points; returns rows and writes the CSV if configured."""
    if cfg.mode == "opcount":
        rows = []  # opcount emits its own small table; see run_opcount
        if cfg.output_path:
            write_opcount_csv(cfg, cfg.output_path)
        return rows

    ctx = _RunContext(
        system=cfg.system,
        pn=cfg.pn,
        receiver=cfg.receiver,
        mode=cfg.mode,
        seed=cfg.seed,
        code=default_code(),
        codewords_per_user=cfg.codewords_per_user,
    )
    rows = []
    pool = ProcessPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    try:
        for snr_idx, snr_db in enumerate(cfg.snr_db_list):
            t0 = time.perf_counter()
            stats = _run_point(ctx, cfg, snr_idx, pool)
            wall = 0.0 if cfg.deterministic_output else time.perf_counter() - t0
            rows.append(_aggregate(snr_db, stats, wall))
    finally:
        if pool is not None:
            pool.shutdown()
    if cfg.output_path:
        write_csv(cfg, rows, cfg.output_path)
    return rows


def run_opcount(cfg: ExperimentConfig) -> dict:
    """Closed-form operation counts for the configured geometry.

    Totals use the full-scale average effort (steps/iteration and receiver
    iterations) and are reported in mega-operations per time slot.
    """
    per_step = count_ops(cfg.system)
    factor = FULL_SCALE_AVG_STEPS_PER_ITER * FULL_SCALE_AVG_RX_ITERS / 1e6
    return {
        "sums": (per_step.sums, per_step.sums * factor),
        "products": (per_step.products, per_step.products * factor),
        "divisions": (per_step.divisions, per_step.divisions * factor),
        "lut_accesses": (per_step.lut_accesses, per_step.lut_accesses * factor),
    }


# ---------------------------------------------------------------------------
# Output


def _csv_header(cfg: ExperimentConfig) -> list[str]:
    return [
        f"# pnmimo {__version__}",
        f"# config_hash: {config_hash(cfg)}",
        f"# seed: {cfg.seed}",
    ]


def write_csv(cfg: ExperimentConfig, rows: list[MetricRow], path: str) -> None:
    names = [f.name for f in dataclasses.fields(MetricRow)]
    lines = _csv_header(cfg) + [",".join(names)]
    for row in rows:
        lines.append(",".join(repr(getattr(row, n)) for n in names))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def write_opcount_csv(cfg: ExperimentConfig, path: str) -> None:
    table = run_opcount(cfg)
    lines = _csv_header(cfg) + ["op_type,per_step_per_slot,mega_ops_per_slot"]
    for op, (per_step, mega) in table.items():
        lines.append(f"{op},{per_step},{repr(mega)}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def summarize(rows: list[MetricRow], reference: dict | None = None) -> str:
    """Aligned text table of sweep results, with optional reference deltas.

    ``reference`` maps a label to ``{"snr_db": .., "avg_rx_iters": ..,
    "avg_total_sd_steps": ..}``; a row whose SNR matches a reference point
    (within 0.005 dB) gets delta columns against it.
    """
    if not rows:
        raise ValueError("summarize needs at least one row")
    names = [f.name for f in dataclasses.fields(MetricRow)]
    table = [names]
    for row in rows:
        cells = []
        for n in names:
            v = getattr(row, n)
            cells.append(f"{v:.6g}" if isinstance(v, float) else str(v))
        table.append(cells)
    if reference:
        table[0] = table[0] + ["d_iters", "d_steps"]
        for i, row in enumerate(rows, start=1):
            match = next(
                (p for p in reference.values() if abs(p["snr_db"] - row.snr_db) < 5e-3), None
            )
            if match:
                table[i] = table[i] + [
                    f"{row.avg_rx_iters - match['avg_rx_iters']:+.3f}",
                    f"{row.avg_total_sd_steps - match['avg_total_sd_steps']:+.2f}",
                ]
            else:
                table[i] = table[i] + ["-", "-"]
    widths = [max(len(r[c]) for r in table) for c in range(len(table[0]))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in table)
