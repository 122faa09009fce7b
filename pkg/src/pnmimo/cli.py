"""Command line front end: ``simulate --config cfg.json [overrides]``."""

from __future__ import annotations

import argparse
import sys

from .sim_harness import (
    DESK_PRESET,
    PAPER_PRESET,
    ConfigError,
    FULL_SCALE_REFERENCE,
    parse_config,
    parse_config_dict,
    run_experiment,
    run_opcount,
    summarize,
    write_opcount_csv,
)

_PRESETS = {"paper": PAPER_PRESET, "desk": DESK_PRESET}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="simulate",
        description="Monte Carlo link-level sweeps for the PN-impaired massive MIMO uplink",
    )
    p.add_argument("--config", help="JSON experiment configuration file")
    p.add_argument("--preset", choices=sorted(_PRESETS), help="built-in base configuration")
    p.add_argument("--mode", choices=["ber", "mse", "bcrb", "opcount"])
    p.add_argument("--snr", help="comma-separated Es/N0 list in dB")
    p.add_argument("--frames", type=int, help="maximum frames per sweep point")
    p.add_argument("--seed", type=int, help="64-bit experiment seed")
    p.add_argument("--out", help="CSV output path")
    p.add_argument("--workers", type=int, help="worker process count")
    p.add_argument("--reference", action="store_true",
                   help="print deltas against the stored full-scale operating points")
    return p


def _load(args) -> dict:
    if args.config:
        # parse_config validates; we reload raw JSON to allow overrides
        import json

        with open(args.config) as f:
            return json.load(f)
    if args.preset:
        import copy

        return copy.deepcopy(_PRESETS[args.preset])
    raise ConfigError("either --config or --preset is required")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        raw = _load(args)
        if args.mode:
            raw["mode"] = args.mode
        if args.snr:
            raw["snr_db_list"] = [float(s) for s in args.snr.split(",")]
        if args.frames is not None:
            raw["max_frames"] = args.frames
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.out:
            raw["output_path"] = args.out
        if args.workers is not None:
            raw["workers"] = args.workers
        cfg = parse_config_dict(raw)
        if args.config:
            parse_config(args.config)  # surface file-level errors with path context
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    if cfg.mode == "opcount":
        table = run_opcount(cfg)
        print("op_type            per_step_per_slot    mega_ops_per_slot")
        for op, (per_step, mega) in table.items():
            print(f"{op:18s} {per_step:17d}    {mega:.3f}")
        if cfg.output_path:
            write_opcount_csv(cfg, cfg.output_path)
        return 0

    rows = run_experiment(cfg)
    print(summarize(rows, FULL_SCALE_REFERENCE if args.reference else None))
    if cfg.output_path:
        print(f"wrote {cfg.output_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
