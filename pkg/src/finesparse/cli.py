"""Command-line entry point.

Usage: ``finesparse <command> --config <path.json> [--out <dir>] [--threads N]``

Exit status is 0 when every asserted check passes, 1 when a check fails
(a JSON failure summary goes to stdout) and 2 on invalid input.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import experiments as ex
from .config import RunConfig
from .formats import FormatError, atomic_write, read_tensor, write_csv, write_mask, write_tensor
from .metrics import CURVE_HEADER, VARIANCE_HEADER
from .schedule import REPORT_HEADER, FrozenWorkload, run_trajectory
from .synthetic import TrajectoryWorkload, gen_block_model, gen_mixed_semantic, gen_video_field
from .theory import VALIDATION_HEADER

COMMANDS = ("gen", "run", "ablate-ordering", "ablate-subblock", "validate-theory",
            "recall-curve")


def _write_config(cfg: RunConfig, out: Path) -> None:
    atomic_write(out / "run.json", cfg.to_json().encode("utf-8"))


def cmd_gen(cfg: RunConfig, out: Path) -> list:
    if cfg.generator == "field":
        q, k, v = gen_video_field(cfg.field_params())
    elif cfg.generator == "mixed":
        q, k, v = gen_mixed_semantic(cfg.mixed_params())
    else:
        sample = gen_block_model(cfg.block_model_params())
        q, k = sample.q, sample.k
        v = None
        write_tensor(out / "q_centroids.dfst", sample.centroids.q)
        write_tensor(out / "k_centroids.dfst", sample.centroids.k)
    write_tensor(out / "q.dfst", q)
    write_tensor(out / "k.dfst", k)
    if v is not None:
        write_tensor(out / "v.dfst", v)
    return []


def _load_inputs(cfg: RunConfig):
    src = Path(cfg.input_dir)
    missing = [n for n in ("q.dfst", "k.dfst", "v.dfst") if not (src / n).is_file()]
    if missing:
        raise FileNotFoundError(f"missing inputs in {src}: {', '.join(missing)}")
    return (read_tensor(src / n) for n in ("q.dfst", "k.dfst", "v.dfst"))


def cmd_run(cfg: RunConfig, out: Path) -> list:
    dims, schedule = cfg.grid(), cfg.schedule()
    if cfg.input_dir:
        q, k, v = _load_inputs(cfg)
        if q.shape[0] != dims.token_count:
            raise ValueError(f"geometry mismatch: dims give {dims.token_count} tokens, "
                             f"inputs have {q.shape[0]}")
        workload = FrozenWorkload(q, k, v, schedule.total_steps, cfg.layers, cfg.heads)
    elif cfg.generator == "field":
        workload = TrajectoryWorkload(cfg.field_params(), schedule.total_steps, cfg.noise_start,
                                      cfg.noise_end, cfg.layers, cfg.heads)
    else:
        raise ValueError("run needs input_dir or the field generator")
    report = run_trajectory(workload, dims, cfg.ordering, cfg.scoring(), schedule,
                            record_recall=cfg.record_recall, keep_outputs=False,
                            threads=cfg.worker_count)
    write_csv(out / "report.csv", REPORT_HEADER, report.csv_rows())
    for step, layer, head, mask in report.mask_log:
        write_mask(out / "masks" / f"step{step:04d}_layer{layer}_head{head}.dfsm", mask)
    m = -(-dims.token_count // cfg.block_size)
    return ex.check_trajectory(report, schedule, cfg.layers, cfg.heads, m)


def cmd_ablate_ordering(cfg: RunConfig, out: Path) -> list:
    res = ex.ablate_ordering(cfg)
    write_csv(out / "variance.csv", VARIANCE_HEADER, [v.csv_row() for v in res.variance])
    write_csv(out / "ordering_recall.csv", ex.ORDERING_RECALL_HEADER, res.recall)
    write_csv(out / "ordering_per_seed.csv", ex.PER_SEED_HEADER, res.per_seed)
    return res.checks


def cmd_ablate_subblock(cfg: RunConfig, out: Path) -> list:
    res = ex.ablate_subblock(cfg)
    write_csv(out / "subblock_recall.csv", ex.SUBBLOCK_HEADER, res.rows)
    return res.checks


def cmd_validate_theory(cfg: RunConfig, out: Path) -> list:
    res = ex.validate_theory(cfg)
    write_csv(out / "validation.csv", VALIDATION_HEADER, res.rows)
    atomic_write(out / "calibration.json",
                 (json.dumps({"c": res.c, "seed": cfg.seed}, sort_keys=True) + "\n").encode())
    return res.checks


def cmd_recall_curve(cfg: RunConfig, out: Path) -> list:
    res = ex.run_recall_curve(cfg)
    write_csv(out / "recall_curve.csv", CURVE_HEADER, res.curve)
    write_csv(out / "recall_per_seed.csv", ("seed", "step", "layer", "head", "recall"), res.rows)
    return res.checks


HANDLERS = {
    "gen": cmd_gen,
    "run": cmd_run,
    "ablate-ordering": cmd_ablate_ordering,
    "ablate-subblock": cmd_ablate_subblock,
    "validate-theory": cmd_validate_theory,
    "recall-curve": cmd_recall_curve,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="finesparse", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--out", default="out", help="output directory (default: out)")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads, 0 = one per CPU (overrides the config)")
    return parser


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config)
        if args.threads is not None:
            cfg = replace(cfg, threads=args.threads)
        out = Path(args.out)
        os.makedirs(out, exist_ok=True)
        _write_config(cfg, out)
        checks = HANDLERS[args.command](cfg, out)
    except (ValueError, TypeError, FormatError, OSError) as err:
        _emit({"command": args.command, "status": "error", "error": str(err)})
        return 2
    failed = [c for c in checks if not c.passed]
    if failed:
        _emit({
            "command": args.command,
            "status": "failed",
            "seed": cfg.seed,
            "failures": [{"check": c.name, "detail": c.detail} for c in failed],
        })
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
