"""Command-line entry points: run sweeps, mine trajectories, score track files."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .annotate import (
    Provenance,
    build_cooperative_trajectories,
    fragment,
    read_tracked_objects,
    read_trajectories,
    score_interest,
    write_trajectories,
)
from .errors import CotrackError
from .experiment import load_experiment_config, run_sweep, write_sweep_outputs
from .metrics import evaluate_clearmot


def _cmd_run(args) -> int:
    cfg = load_experiment_config(args.config)
    reports, failures = run_sweep(cfg, workers=args.workers)
    out_dir = Path(args.out)
    if not reports:
        print("no runs completed", file=sys.stderr)
        return 1
    paths = write_sweep_outputs(reports, failures, out_dir, fmt=args.format)
    print(f"{len(reports)} runs completed, {len(failures)} failed; wrote {paths['runs']}")
    for failure in failures:
        print(f"FAILED {failure.fusion} latency={failure.latency_ms} seed={failure.seed}: "
              f"{failure.error}", file=sys.stderr)
    return 0 if not failures else 1


def _cmd_annotate(args) -> int:
    trajectories = read_trajectories(args.in_path)
    vehicle = [t for t in trajectories if t.provenance is Provenance.VEHICLE_SIDE]
    infra = [t for t in trajectories if t.provenance is Provenance.INFRA_SIDE]
    coop, candidates = build_cooperative_trajectories(
        vehicle, infra,
        match_threshold_m=args.match_threshold,
        similarity_threshold=args.similarity_threshold,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectories(out / "cooperative.jsonl", coop)

    with open(out / "matches.csv", "w", encoding="utf-8") as fh:
        fh.write("vehicle_id,infra_id,similarity,kept\n")
        for c in candidates:
            kept = int(c.similarity >= args.similarity_threshold)
            fh.write(f"{c.vehicle_id},{c.infra_id},{c.similarity:.4f},{kept}\n")

    segments = fragment(coop, window_s=args.window_s, overlap_s=args.overlap_s)
    with open(out / "segments.csv", "w", encoding="utf-8") as fh:
        fh.write("segment,start_s,end_s,full,n_trajectories\n")
        for seg in segments:
            fh.write(f"{seg.index},{seg.start_s:.4f},{seg.end_s:.4f},"
                     f"{int(seg.full)},{len(seg.trajectories)}\n")
    with open(out / "segment_scores.csv", "w", encoding="utf-8") as fh:
        fh.write("segment,track_id,score\n")
        for seg in segments:
            for tr in seg.trajectories:
                if len(tr.samples) < 3:
                    continue
                score = score_interest(tr, window_s=args.window_s)
                fh.write(f"{seg.index},{tr.track_id},{score:.4f}\n")
    print(f"wrote {len(coop)} cooperative trajectories and {len(segments)} segments to {out}")
    return 0


def _cmd_eval(args) -> int:
    gt = read_tracked_objects(args.gt)
    hyp = read_tracked_objects(args.hyp)
    times = sorted(set(gt) | set(hyp))
    gt_frames = [gt.get(t, []) for t in times]
    hyp_frames = [hyp.get(t, []) for t in times]
    result = evaluate_clearmot(gt_frames, hyp_frames, args.gate)
    print(json.dumps({
        "mota": result.mota,
        "motp_m": result.motp,
        "ids": result.ids,
        "fp": result.fp,
        "fn": result.fn,
        "num_gt": result.num_gt,
        "frames": len(times),
        "gate_m": args.gate,
    }, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cotrack",
        description="Cooperative vehicle-infrastructure tracking simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment sweep from a config file")
    p_run.add_argument("--config", required=True, help="experiment config JSON")
    p_run.add_argument("--out", default="out", help="output directory")
    p_run.add_argument("--workers", type=int, default=1, help="parallel run workers")
    p_run.add_argument("--format", choices=("csv", "json"), default="csv")
    p_run.set_defaults(func=_cmd_run)

    p_ann = sub.add_parser("annotate", help="mine cooperative trajectories from a track file")
    p_ann.add_argument("--in", dest="in_path", required=True, help="input trajectory JSONL")
    p_ann.add_argument("--out", required=True, help="output directory")
    p_ann.add_argument("--match-threshold", type=float, default=2.0)
    p_ann.add_argument("--similarity-threshold", type=float, default=0.5)
    p_ann.add_argument("--window-s", type=float, default=10.0)
    p_ann.add_argument("--overlap-s", type=float, default=5.0)
    p_ann.set_defaults(func=_cmd_annotate)

    p_eval = sub.add_parser("eval", help="score a hypothesis track file against ground truth")
    p_eval.add_argument("--gt", required=True, help="ground-truth JSONL")
    p_eval.add_argument("--hyp", required=True, help="hypothesis JSONL")
    p_eval.add_argument("--gate", type=float, default=2.0, help="match gate in meters")
    p_eval.set_defaults(func=_cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CotrackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
