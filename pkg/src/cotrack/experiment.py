"""Batch experiment runner: scenario -> sensing -> channel -> fusion ->
detection -> tracking -> metrics, swept over fusion method, latency and seed.

Every run is deterministic in (config, fusion, latency, seed); sweep output
files are byte-reproducible. Runs are the unit of parallelism.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .channel import Channel, CompressionConfig, LatencyModel, MessageKind
from .detector import DetectParams, detect
from .errors import ConfigurationError
from .fusion import (
    MESSAGE_KIND_FOR_FUSION,
    EgoInputs,
    FusionKind,
    FusionMethod,
    GridReducer,
    cooperative_feature,
)
from .geometry import Category, Region, compose, inverse, transform_box
from .metrics import RunReport, aggregate_run, evaluate_clearmot
from .scenario import (
    AgentPopulation,
    Lane,
    Provenance,
    ScenarioConfig,
    TrackedObject,
    cooperative_ground_truth,
    generate_scenario,
    ground_truth_at,
    objects_to_frame,
)
from .sensing import (
    FeatureFlow,
    GridSpec,
    NoiseConfig,
    View,
    extract_feature_flow,
    rasterize_bev,
    sample_point_cloud,
)
from .tracker import Tracker, TrackerParams


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig = ScenarioConfig()
    fusions: Tuple[FusionMethod, ...] = tuple(
        FusionMethod(kind) for kind in FusionKind
    )
    latencies_ms: Tuple[float, ...] = (0.0, 100.0, 200.0, 300.0, 400.0, 500.0)
    seeds: Tuple[int, ...] = tuple(range(1, 21))
    compression: bool = True
    jitter_ms: float = 0.0
    eval_gate_m: float = 2.0
    detect: DetectParams = DetectParams()
    tracker: TrackerParams = TrackerParams()

    def __post_init__(self):
        if not self.fusions or not self.latencies_ms or not self.seeds:
            raise ConfigurationError("sweep lists must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError("seeds must be distinct")
        if any(l < 0 for l in self.latencies_ms) or self.jitter_ms < 0:
            raise ConfigurationError("latencies must be non-negative")


@dataclass(frozen=True)
class RunFailure:
    fusion: str
    latency_ms: float
    seed: int
    error: str


@dataclass
class RunArtifacts:
    """Optional per-frame products of one run, for tests and file export."""

    gt_frames: List[List[TrackedObject]]
    hyp_frames: List[List[TrackedObject]]
    channel: Optional[Channel]
    fallback_frames: int


def _zero_flow(grid) -> FeatureFlow:
    return FeatureFlow(spec=grid.spec, values=np.zeros(grid.spec.shape), timestamp=grid.timestamp)


def run_single(
    cfg: ExperimentConfig,
    fusion: FusionMethod,
    latency_ms: float,
    seed: int,
    keep_artifacts: bool = False,
):
    """Execute one full run and return its RunReport.

    With keep_artifacts=True returns (report, RunArtifacts) instead.
    """
    scn = generate_scenario(cfg.scenario, seed)
    sc = scn.config
    needs_channel = fusion.kind is not FusionKind.VEHICLE_ONLY
    channel = None
    if needs_channel:
        lm_kind = "uniform" if cfg.jitter_ms > 0 else "constant"
        channel = Channel(
            latency=LatencyModel(lm_kind, latency_ms, cfg.jitter_ms, seed),
            compression=CompressionConfig(enabled=cfg.compression),
        )
    provenance = Provenance.VEHICLE_SIDE if fusion.kind is FusionKind.VEHICLE_ONLY else Provenance.FUSED
    tracker = Tracker(cfg.tracker, provenance=provenance)
    msg_kind = MESSAGE_KIND_FOR_FUSION.get(fusion.kind)
    region = scn.region
    needs_ego_dets = fusion.kind in (FusionKind.VEHICLE_ONLY, FusionKind.LATE)

    gt_frames: List[List[TrackedObject]] = []
    hyp_frames: List[List[TrackedObject]] = []
    fallback = 0
    prev_inf_grid = None

    for t in scn.frame_times():
        ego_pose = scn.ego_pose(t)
        world_to_ego = inverse(ego_pose)
        infra_to_ego = compose(world_to_ego, scn.infra_pose)

        gt_v = objects_to_frame(ground_truth_at(scn, t, View.VEHICLE), world_to_ego)
        gt_i = objects_to_frame(ground_truth_at(scn, t, View.INFRA), world_to_ego)
        gt_frames.append(cooperative_ground_truth(gt_v, gt_i, region))

        if needs_channel:
            pc_inf = sample_point_cloud(scn, t, View.INFRA, sc.noise, seed, sc.surface_pts_per_m)
            if msg_kind is MessageKind.RAW_POINTS:
                content = pc_inf
            else:
                inf_grid = rasterize_bev(pc_inf, sc.infra_grid, sc.density_cap)
                if msg_kind is MessageKind.DETECTIONS:
                    content = detect(inf_grid, cfg.detect)
                elif msg_kind is MessageKind.FEATURE:
                    content = inf_grid
                else:
                    flow = (extract_feature_flow(prev_inf_grid, inf_grid)
                            if prev_inf_grid is not None else _zero_flow(inf_grid))
                    content = (inf_grid, flow)
                    prev_inf_grid = inf_grid
            channel.send(msg_kind, content, t)

        pc_ego = sample_point_cloud(scn, t, View.VEHICLE, sc.noise, seed, sc.surface_pts_per_m)
        ego_grid = rasterize_bev(pc_ego, sc.vehicle_grid, sc.density_cap)
        ego_dets = detect(ego_grid, cfg.detect) if needs_ego_dets else []
        ego_inputs = EgoInputs(cloud=pc_ego, grid=ego_grid, detections=ego_dets,
                               grid_spec=sc.vehicle_grid, density_cap=sc.density_cap)

        fused = cooperative_feature(fusion, channel, t, ego_inputs, infra_to_ego)
        if fused.used_fallback:
            fallback += 1
        dets = fused.detections if fused.detections is not None else detect(fused.grid, cfg.detect)

        dets_world = [replace(d, box=transform_box(d.box, ego_pose)) for d in dets]
        tracked_world = tracker.step(dets_world, t)
        hyp = [o for o in objects_to_frame(tracked_world, world_to_ego)
               if region.contains(o.box.x, o.box.y)]
        hyp_frames.append(hyp)

    mot = evaluate_clearmot(gt_frames, hyp_frames, cfg.eval_gate_m)
    report = aggregate_run(
        mot, channel, sc.duration_s, fusion.kind.value, latency_ms, seed,
        fallback_frames=fallback, match_gate_m=cfg.eval_gate_m, num_frames=len(gt_frames),
    )
    if keep_artifacts:
        return report, RunArtifacts(gt_frames, hyp_frames, channel, fallback)
    return report


def _run_cell(args):
    cfg, fusion, latency_ms, seed = args
    return run_single(cfg, fusion, latency_ms, seed)


def run_sweep(
    cfg: ExperimentConfig, workers: int = 1
) -> Tuple[List[RunReport], List[RunFailure]]:
    """Run every (fusion x latency x seed) cell; failures do not stop the sweep.

    Reports come back in deterministic cell order regardless of worker count.
    """
    cells = [(cfg, fusion, lat, seed)
             for fusion in cfg.fusions for lat in cfg.latencies_ms for seed in cfg.seeds]
    reports: List[Optional[RunReport]] = [None] * len(cells)
    failures: List[RunFailure] = []
    if workers <= 1:
        for idx, cell in enumerate(cells):
            try:
                reports[idx] = _run_cell(cell)
            except Exception as exc:  # noqa: BLE001 - sweep must survive cell failures
                failures.append(RunFailure(cell[1].kind.value, cell[2], cell[3], repr(exc)))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(_run_cell, cell): idx for idx, cell in enumerate(cells)}
            for fut, idx in futures.items():
                cell = cells[idx]
                try:
                    reports[idx] = fut.result()
                except Exception as exc:  # noqa: BLE001
                    failures.append(RunFailure(cell[1].kind.value, cell[2], cell[3], repr(exc)))
    done = [r for r in reports if r is not None]
    failures.sort(key=lambda f: (f.fusion, f.latency_ms, f.seed))
    return done, failures


def summarize(reports: Sequence[RunReport]) -> List[dict]:
    """Per (fusion, latency) means over seeds, in first-seen order."""
    groups: Dict[Tuple[str, float], List[RunReport]] = {}
    order: List[Tuple[str, float]] = []
    for r in reports:
        key = (r.fusion, r.latency_ms)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(r)
    rows = []
    for key in order:
        rs = groups[key]
        rows.append({
            "fusion": key[0],
            "latency_ms": key[1],
            "n_seeds": len(rs),
            "mean_mota": float(np.mean([r.mota for r in rs])),
            "mean_motp_m": float(np.mean([r.motp_m for r in rs])),
            "mean_ids": float(np.mean([r.ids for r in rs])),
            "mean_fp": float(np.mean([r.fp for r in rs])),
            "mean_fn": float(np.mean([r.fn for r in rs])),
            "mean_bps_pre": float(np.mean([r.bps_pre for r in rs])),
            "mean_bps_post": float(np.mean([r.bps_post for r in rs])),
            "mean_fallback_frames": float(np.mean([r.fallback_frames for r in rs])),
        })
    return rows


def _format_cell(v) -> str:
    return f"{v:.4f}" if isinstance(v, float) else str(v)


def emit_report(reports: Sequence[RunReport], fmt: str, out_dir) -> Path:
    """Write the per-run report table as runs.csv or runs.json.

    CSV floats print at 4 decimals with a stable column order; JSON is
    lossless. An empty report list is an error and writes nothing.
    """
    if not reports:
        raise ValueError("cannot emit an empty report list")
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown report format {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        path = out / "runs.csv"
        lines = [",".join(RunReport.csv_columns())]
        lines += [",".join(r.csv_row()) for r in reports]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        path = out / "runs.json"
        path.write_text(
            json.dumps([r.to_json_dict() for r in reports], indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    return path


def write_sweep_outputs(
    reports: Sequence[RunReport],
    failures: Sequence[RunFailure],
    out_dir,
    fmt: str = "csv",
) -> Dict[str, Path]:
    """Emit runs table, per-cell summary, per-fusion latency curves, failures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"runs": emit_report(reports, fmt, out)}

    rows = summarize(reports)
    columns = ["fusion", "latency_ms", "n_seeds", "mean_mota", "mean_motp_m", "mean_ids",
               "mean_fp", "mean_fn", "mean_bps_pre", "mean_bps_post", "mean_fallback_frames"]
    lines = [",".join(columns)]
    lines += [",".join(_format_cell(row[c]) for c in columns) for row in rows]
    summary = out / "summary.csv"
    summary.write_text("\n".join(lines) + "\n", encoding="utf-8")
    paths["summary"] = summary

    by_fusion: Dict[str, List[dict]] = {}
    for row in rows:
        by_fusion.setdefault(row["fusion"], []).append(row)
    for fusion, frows in by_fusion.items():
        frows = sorted(frows, key=lambda r: r["latency_ms"])
        curve = out / f"latency_curve_{fusion}.csv"
        lines = ["latency_ms,mean_mota,mean_motp_m,mean_ids"]
        lines += [
            f"{_format_cell(r['latency_ms'])},{_format_cell(r['mean_mota'])},"
            f"{_format_cell(r['mean_motp_m'])},{_format_cell(r['mean_ids'])}"
            for r in frows
        ]
        curve.write_text("\n".join(lines) + "\n", encoding="utf-8")
        paths[f"curve_{fusion}"] = curve

    if failures:
        fail_path = out / "failures.json"
        fail_path.write_text(
            json.dumps([f.__dict__ for f in failures], indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        paths["failures"] = fail_path
    return paths


# ---------------------------------------------------------------------------
# Config file parsing. The schema is documented in the README; unknown keys
# are rejected so typos fail loudly.

def _check_keys(d: dict, allowed: set, where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigurationError(f"unknown keys {sorted(unknown)} in {where}")


def _grid_from_dict(d: dict, where: str) -> GridSpec:
    _check_keys(d, {"x0", "y0", "cell_size", "cols", "rows", "channels"}, where)
    return GridSpec(x0=float(d["x0"]), y0=float(d["y0"]), cell_size=float(d["cell_size"]),
                    cols=int(d["cols"]), rows=int(d["rows"]), channels=int(d.get("channels", 3)))


def scenario_config_from_dict(d: dict) -> ScenarioConfig:
    _check_keys(d, {
        "duration_s", "frame_rate_hz", "region", "ego", "infra", "vehicle_range_m",
        "agents", "occluders", "occlusion", "noise", "vehicle_grid", "infra_grid",
        "density_cap", "surface_pts_per_m",
    }, "scenario")
    base = ScenarioConfig()
    kwargs = {}
    if "duration_s" in d:
        kwargs["duration_s"] = float(d["duration_s"])
    if "frame_rate_hz" in d:
        kwargs["frame_rate_hz"] = int(d["frame_rate_hz"])
    if "region" in d:
        kwargs["region"] = Region(*[float(v) for v in d["region"]])
    if "ego" in d:
        ego = d["ego"]
        _check_keys(ego, {"start", "yaw", "speed_mps"}, "scenario.ego")
        kwargs["ego_start"] = tuple(float(v) for v in ego.get("start", base.ego_start))
        kwargs["ego_yaw"] = float(ego.get("yaw", base.ego_yaw))
        kwargs["ego_speed"] = float(ego.get("speed_mps", base.ego_speed))
    if "infra" in d:
        infra = d["infra"]
        _check_keys(infra, {"position", "yaw", "range_m"}, "scenario.infra")
        kwargs["infra_position"] = tuple(float(v) for v in infra.get("position", base.infra_position))
        kwargs["infra_yaw"] = float(infra.get("yaw", base.infra_yaw))
        kwargs["infra_range_m"] = float(infra.get("range_m", base.infra_range_m))
    if "vehicle_range_m" in d:
        kwargs["vehicle_range_m"] = float(d["vehicle_range_m"])
    if "agents" in d:
        a = d["agents"]
        _check_keys(a, {"count", "speed_range", "lanes", "x_start_range", "categories",
                        "turn_fraction", "turn_rate"}, "scenario.agents")
        pop = AgentPopulation(
            count=int(a.get("count", 6)),
            speed_range=tuple(float(v) for v in a.get("speed_range", (8.0, 12.0))),
            lanes=tuple(Lane(float(l["y"]), float(l.get("heading", 0.0))) for l in a["lanes"])
            if "lanes" in a else AgentPopulation().lanes,
            x_start_range=tuple(float(v) for v in a.get("x_start_range", (-10.0, 50.0))),
            categories=tuple(Category(c) for c in a.get("categories", ["car", "van"])),
            turn_fraction=float(a.get("turn_fraction", 0.0)),
            turn_rate=float(a.get("turn_rate", 0.3)),
        )
        kwargs["agents"] = pop
    if "occluders" in d:
        kwargs["occluders"] = tuple(tuple(float(v) for v in rect) for rect in d["occluders"])
    if "occlusion" in d:
        kwargs["occlusion"] = bool(d["occlusion"])
    if "noise" in d:
        n = d["noise"]
        _check_keys(n, {"sigma_m", "dropout_p", "clutter_per_m2"}, "scenario.noise")
        kwargs["noise"] = NoiseConfig(
            sigma_m=float(n.get("sigma_m", 0.05)),
            dropout_p=float(n.get("dropout_p", 0.0)),
            clutter_per_m2=float(n.get("clutter_per_m2", 0.2)),
        )
    if "vehicle_grid" in d:
        kwargs["vehicle_grid"] = _grid_from_dict(d["vehicle_grid"], "scenario.vehicle_grid")
    if "infra_grid" in d:
        kwargs["infra_grid"] = _grid_from_dict(d["infra_grid"], "scenario.infra_grid")
    if "density_cap" in d:
        kwargs["density_cap"] = float(d["density_cap"])
    if "surface_pts_per_m" in d:
        kwargs["surface_pts_per_m"] = float(d["surface_pts_per_m"])
    return replace(base, **kwargs)


_FUSION_BY_NAME = {k.value: k for k in FusionKind}


def experiment_config_from_dict(d: dict) -> ExperimentConfig:
    _check_keys(d, {
        "scenario", "fusions", "latencies_ms", "seeds", "compression", "jitter_ms",
        "eval_gate_m", "late_threshold_m", "reducer", "detect", "tracker",
    }, "experiment config")
    base = ExperimentConfig()
    late_threshold = float(d.get("late_threshold_m", 2.0))
    reducer = GridReducer(d.get("reducer", "max"))
    kwargs = {}
    if "scenario" in d:
        kwargs["scenario"] = scenario_config_from_dict(d["scenario"])
    if "fusions" in d:
        try:
            kinds = [_FUSION_BY_NAME[name] for name in d["fusions"]]
        except KeyError as exc:
            raise ConfigurationError(f"unknown fusion {exc.args[0]!r}") from exc
        kwargs["fusions"] = tuple(
            FusionMethod(kind, late_threshold_m=late_threshold, reducer=reducer) for kind in kinds
        )
    if "latencies_ms" in d:
        kwargs["latencies_ms"] = tuple(float(v) for v in d["latencies_ms"])
    if "seeds" in d:
        kwargs["seeds"] = tuple(int(v) for v in d["seeds"])
    if "compression" in d:
        kwargs["compression"] = bool(d["compression"])
    if "jitter_ms" in d:
        kwargs["jitter_ms"] = float(d["jitter_ms"])
    if "eval_gate_m" in d:
        kwargs["eval_gate_m"] = float(d["eval_gate_m"])
    if "detect" in d:
        dd = d["detect"]
        _check_keys(dd, {"tau", "min_cells"}, "detect")
        kwargs["detect"] = DetectParams(tau=float(dd.get("tau", 0.15)),
                                        min_cells=int(dd.get("min_cells", 3)))
    if "tracker" in d:
        td = d["tracker"]
        _check_keys(td, {"min_hits", "max_age", "gate_m", "association", "iou_gate",
                         "warmup_output"}, "tracker")
        kwargs["tracker"] = TrackerParams(
            min_hits=int(td.get("min_hits", 3)),
            max_age=int(td.get("max_age", 2)),
            gate_m=float(td.get("gate_m", 4.0)),
            association=td.get("association", "distance"),
            iou_gate=float(td.get("iou_gate", 0.1)),
            warmup_output=bool(td.get("warmup_output", True)),
        )
    return replace(base, **kwargs)


def load_experiment_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError("config root must be a JSON object")
    return experiment_config_from_dict(data)
