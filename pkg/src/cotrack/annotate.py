"""Cross-view trajectory matching, fragmentation, and interest scoring.

These operations run on track files rather than live runs: per-frame boxes
from the two views are matched by gated assignment, candidate pairings are
validated by a trajectory-similarity score, sequences fragment into
overlapping windows, and each trajectory receives an interest score from
its turning, speed-change, and completion behavior.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .assignment import solve_assignment
from .errors import UndefinedSimilarityError
from .geometry import Box3D, Category, center_distance_matrix
from .scenario import Provenance, TrackedObject

SIMILARITY_SCALE_M = 2.0


@dataclass(frozen=True)
class Trajectory:
    """Time-ordered (t, box) samples for one track."""

    track_id: int
    samples: Tuple[Tuple[float, Box3D], ...]
    provenance: Provenance = Provenance.FUSED
    source_ids: Tuple[Optional[int], Optional[int]] = (None, None)

    def __post_init__(self):
        times = [t for t, _ in self.samples]
        if any(b - a <= 0 for a, b in zip(times, times[1:])):
            raise ValueError(f"trajectory {self.track_id} times must strictly increase")

    def times(self) -> List[float]:
        return [t for t, _ in self.samples]

    def box_at(self, t: float) -> Optional[Box3D]:
        for st, box in self.samples:
            if abs(st - t) < 1e-9:
                return box
        return None


@dataclass(frozen=True)
class FusedBox:
    """One frame-level match result with origin bookkeeping."""

    box: Box3D
    timestamp: float
    provenance: Provenance
    source_vehicle_id: Optional[int] = None
    source_infra_id: Optional[int] = None


@dataclass(frozen=True)
class CandidateMatch:
    vehicle_id: int
    infra_id: int
    similarity: float


@dataclass(frozen=True)
class Segment:
    index: int
    start_s: float
    end_s: float
    full: bool
    trajectories: Tuple[Trajectory, ...]


def match_and_fuse_frames(
    boxes_v: Sequence[TrackedObject],
    boxes_i_in_ego: Sequence[TrackedObject],
    threshold_m: float,
) -> List[FusedBox]:
    """Match same-timestamp boxes across views and fuse the matched pairs.

    Matching is minimum-cost assignment on center distance, gated at the
    threshold. A fused box averages the two centers; dims, yaw and category
    come from the vehicle-side member. Unmatched boxes pass through with
    their side provenance.
    """
    cost = center_distance_matrix([o.box for o in boxes_v], [o.box for o in boxes_i_in_ego])
    matched_v: Dict[int, int] = {}
    matched_i = set()
    if len(boxes_v) and len(boxes_i_in_ego):
        for r, c in solve_assignment(cost):
            if cost[r, c] <= threshold_m:
                matched_v[r] = c
                matched_i.add(c)
    out: List[FusedBox] = []
    for r, obj in enumerate(boxes_v):
        if r in matched_v:
            other = boxes_i_in_ego[matched_v[r]]
            box = replace(
                obj.box,
                x=0.5 * (obj.box.x + other.box.x),
                y=0.5 * (obj.box.y + other.box.y),
                z=0.5 * (obj.box.z + other.box.z),
            )
            out.append(FusedBox(box=box, timestamp=obj.timestamp, provenance=Provenance.FUSED,
                                source_vehicle_id=obj.track_id, source_infra_id=other.track_id))
        else:
            out.append(FusedBox(box=obj.box, timestamp=obj.timestamp,
                                provenance=Provenance.VEHICLE_SIDE,
                                source_vehicle_id=obj.track_id))
    for c, obj in enumerate(boxes_i_in_ego):
        if c not in matched_i:
            out.append(FusedBox(box=obj.box, timestamp=obj.timestamp,
                                provenance=Provenance.INFRA_SIDE,
                                source_infra_id=obj.track_id))
    return out


def trajectory_similarity(a: Trajectory, b: Trajectory) -> float:
    """Similarity in [0, 1]: exp(-mean center distance / 2 m) over overlap.

    Identical trajectories score exactly 1; the score decays toward 0 as the
    trajectories diverge. Requires at least two overlapping frames.
    """
    times_b = {round(t, 6): box for t, box in b.samples}
    dists = []
    for t, box in a.samples:
        other = times_b.get(round(t, 6))
        if other is not None:
            dists.append(math.dist((box.x, box.y, box.z), (other.x, other.y, other.z)))
    if len(dists) < 2:
        raise UndefinedSimilarityError(
            f"trajectories {a.track_id} and {b.track_id} overlap on {len(dists)} frames, need >= 2"
        )
    return math.exp(-float(np.mean(dists)) / SIMILARITY_SCALE_M)


def filter_matches(
    matches: Sequence[CandidateMatch], similarity_threshold: float = 0.5
) -> List[CandidateMatch]:
    """Keep candidate pairings whose similarity clears the threshold."""
    return [m for m in matches if m.similarity >= similarity_threshold]


def fragment(
    traj_set: Sequence[Trajectory], window_s: float = 10.0, overlap_s: float = 5.0
) -> List[Segment]:
    """Cut a trajectory set into overlapping windows.

    Segment starts step by (window - overlap) from the earliest timestamp;
    every timestamp of the input is covered by at least one segment.
    Segments reaching past the final timestamp are flagged as partial
    tails. Trajectories clip to the closed window [start, start + window].
    """
    if window_s <= overlap_s or overlap_s < 0:
        raise ValueError("fragment requires window_s > overlap_s >= 0")
    all_times = [t for traj in traj_set for t in traj.times()]
    if not all_times:
        return []
    t0 = min(all_times)
    t_end = max(all_times)
    stride = window_s - overlap_s
    segments: List[Segment] = []
    index = 0
    start = t0
    while start < t_end or (start == t0 and t_end == t0):
        end = start + window_s
        clipped = []
        for traj in traj_set:
            samples = tuple((t, b) for t, b in traj.samples if start <= t <= end)
            if samples:
                clipped.append(replace(traj, samples=samples))
        segments.append(
            Segment(index=index, start_s=start, end_s=end, full=end <= t_end,
                    trajectories=tuple(clipped))
        )
        index += 1
        start = t0 + index * stride
    return segments


@dataclass(frozen=True)
class InterestWeights:
    turning: float = 1.0
    speed_change: float = 1.0
    completion: float = 1.0


def score_interest(
    t: Trajectory,
    window_s: float = 10.0,
    frame_rate_hz: int = 10,
    weights: InterestWeights = InterestWeights(),
) -> float:
    """Interest score: turning + speed change + completion, each weighted.

    Turning is the total absolute yaw change along the track. Speed change
    is the largest absolute speed difference across a one-second gap, with
    speeds taken from finite differences of the centers. Completion is the
    fraction of window frames the track is present, capped at 1.
    """
    if len(t.samples) < 3:
        raise ValueError(f"interest score needs >= 3 samples, got {len(t.samples)}")
    times = np.array([s for s, _ in t.samples])
    yaws = np.unwrap(np.array([b.yaw for _, b in t.samples]))
    turning = float(np.abs(np.diff(yaws)).sum())

    centers = np.array([[b.x, b.y] for _, b in t.samples])
    step = np.linalg.norm(np.diff(centers, axis=0), axis=1)
    speeds = step / np.diff(times)
    lag = min(frame_rate_hz, len(speeds) - 1)
    if lag >= 1:
        speed_change = float(np.abs(speeds[lag:] - speeds[:-lag]).max())
    else:
        speed_change = 0.0

    expected_frames = int(round(window_s * frame_rate_hz))
    completion = min(1.0, len(t.samples) / expected_frames)

    return (weights.turning * turning + weights.speed_change * speed_change
            + weights.completion * completion)


def build_cooperative_trajectories(
    vehicle_trajs: Sequence[Trajectory],
    infra_trajs: Sequence[Trajectory],
    match_threshold_m: float = 2.0,
    similarity_threshold: float = 0.5,
) -> Tuple[List[Trajectory], List[CandidateMatch]]:
    """Pair up cross-view trajectories and emit fused cooperative tracks.

    Candidate pairs come from frame-level gated matching; pairs scoring
    below the similarity threshold are discarded outright. Surviving
    candidates resolve one-to-one by assignment on (1 - similarity). Fused
    samples average the two centers on shared frames and pass single-side
    samples through. Unpaired trajectories are re-emitted with their own
    provenance. Cooperative ids are assigned sequentially from 1.
    """
    v_by_id = {tr.track_id: tr for tr in vehicle_trajs}
    i_by_id = {tr.track_id: tr for tr in infra_trajs}

    times = sorted({round(t, 6) for tr in list(vehicle_trajs) + list(infra_trajs) for t in tr.times()})
    pair_frames: Dict[Tuple[int, int], int] = {}
    for t in times:
        bv = [TrackedObject(box=tr.box_at(t), track_id=tr.track_id, timestamp=t,
                            provenance=Provenance.VEHICLE_SIDE)
              for tr in vehicle_trajs if tr.box_at(t) is not None]
        bi = [TrackedObject(box=tr.box_at(t), track_id=tr.track_id, timestamp=t,
                            provenance=Provenance.INFRA_SIDE)
              for tr in infra_trajs if tr.box_at(t) is not None]
        for fused in match_and_fuse_frames(bv, bi, match_threshold_m):
            if fused.provenance is Provenance.FUSED:
                key = (fused.source_vehicle_id, fused.source_infra_id)
                pair_frames[key] = pair_frames.get(key, 0) + 1

    candidates: List[CandidateMatch] = []
    for (vid, iid), _ in sorted(pair_frames.items()):
        try:
            sim = trajectory_similarity(v_by_id[vid], i_by_id[iid])
        except UndefinedSimilarityError:
            continue
        candidates.append(CandidateMatch(vehicle_id=vid, infra_id=iid, similarity=sim))
    kept = filter_matches(candidates, similarity_threshold)

    accepted: List[CandidateMatch] = []
    if kept:
        v_ids = sorted({m.vehicle_id for m in kept})
        i_ids = sorted({m.infra_id for m in kept})
        sim = {(m.vehicle_id, m.infra_id): m.similarity for m in kept}
        cost = np.full((len(v_ids), len(i_ids)), 2.0)
        for (vid, iid), s in sim.items():
            cost[v_ids.index(vid), i_ids.index(iid)] = 1.0 - s
        for r, c in solve_assignment(cost):
            pair = (v_ids[r], i_ids[c])
            if pair in sim:
                accepted.append(CandidateMatch(pair[0], pair[1], sim[pair]))

    matched_v = {m.vehicle_id for m in accepted}
    matched_i = {m.infra_id for m in accepted}
    out: List[Trajectory] = []
    next_id = 1
    for m in sorted(accepted, key=lambda c: c.vehicle_id):
        out.append(_fuse_pair(v_by_id[m.vehicle_id], i_by_id[m.infra_id], next_id))
        next_id += 1
    for tr in vehicle_trajs:
        if tr.track_id not in matched_v:
            out.append(replace(tr, track_id=next_id, source_ids=(tr.track_id, None)))
            next_id += 1
    for tr in infra_trajs:
        if tr.track_id not in matched_i:
            out.append(replace(tr, track_id=next_id, source_ids=(None, tr.track_id)))
            next_id += 1
    return out, candidates


def _fuse_pair(v: Trajectory, i: Trajectory, coop_id: int) -> Trajectory:
    i_by_t = {round(t, 6): b for t, b in i.samples}
    v_times = {round(t, 6) for t, _ in v.samples}
    samples: List[Tuple[float, Box3D]] = []
    for t, box in v.samples:
        other = i_by_t.get(round(t, 6))
        if other is None:
            samples.append((t, box))
        else:
            samples.append((t, replace(box,
                                       x=0.5 * (box.x + other.x),
                                       y=0.5 * (box.y + other.y),
                                       z=0.5 * (box.z + other.z))))
    for t, box in i.samples:
        if round(t, 6) not in v_times:
            samples.append((t, box))
    samples.sort(key=lambda s: s[0])
    return Trajectory(track_id=coop_id, samples=tuple(samples), provenance=Provenance.FUSED,
                      source_ids=(v.track_id, i.track_id))


# ---------------------------------------------------------------------------
# JSON-lines track files: one record per (track_id, t) with the box fields.

def _box_to_dict(b: Box3D) -> dict:
    return {"x": b.x, "y": b.y, "z": b.z, "w": b.w, "l": b.l, "h": b.h,
            "yaw": b.yaw, "category": b.category.value}


def _box_from_dict(d: dict) -> Box3D:
    return Box3D(x=d["x"], y=d["y"], z=d["z"], w=d["w"], l=d["l"], h=d["h"],
                 yaw=d.get("yaw", 0.0), category=Category(d.get("category", "car")))


def write_trajectories(path, trajectories: Iterable[Trajectory]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tr in trajectories:
            for t, box in tr.samples:
                fh.write(json.dumps({
                    "t": t,
                    "track_id": tr.track_id,
                    "box": _box_to_dict(box),
                    "provenance": tr.provenance.value,
                    "source_ids": list(tr.source_ids),
                }) + "\n")


def read_trajectories(path) -> List[Trajectory]:
    """Group a JSON-lines track file into time-sorted trajectories."""
    rows: Dict[Tuple[int, str], List[dict]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            key = (int(rec["track_id"]), rec.get("provenance", "fused"))
            rows.setdefault(key, []).append(rec)
    out = []
    for (track_id, prov), recs in sorted(rows.items()):
        recs.sort(key=lambda r: r["t"])
        src = recs[0].get("source_ids") or [None, None]
        out.append(Trajectory(
            track_id=track_id,
            samples=tuple((float(r["t"]), _box_from_dict(r["box"])) for r in recs),
            provenance=Provenance(prov),
            source_ids=(src[0], src[1]),
        ))
    return out


def write_tracked_objects(path, frames: Iterable[Sequence[TrackedObject]]) -> None:
    """Stream per-frame tracker output as JSON lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for frame in frames:
            for o in frame:
                fh.write(json.dumps({
                    "t": o.timestamp,
                    "track_id": o.track_id,
                    "box": _box_to_dict(o.box),
                    "score": o.score,
                    "provenance": o.provenance.value,
                }) + "\n")


def read_tracked_objects(path) -> Dict[float, List[TrackedObject]]:
    """Load a JSON-lines track file grouped by timestamp."""
    frames: Dict[float, List[TrackedObject]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            t = round(float(rec["t"]), 6)
            frames.setdefault(t, []).append(TrackedObject(
                box=_box_from_dict(rec["box"]),
                track_id=int(rec["track_id"]),
                timestamp=t,
                provenance=Provenance(rec.get("provenance", "fused")),
                score=float(rec.get("score", 1.0)),
            ))
    return frames
