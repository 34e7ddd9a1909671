import math

import numpy as np
import pytest

from cotrack.annotate import (
    CandidateMatch,
    Trajectory,
    build_cooperative_trajectories,
    filter_matches,
    fragment,
    match_and_fuse_frames,
    read_trajectories,
    score_interest,
    trajectory_similarity,
    write_trajectories,
)
from cotrack.errors import UndefinedSimilarityError
from cotrack.geometry import Box3D
from cotrack.scenario import Provenance, ScenarioConfig, TrackedObject, generate_scenario
from cotrack.sensing import View


def box(x, y=0.0, z=0.75, yaw=0.0):
    return Box3D(x=x, y=y, z=z, w=1.8, l=4.5, h=1.5, yaw=yaw)


def tobj(track_id, x, y=0.0, t=0.0, prov=Provenance.VEHICLE_SIDE):
    return TrackedObject(box=box(x, y), track_id=track_id, timestamp=t, provenance=prov)


def traj(track_id, positions, t0=0.0, dt=0.1, prov=Provenance.VEHICLE_SIDE, yaws=None):
    samples = []
    for k, p in enumerate(positions):
        x, y = p if isinstance(p, tuple) else (p, 0.0)
        yaw = yaws[k] if yaws is not None else 0.0
        samples.append((t0 + k * dt, box(x, y, yaw=yaw)))
    return Trajectory(track_id=track_id, samples=tuple(samples), provenance=prov)


class TestMatchAndFuse:
    def test_far_apart_pass_through(self):
        out = match_and_fuse_frames([tobj(1, 0.0)], [tobj(9, 50.0, prov=Provenance.INFRA_SIDE)], 2.0)
        assert len(out) == 2
        assert {o.provenance for o in out} == {Provenance.VEHICLE_SIDE, Provenance.INFRA_SIDE}

    def test_identical_sets_all_fused(self):
        bv = [tobj(1, 0.0), tobj(2, 10.0)]
        bi = [tobj(21, 0.0, prov=Provenance.INFRA_SIDE), tobj(22, 10.0, prov=Provenance.INFRA_SIDE)]
        out = match_and_fuse_frames(bv, bi, 2.0)
        assert all(o.provenance is Provenance.FUSED for o in out)
        assert {(o.source_vehicle_id, o.source_infra_id) for o in out} == {(1, 21), (2, 22)}

    def test_fused_center_is_average(self):
        out = match_and_fuse_frames([tobj(1, 0.0)], [tobj(2, 1.0, prov=Provenance.INFRA_SIDE)], 2.0)
        assert len(out) == 1
        assert out[0].box.x == pytest.approx(0.5)

    def test_crossed_costs_use_optimal_assignment(self):
        # Distance matrix [[1, 2], [2, 4]] (realized in the plane): optimum
        # pairs row 0 with column 1 and row 1 with column 0.
        bv = [tobj(1, 0.0, 0.0), tobj(2, 1.5, 1.9364916731037085)]
        bi = [tobj(11, 1.0, 0.0, prov=Provenance.INFRA_SIDE),
              tobj(12, -2.0, 0.0, prov=Provenance.INFRA_SIDE)]
        out = match_and_fuse_frames(bv, bi, threshold_m=5.0)
        pairs = {(o.source_vehicle_id, o.source_infra_id) for o in out}
        assert pairs == {(1, 12), (2, 11)}


class TestTrajectorySimilarity:
    def test_identical_is_one(self):
        a = traj(1, [0.0, 1.0, 2.0])
        b = traj(2, [0.0, 1.0, 2.0], prov=Provenance.INFRA_SIDE)
        assert trajectory_similarity(a, b) == pytest.approx(1.0)

    def test_constant_two_meter_offset(self):
        a = traj(1, [(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)])
        b = traj(2, [(0.0, 2.0), (1.0, 2.0), (2.0, 2.0)])
        assert trajectory_similarity(a, b) == pytest.approx(math.exp(-1.0))

    def test_diverging_approaches_zero(self):
        a = traj(1, [(k * 1.0, 0.0) for k in range(20)])
        b = traj(2, [(k * 1.0, k * 30.0) for k in range(20)])
        assert trajectory_similarity(a, b) < 1e-3

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        a = traj(1, [tuple(p) for p in rng.uniform(0, 10, (6, 2))])
        b = traj(2, [tuple(p) for p in rng.uniform(0, 10, (6, 2))])
        assert trajectory_similarity(a, b) == pytest.approx(trajectory_similarity(b, a))

    def test_insufficient_overlap_rejected(self):
        a = traj(1, [0.0, 1.0], t0=0.0)
        b = traj(2, [5.0, 6.0], t0=5.0)
        with pytest.raises(UndefinedSimilarityError):
            trajectory_similarity(a, b)


class TestFilterMatches:
    def test_threshold_rule(self):
        ms = [CandidateMatch(1, 2, 1.0), CandidateMatch(3, 4, 0.4), CandidateMatch(5, 6, 0.9)]
        assert filter_matches(ms, 0.5) == [ms[0], ms[2]]
        assert filter_matches(ms, 0.0) == ms
        assert filter_matches([CandidateMatch(1, 2, 0.0)], 0.5) == []


class TestFragment:
    def test_fifteen_second_sequence(self):
        trajs = [traj(1, [float(k) for k in range(151)], dt=0.1)]
        segments = fragment(trajs, window_s=10.0, overlap_s=5.0)
        assert [s.start_s for s in segments] == [0.0, 5.0, 10.0]
        assert [s.full for s in segments] == [True, True, False]

    def test_ten_second_sequence_one_full_segment(self):
        trajs = [traj(1, [float(k) for k in range(101)], dt=0.1)]
        segments = fragment(trajs, window_s=10.0, overlap_s=5.0)
        assert sum(1 for s in segments if s.full) == 1

    def test_empty_input(self):
        assert fragment([], 10.0, 5.0) == []

    def test_every_timestamp_covered_and_overlap_exact(self):
        trajs = [traj(1, [float(k) for k in range(173)], dt=0.1)]
        segments = fragment(trajs, window_s=10.0, overlap_s=5.0)
        covered = set()
        for seg in segments:
            for tr in seg.trajectories:
                covered.update(round(t, 6) for t in tr.times())
        assert covered == {round(0.1 * k, 6) for k in range(173)}
        full = [s for s in segments if s.full]
        for a, b in zip(full, full[1:]):
            assert a.end_s - b.start_s == pytest.approx(5.0)

    def test_bad_window_rejected(self):
        with pytest.raises(ValueError):
            fragment([], window_s=5.0, overlap_s=5.0)


class TestScoreInterest:
    def test_stationary_full_presence(self):
        trajs = traj(1, [5.0] * 101)
        assert score_interest(trajs, window_s=10.0) == pytest.approx(1.0)

    def test_quarter_turn_full_presence(self):
        # Constant speed around a quarter arc: turning pi/2, completion 1.
        n = 101
        yaws = [k * (math.pi / 2) / (n - 1) for k in range(n)]
        radius = 20.0
        positions = [(radius * math.sin(y), radius * (1 - math.cos(y))) for y in yaws]
        t = traj(1, positions, yaws=yaws)
        assert score_interest(t, window_s=10.0) == pytest.approx(math.pi / 2 + 1.0, abs=1e-6)

    def test_half_present_straight_mover(self):
        # Present for 50 of the window's 100 frames, constant speed.
        t = traj(1, [(0.5 * k, 0.0) for k in range(50)])
        assert score_interest(t, window_s=10.0) == pytest.approx(0.5, abs=1e-9)

    def test_speed_change_term(self):
        # 2 m/s for one second, then 6 m/s: max speed change over 1 s is 4.
        positions = [0.0]
        for k in range(10):
            positions.append(positions[-1] + 0.2)
        for k in range(10):
            positions.append(positions[-1] + 0.6)
        t = traj(1, positions)
        score = score_interest(t, window_s=2.0)
        assert score == pytest.approx(4.0 + 1.0, abs=1e-6)

    def test_too_few_samples_rejected(self):
        with pytest.raises(ValueError):
            score_interest(traj(1, [0.0, 1.0]))


class TestCooperativePipeline:
    def _views_from_scenario(self, sigma):
        # Build per-side trajectories from simulator ground truth, with
        # independent position noise imitating annotation error.
        from cotrack.scenario import ground_truth_at

        cfg = ScenarioConfig(duration_s=3.0)
        scn = generate_scenario(cfg, 11)
        rng = np.random.default_rng(99)
        sides = {Provenance.VEHICLE_SIDE: {}, Provenance.INFRA_SIDE: {}}
        for view, prov in ((View.VEHICLE, Provenance.VEHICLE_SIDE),
                           (View.INFRA, Provenance.INFRA_SIDE)):
            for t in scn.frame_times():
                for o in ground_truth_at(scn, t, view):
                    noisy = Box3D(
                        x=o.box.x + rng.normal(0, sigma), y=o.box.y + rng.normal(0, sigma),
                        z=o.box.z, w=o.box.w, l=o.box.l, h=o.box.h, yaw=o.box.yaw,
                    )
                    sides[prov].setdefault(o.track_id, []).append((t, noisy))
        out = {}
        for prov, tracks in sides.items():
            out[prov] = [
                Trajectory(track_id=tid, samples=tuple(samples), provenance=prov)
                for tid, samples in sorted(tracks.items())
                if len(samples) >= 2
            ]
        return out

    def test_recovers_true_cross_view_pairing(self):
        sides = self._views_from_scenario(sigma=0.2)
        coop, _ = build_cooperative_trajectories(
            sides[Provenance.VEHICLE_SIDE], sides[Provenance.INFRA_SIDE],
            match_threshold_m=2.0, similarity_threshold=0.5,
        )
        fused = [tr for tr in coop if tr.provenance is Provenance.FUSED]
        assert fused, "expected at least one fused trajectory"
        for tr in fused:
            v_id, i_id = tr.source_ids
            assert v_id == i_id  # simulator shares agent ids across views

    def test_unmatched_sides_pass_through(self):
        v = [traj(1, [0.0, 1.0, 2.0])]
        i = [traj(9, [(0.0, 80.0), (1.0, 80.0), (2.0, 80.0)], prov=Provenance.INFRA_SIDE)]
        coop, candidates = build_cooperative_trajectories(v, i, 2.0, 0.5)
        assert candidates == []
        assert sorted(tr.provenance.value for tr in coop) == ["infra", "vehicle"]
        assert {tr.source_ids for tr in coop} == {(1, None), (None, 9)}


class TestTrajectoryIO:
    def test_roundtrip(self, tmp_path):
        trajs = [
            traj(1, [0.0, 1.0, 2.0]),
            traj(2, [(5.0, 1.0), (6.0, 1.5)], prov=Provenance.INFRA_SIDE),
        ]
        path = tmp_path / "tracks.jsonl"
        write_trajectories(path, trajs)
        back = read_trajectories(path)
        assert len(back) == 2
        by_id = {tr.track_id: tr for tr in back}
        assert by_id[1].provenance is Provenance.VEHICLE_SIDE
        assert by_id[2].samples[1][1].x == pytest.approx(6.0)
        assert [t for t, _ in by_id[1].samples] == [0.0, 0.1, 0.2]
