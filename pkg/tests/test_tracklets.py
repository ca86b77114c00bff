"""Tracklet generation tests: the bipartite assignment solver against a
brute-force oracle, Kalman filter algebra, the overlap split rule, the
minimum-length filter, and whole-pipeline invariants on simulated games."""

import itertools

import numpy as np
import pytest

from teamtrack import kalman
from teamtrack.assignment import FORBIDDEN, assignment_cost, hungarian_assign
from teamtrack.config import ProjectConfig
from teamtrack.core import BoundingBox, Detection, iou
from teamtrack.simulate import (SimConfig, dominant_gt_identity,
                                ground_truth_segments, simulate)
from teamtrack.tracklets import generate_tracklets, mean_length


def brute_force_min(cost):
    """Most finite pairs, then minimum total cost, over every injective
    row-column assignment; enumerates the smaller side's permutations."""
    n, m = cost.shape
    if n > m:
        cost = cost.T
        n, m = m, n
    best = None
    rows = range(n)
    for cols in itertools.permutations(range(m), n):
        chosen = [(r, c) for r, c in zip(rows, cols) if np.isfinite(cost[r, c])]
        total = sum(cost[r, c] for r, c in chosen)
        key = (-len(chosen), total)
        if best is None or key < best:
            best = key
    return best


class TestHungarian:
    def test_identity_matrix_prefers_zero_diagonal(self):
        assert hungarian_assign(np.array([[0.0, 1.0], [1.0, 0.0]])) == [(0, 0), (1, 1)]

    def test_off_diagonal_optimum(self):
        # diagonal costs 5, anti-diagonal 4
        cost = np.array([[1.0, 2.0], [2.0, 4.0]])
        pairs = hungarian_assign(cost)
        assert pairs == [(0, 1), (1, 0)]
        assert assignment_cost(cost, pairs) == 4.0

    def test_matches_brute_force_on_random_matrices(self):
        # the load-bearing oracle: exhaustive permutation minimum
        rng = np.random.default_rng(42)
        for trial in range(1000):
            n = int(rng.integers(1, 8))
            m = int(rng.integers(1, 8))
            cost = rng.uniform(0.0, 10.0, size=(n, m))
            if rng.random() < 0.5:
                mask = rng.random((n, m)) < 0.3
                cost[mask] = FORBIDDEN
            pairs = hungarian_assign(cost)
            got = (-len(pairs), assignment_cost(cost, pairs))
            want = brute_force_min(cost)
            assert got[0] == want[0], f"trial {trial}: pair count"
            assert got[1] == pytest.approx(want[1], abs=1e-9), f"trial {trial}"

    def test_forbidden_pairs_never_matched(self):
        cost = np.array([[FORBIDDEN, 1.0], [FORBIDDEN, FORBIDDEN]])
        assert hungarian_assign(cost) == [(0, 1)]

    def test_all_forbidden_gives_empty(self):
        assert hungarian_assign(np.full((3, 3), FORBIDDEN)) == []

    def test_empty_matrix(self):
        assert hungarian_assign(np.zeros((0, 4))) == []

    def test_rectangular_assigns_min_dimension(self):
        pairs = hungarian_assign(np.arange(12, dtype=float).reshape(3, 4))
        assert len(pairs) == 3


class TestKalman:
    def box(self, cx, cy, w, h):
        return BoundingBox(cx - w / 2.0, cy - h / 2.0, w, h)

    def test_predict_extrapolates_velocity(self):
        state = kalman.TrackState(
            np.array([10.0, 5.0, 4.0, 8.0, 2.0, -1.0, 0.0, 0.0]),
            np.eye(8),
        )
        out = kalman.kalman_predict(state)
        assert out.mean[:4] == pytest.approx([12.0, 4.0, 4.0, 8.0])

    def test_predict_zero_velocity_keeps_position(self):
        state = kalman.initiate(self.box(30.0, 40.0, 6.0, 12.0))
        out = kalman.kalman_predict(state)
        assert out.mean[:4] == pytest.approx([30.0, 40.0, 6.0, 12.0])

    def test_two_predicts_advance_twice(self):
        mean = np.zeros(8)
        mean[2:4] = 4.0
        mean[4] = 1.0  # vx
        state = kalman.TrackState(mean, np.eye(8))
        out = kalman.kalman_predict(kalman.kalman_predict(state))
        assert out.mean[0] == pytest.approx(2.0)

    def test_update_with_tiny_noise_snaps_to_measurement(self):
        state = kalman.initiate(self.box(0.0, 0.0, 10.0, 10.0))
        z = self.box(3.0, -2.0, 12.0, 9.0)
        out = kalman.kalman_update(state, z, measurement_var=np.full(4, 1e-12))
        assert out.mean[:4] == pytest.approx([3.0, -2.0, 12.0, 9.0], abs=1e-6)

    def test_update_with_zero_innovation_keeps_mean(self):
        state = kalman.initiate(self.box(5.0, 5.0, 10.0, 10.0))
        out = kalman.kalman_update(state, self.box(5.0, 5.0, 10.0, 10.0))
        assert out.mean[:4] == pytest.approx([5.0, 5.0, 10.0, 10.0])

    def test_scalar_gain_analogue(self):
        # P = R on one component -> posterior mean halves the innovation
        mean = np.array([0.0, 0.0, 10.0, 10.0, 0.0, 0.0, 0.0, 0.0])
        state = kalman.TrackState(mean, np.eye(8))
        z = self.box(2.0, 0.0, 10.0, 10.0)
        out = kalman.kalman_update(state, z, measurement_var=np.ones(4))
        assert out.mean[0] == pytest.approx(1.0)

    def test_covariance_stays_symmetric(self):
        state = kalman.initiate(self.box(0.0, 0.0, 8.0, 8.0))
        for _ in range(50):
            state = kalman.kalman_predict(state)
            state = kalman.kalman_update(state, self.box(1.0, 1.0, 8.0, 8.0))
        assert np.allclose(state.covariance, state.covariance.T, atol=1e-9)

    def test_rejects_nonpositive_size(self):
        with pytest.raises(ValueError):
            kalman.TrackState(np.zeros(8), np.eye(8))


def det(frame, left, top, w=10.0, h=10.0, conf=0.95):
    return Detection(frame, BoundingBox(left, top, w, h), conf, 0)


def config(**overrides):
    base = dict(n_players=7)
    base.update(overrides)
    if base.get("min_track_len", 10) < 10:
        base.setdefault("samples_per_track", base["min_track_len"])
    return ProjectConfig(**base)


class TestGenerateTracklets:
    def test_single_moving_box_is_one_tracklet(self):
        dets = [det(f, 5.0 + 2.0 * f, 20.0) for f in range(20)]
        out = generate_tracklets(dets, config())
        assert len(out) == 1
        assert len(out[0]) == 20
        assert [d.frame for d in out[0].detections] == list(range(20))

    def test_two_distant_boxes_are_two_tracklets(self):
        dets = []
        for f in range(15):
            dets.append(det(f, 0.0, 0.0))
            dets.append(det(f, 200.0, 200.0))
        out = generate_tracklets(dets, config())
        assert len(out) == 2
        assert all(len(t) == 15 for t in out)

    def crossing(self, frames):
        # opposing tracks at 5 px/frame coincide exactly once, at frame 23
        dets = []
        for f in range(frames):
            dets.append(det(f, 5.0 * f, 0.0))            # rightward
            dets.append(det(f, 230.0 - 5.0 * f, 0.0))    # leftward
        return dets

    def test_crossing_tracks_split_when_overlap_crosses_threshold(self):
        # both tracks cut at the one frame their detected boxes coincide;
        # the single-detection stubs left at the cut frame restart there
        out = generate_tracklets(self.crossing(40), config(min_track_len=2))
        assert len(out) == 4
        assert sorted(t.end_frame for t in out)[:2] == [22, 22]
        assert sorted(t.start_frame for t in out)[2:] == [23, 23]

    def test_split_pieces_shorter_than_min_are_dropped(self):
        out = generate_tracklets(self.crossing(30), config(min_track_len=10))
        # the 7-frame pieces after the crossing disappear
        assert len(out) == 2
        assert all(t.end_frame == 22 for t in out)

    def test_short_track_filtered_by_min_length(self):
        dets = [det(f, 0.0, 0.0) for f in range(9)]
        assert generate_tracklets(dets, config(min_track_len=10)) == []
        ten = [det(f, 0.0, 0.0) for f in range(10)]
        assert len(generate_tracklets(ten, config(min_track_len=10))) == 1

    def test_missed_frame_terminates_track(self):
        dets = [det(f, 0.0, 0.0) for f in range(30) if f != 14]
        out = generate_tracklets(dets, config(min_track_len=10))
        assert sorted((t.start_frame, t.end_frame) for t in out) == [(0, 13), (15, 29)]

    def test_low_confidence_detections_ignored(self):
        dets = [det(f, 0.0, 0.0, conf=0.2 if f >= 10 else 0.9) for f in range(20)]
        out = generate_tracklets(dets, config(min_confidence=0.5))
        assert len(out) == 1
        assert out[0].end_frame == 9

    def test_jump_beyond_gate_starts_new_track(self):
        dets = [det(f, 0.0, 0.0) for f in range(12)]
        dets += [det(f, 100.0, 0.0) for f in range(12, 24)]
        out = generate_tracklets(dets, config())
        assert sorted((t.start_frame, t.end_frame) for t in out) == [(0, 11), (12, 23)]

    def test_deterministic(self):
        rng = np.random.default_rng(7)
        dets = []
        for f in range(60):
            for k in range(4):
                dets.append(det(f, 50.0 * k + float(rng.uniform(-2, 2)), 30.0))
        a = generate_tracklets(dets, config())
        b = generate_tracklets(dets, config())
        assert [t.detections for t in a] == [t.detections for t in b]

    def test_mean_length(self):
        dets = [det(f, 0.0, 0.0) for f in range(20)]
        out = generate_tracklets(dets, config())
        assert mean_length(out) == 20.0
        assert mean_length([]) == 0.0


class TestSimulatedGameInvariants:
    def check_invariants(self, tracklets, cfg):
        seen = set()
        for t in tracklets:
            assert len(t) >= cfg.min_track_len
            frames = [d.frame for d in t.detections]
            assert frames == list(range(frames[0], frames[-1] + 1))
            for d in t.detections:
                key = (d.frame, d.embedding_row)
                assert key not in seen, "detection reused across tracklets"
                seen.add(key)
        # co-occurring boxes stay below the split threshold except at starts
        by_frame = {}
        for t in tracklets:
            for d in t.detections:
                by_frame.setdefault(d.frame, []).append((t, d))
        for frame, rows in by_frame.items():
            for (ta, da), (tb, db) in itertools.combinations(rows, 2):
                if frame in (ta.start_frame, tb.start_frame):
                    continue
                assert iou(da.box, db.box) < cfg.split_iou

    @pytest.mark.parametrize("seed", range(20))
    def test_invariants_hold_across_seeds(self, seed, tmp_path):
        sim = SimConfig(n_players=3, n_distractors=1, frames=260, seed=seed)
        result = simulate(sim, tmp_path / f"game{seed}")
        from teamtrack.project import Project
        project = Project(result.out_dir)
        dets = project.detections()
        tracklets = generate_tracklets(dets, project.config)
        assert tracklets, "simulation produced no tracklets"
        self.check_invariants(tracklets, project.config)

    def test_occlusion_free_lanes_give_pure_segment_tracklets(self, tmp_path):
        # agents confined to disjoint lanes never overlap, so tracklets must
        # reproduce the ground-truth visibility segments exactly
        sim = SimConfig(n_players=4, n_distractors=2, frames=600, lanes=True,
                        drop_probability=0.0, jitter_sigma=0.4, seed=3)
        result = simulate(sim, tmp_path / "lanes")
        from teamtrack.project import Project
        project = Project(result.out_dir)
        dets = project.detections()
        records = project.ground_truth()
        tracklets = generate_tracklets(dets, project.config)
        segments = ground_truth_segments(records, project.config.min_track_len)
        assert len(tracklets) == len(segments)
        gt_by_frame = {}
        for frame, identity, box in records:
            gt_by_frame.setdefault(frame, []).append((identity, box))
        for t in tracklets:
            identities = set()
            for d in t.detections:
                scored = [(iou(d.box, box), identity)
                          for identity, box in gt_by_frame.get(d.frame, [])]
                overlap, best = max(scored)
                assert overlap >= 0.5, "detection strayed from every gt box"
                identities.add(best)
            assert len(identities) == 1, f"tracklet {t.id} mixes {identities}"

    def test_tracklets_deterministic_from_project(self, tmp_path):
        sim = SimConfig(n_players=3, n_distractors=0, frames=200, seed=9)
        result = simulate(sim, tmp_path / "det")
        from teamtrack.project import Project
        project = Project(result.out_dir)
        dets = project.detections()
        a = generate_tracklets(dets, project.config)
        b = generate_tracklets(dets, project.config)
        assert a == b
