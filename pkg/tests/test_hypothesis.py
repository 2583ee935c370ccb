import math

import numpy as np
import pytest

from roadcal.errors import InputError, NoOverlapError
from roadcal.geometry import camera_center, look_at_extrinsic, project
from roadcal.hypothesis import (
    Hypothesis,
    LocalizationSample,
    PrefilterParams,
    RejectionReason,
    build_hypothesis,
    prefilter_camera_pose,
    synchronize,
)
from roadcal.pnp import RansacParams
from roadcal.tracking import BoundingBox, Detection, ObjectTrack


def make_log(times, positions, yaws=None):
    yaws = yaws if yaws is not None else np.zeros(len(times))
    return [
        LocalizationSample(t, np.asarray(p, dtype=float), 0.0, 0.0, y)
        for t, p, y in zip(times, positions, yaws)
    ]


def make_track(times, boxes, track_id=0):
    return ObjectTrack(track_id, [Detection(t, b) for t, b in zip(times, boxes)])


ANCHOR = np.array([5.0e5, 5.4e6, 300.0])


def curved_scene(intr, n=40):
    """Camera over a gently curving path, boxes centered on the vehicle."""
    extr = look_at_extrinsic([0.0, -20.0, 8.0], [0.0, 10.0, 0.0], anchor=ANCHOR)
    xs = np.linspace(-18.0, 18.0, n)
    path = np.column_stack([xs, 0.02 * xs**2, np.zeros(n)])
    times = np.arange(n) * 0.1
    pixels = project(intr, extr, path)
    boxes = [BoundingBox(u, v, 60.0, 40.0) for u, v in pixels]
    log_times = np.arange(0.0, times[-1] + 0.02, 0.02)
    log_path = np.column_stack(
        [
            np.interp(log_times, times, path[:, 0]),
            np.interp(log_times, times, path[:, 1]),
            np.zeros(len(log_times)),
        ]
    )
    log = make_log(log_times, log_path + ANCHOR)
    track = make_track(times, boxes)
    return extr, track, log


class TestSynchronize:
    def test_exact_timestamps_returned_verbatim(self):
        times = [0.0, 1.0, 2.0]
        log = make_log(times, [(0, 0, 0), (1, 0, 0), (2, 0, 0)])
        track = make_track(times, [BoundingBox(10, 10, 5, 5)] * 3)
        pairs = synchronize(track, log, tol=0.1)
        assert len(pairs) == 3
        for (sample, _), ref in zip(pairs, log):
            assert sample is ref

    def test_midpoint_interpolation(self):
        log = make_log([0.0, 1.0], [(0, 0, 0), (1, 0, 0)])
        track = make_track([0.5], [BoundingBox(10, 10, 5, 5)])
        pairs = synchronize(track, log, tol=1.0)
        assert np.allclose(pairs[0][0].position, [0.5, 0.0, 0.0])

    def test_yaw_wraps_through_pi(self):
        log = make_log(
            [0.0, 1.0],
            [(0, 0, 0), (1, 0, 0)],
            yaws=[math.radians(175.0), math.radians(-175.0)],
        )
        track = make_track([0.5], [BoundingBox(10, 10, 5, 5)])
        pairs = synchronize(track, log, tol=1.0)
        assert abs(abs(pairs[0][0].yaw) - math.pi) < 1e-12

    def test_detections_outside_span_dropped(self):
        log = make_log([1.0, 2.0], [(0, 0, 0), (1, 0, 0)])
        track = make_track([0.5, 1.5, 2.5], [BoundingBox(10, 10, 5, 5)] * 3)
        pairs = synchronize(track, log, tol=1.0)
        assert len(pairs) == 1
        assert pairs[0][0].timestamp == 1.5

    def test_no_overlap_raises(self):
        log = make_log([10.0, 11.0], [(0, 0, 0), (1, 0, 0)])
        track = make_track([0.0, 1.0], [BoundingBox(10, 10, 5, 5)] * 2)
        with pytest.raises(NoOverlapError):
            synchronize(track, log, tol=0.1)

    def test_gap_larger_than_tolerance_dropped(self):
        log = make_log([0.0, 10.0], [(0, 0, 0), (10, 0, 0)])
        track = make_track([5.0], [BoundingBox(10, 10, 5, 5)])
        with pytest.raises(NoOverlapError):
            synchronize(track, log, tol=0.1)

    def test_non_monotonic_log_rejected(self):
        log = make_log([0.0, 0.0], [(0, 0, 0), (1, 0, 0)])
        track = make_track([0.0], [BoundingBox(10, 10, 5, 5)])
        with pytest.raises(InputError):
            synchronize(track, log, tol=0.1)

    def test_output_is_time_ordered_subset(self, intr):
        _, track, log = curved_scene(intr)
        pairs = synchronize(track, log, tol=0.1)
        ts = [s.timestamp for s, _ in pairs]
        det_ts = [d.timestamp for d in track.detections]
        assert ts == sorted(ts)
        assert set(ts) <= set(det_ts)


class TestBuildHypothesis:
    def test_target_track_accepted(self, intr):
        extr, track, log = curved_scene(intr)
        got = build_hypothesis(track, log, intr, ANCHOR, RansacParams(rng_seed=5))
        assert isinstance(got, Hypothesis)
        assert got.median_reproj_px < 1e-6
        d = np.linalg.norm(camera_center(got.calib) - camera_center(extr))
        assert d < 0.1

    def test_parked_calibration_vehicle_rejected_3d(self, intr):
        _, track, log = curved_scene(intr)
        static = [
            LocalizationSample(s.timestamp, log[0].position, 0.0, 0.0, 0.0) for s in log
        ]
        got = build_hypothesis(track, static, intr, ANCHOR)
        assert got is RejectionReason.TRACK_TOO_SHORT_3D

    def test_three_pairs_rejected(self, intr):
        _, track, log = curved_scene(intr)
        short = ObjectTrack(track.id, track.detections[:3])
        got = build_hypothesis(short, log, intr, ANCHOR)
        assert got is RejectionReason.TOO_FEW_PAIRS

    def test_static_box_rejected_2d(self, intr):
        _, track, log = curved_scene(intr)
        frozen = ObjectTrack(
            track.id,
            [Detection(d.timestamp, BoundingBox(500.0, 400.0, 60, 40)) for d in track.detections],
        )
        got = build_hypothesis(frozen, log, intr, ANCHOR)
        assert got is RejectionReason.TRACK_TOO_SHORT_2D

    def test_garbled_pixels_rejected(self, intr):
        _, track, log = curved_scene(intr)
        rng = np.random.default_rng(11)
        noisy = ObjectTrack(
            track.id,
            [
                Detection(
                    d.timestamp,
                    BoundingBox(rng.uniform(0, 1920), rng.uniform(0, 1200), 60, 40),
                )
                for d in track.detections
            ],
        )
        got = build_hypothesis(noisy, log, intr, ANCHOR, RansacParams(rng_seed=7))
        assert got in (
            RejectionReason.NO_CONSENSUS,
            RejectionReason.REPROJECTION_TOO_HIGH,
            RejectionReason.CAMERA_TOO_FAR,
            RejectionReason.CAMERA_BELOW_GROUND,
        )

    def test_every_track_yields_single_outcome(self, intr):
        _, track, log = curved_scene(intr)
        got = build_hypothesis(track, log, intr, ANCHOR, RansacParams(rng_seed=5))
        assert isinstance(got, (Hypothesis, RejectionReason))


class TestPrefilterCameraPose:
    def pairs_along_x(self):
        xs = np.linspace(0.0, 30.0, 16)
        return [
            (
                LocalizationSample(0.1 * i, np.array([x, 0.0, 0.0]), 0.0, 0.0, 0.0),
                BoundingBox(100 + i, 100, 10, 10),
            )
            for i, x in enumerate(xs)
        ]

    def make_calib(self, cam_pos):
        return look_at_extrinsic(cam_pos, [15.0, 0.0, 0.0])

    def test_nearby_elevated_camera_passes(self):
        calib = self.make_calib([15.0, -5.0, 8.0])
        pf = PrefilterParams(d_thr_m=10.0)
        assert prefilter_camera_pose(calib, self.pairs_along_x(), pf) is None

    def test_far_camera_rejected(self):
        calib = self.make_calib([15.0, -50.0, 8.0])
        pf = PrefilterParams(d_thr_m=30.0)
        got = prefilter_camera_pose(calib, self.pairs_along_x(), pf)
        assert got is RejectionReason.CAMERA_TOO_FAR

    def test_camera_below_ground_rejected(self):
        calib = self.make_calib([15.0, -5.0, -2.0])
        pf = PrefilterParams(d_thr_m=30.0)
        got = prefilter_camera_pose(calib, self.pairs_along_x(), pf)
        assert got is RejectionReason.CAMERA_BELOW_GROUND

    def test_distance_uses_polyline_not_vertices(self):
        # camera next to a segment midpoint, far from both endpoints
        pairs = [
            (
                LocalizationSample(0.0, np.array([-50.0, 0.0, 0.0]), 0, 0, 0),
                BoundingBox(10, 10, 5, 5),
            ),
            (
                LocalizationSample(1.0, np.array([50.0, 0.0, 0.0]), 0, 0, 0),
                BoundingBox(20, 10, 5, 5),
            ),
        ]
        calib = self.make_calib([0.0, -8.0, 6.0])
        assert prefilter_camera_pose(calib, pairs, PrefilterParams(d_thr_m=11.0)) is None


class TestMonotonicity:
    def test_tightening_bounds_never_accepts_a_rejected_track(self, intr):
        _, track, log = curved_scene(intr)
        loose = PrefilterParams()
        tight = PrefilterParams(
            min_pairs=8,
            min_extent_2d_px=100.0,
            min_extent_3d_m=10.0,
            max_median_reproj_px=5.0,
            d_thr_m=10.0,
        )
        ransac = RansacParams(rng_seed=5)
        tracks = [
            track,
            ObjectTrack(1, track.detections[:3]),
            ObjectTrack(
                2,
                [
                    Detection(d.timestamp, BoundingBox(500.0, 400.0, 60, 40))
                    for d in track.detections
                ],
            ),
        ]
        for tr in tracks:
            loose_out = build_hypothesis(tr, log, intr, ANCHOR, ransac, loose)
            tight_out = build_hypothesis(tr, log, intr, ANCHOR, ransac, tight)
            if isinstance(loose_out, RejectionReason):
                assert isinstance(tight_out, RejectionReason)
