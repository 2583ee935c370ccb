import math

import numpy as np
import pytest

from roadcal.errors import (
    DegenerateGeometryError,
    InsufficientDataError,
    InsufficientTraversalsError,
)
from roadcal.geometry import (
    ExtrinsicCalibration,
    GroundPlane,
    backproject_to_plane,
    camera_center,
    look_at_extrinsic,
    project,
    rotation_angle_deg,
    so3_exp,
)
from roadcal.grouping import HypothesisGroup
from roadcal.hypothesis import Hypothesis, LocalizationSample
from roadcal.refinement import (
    RegistrationParams,
    RefinedPair,
    VehicleDims,
    delta_p,
    delta_p_values,
    evaluate,
    fit_ground_plane,
    merge_and_select,
    refine_correspondences,
    register,
    vehicle_footprint,
)
from roadcal.tracking import BoundingBox

DIMS = VehicleDims(length=4.4, width=1.8, height=1.5)


def make_sample(t, pos, yaw=0.0):
    return LocalizationSample(t, np.asarray(pos, dtype=float), 0.0, 0.0, yaw)


def hull_box(intr, extr, sample, dims, jitter=None):
    """Bounding box as the image hull of the 8 vehicle box corners."""
    ground = vehicle_footprint(sample, dims, extr.anchor)
    roof = ground + np.array([0.0, 0.0, dims.height])
    px = project(intr, extr, np.vstack([ground, roof]))
    u_min, v_min = px.min(axis=0)
    u_max, v_max = px.max(axis=0)
    if jitter is not None:
        u_min, v_min = u_min + jitter[0], v_min + jitter[1]
        u_max, v_max = u_max + jitter[2], v_max + jitter[3]
    return BoundingBox(
        (u_min + u_max) / 2, (v_min + v_max) / 2, u_max - u_min, v_max - v_min
    )


def synthetic_hypothesis(intr, extr, track_id=0, n=30, x_span=(-18.0, 18.0),
                         lateral=0.0, jitter_rng=None, jitter_px=0.0):
    xs = np.linspace(*x_span, n)
    ys = 0.03 * xs**2 + lateral
    yaws = np.arctan2(np.gradient(ys), np.gradient(xs))
    pairs = []
    for k, (x, y, yaw) in enumerate(zip(xs, ys, yaws)):
        sample = make_sample(0.1 * k, [x, y, 0.0], yaw)
        jitter = (
            jitter_rng.normal(0.0, jitter_px, size=4) if jitter_rng is not None else None
        )
        pairs.append((sample, hull_box(intr, extr, sample, DIMS, jitter)))
    return Hypothesis(track_id=track_id, pairs=pairs, calib=extr, median_reproj_px=0.0)


@pytest.fixture
def cam(intr):
    return look_at_extrinsic([0.0, -22.0, 8.0], [0.0, 10.0, 0.0])


@pytest.fixture
def flat_plane():
    return GroundPlane(np.zeros(3), np.array([0.0, 0.0, 1.0]))


class TestFitGroundPlane:
    def test_flat_scatter(self):
        rng = np.random.default_rng(137)
        pts = np.column_stack(
            [rng.uniform(-30, 30, 40), rng.uniform(-30, 30, 40), np.zeros(40)]
        )
        samples = [make_sample(0.1 * k, p) for k, p in enumerate(pts)]
        plane = fit_ground_plane(samples, np.zeros(3))
        assert np.allclose(plane.normal, [0, 0, 1], atol=1e-9)
        assert np.allclose(plane.point, pts.mean(axis=0), atol=1e-9)

    def test_tilted_plane_normal(self):
        rng = np.random.default_rng(139)
        xy = np.column_stack([rng.uniform(-30, 30, 60), rng.uniform(-30, 30, 60)])
        pts = np.column_stack([xy, 0.1 * xy[:, 0]])
        samples = [make_sample(0.1 * k, p) for k, p in enumerate(pts)]
        plane = fit_ground_plane(samples, np.zeros(3))
        expected = np.array([-0.1, 0.0, 1.0]) / np.linalg.norm([-0.1, 0.0, 1.0])
        angle = math.degrees(
            math.acos(min(1.0, abs(float(plane.normal @ expected))))
        )
        assert angle < 0.01

    def test_straight_line_rejected(self):
        samples = [make_sample(0.1 * k, [k * 1.0, 0.0, 0.0]) for k in range(20)]
        with pytest.raises(DegenerateGeometryError):
            fit_ground_plane(samples, np.zeros(3))

    def test_plane_fit_idempotent(self):
        rng = np.random.default_rng(149)
        xy = np.column_stack([rng.uniform(-20, 20, 30), rng.uniform(-20, 20, 30)])
        pts = np.column_stack([xy, 0.05 * xy[:, 0] - 0.02 * xy[:, 1]])
        samples = [make_sample(0.1 * k, p) for k, p in enumerate(pts)]
        plane1 = fit_ground_plane(samples, np.zeros(3))
        heights = plane1.height_of(pts)
        assert np.max(np.abs(heights)) < 1e-9


class TestVehicleFootprint:
    def test_axis_aligned(self):
        corners = vehicle_footprint(
            make_sample(0.0, [0, 0, 0], yaw=0.0), VehicleDims(4, 2, 1.5), np.zeros(3)
        )
        assert np.allclose(
            corners[:, :2], [[2, 1], [2, -1], [-2, -1], [-2, 1]], atol=1e-12
        )
        assert np.allclose(corners[:, 2], 0.0)

    def test_quarter_turn(self):
        corners = vehicle_footprint(
            make_sample(0.0, [0, 0, 0], yaw=math.pi / 2),
            VehicleDims(4, 2, 1.5),
            np.zeros(3),
        )
        assert np.allclose(
            corners[:, :2], [[-1, 2], [1, 2], [1, -2], [-1, -2]], atol=1e-12
        )

    def test_random_yaw_matches_rotation_oracle(self):
        rng = np.random.default_rng(151)
        dims = VehicleDims(4.4, 1.8, 1.5)
        for _ in range(20):
            yaw = rng.uniform(-math.pi, math.pi)
            center = rng.uniform(-50, 50, size=3)
            corners = vehicle_footprint(make_sample(0.0, center, yaw), dims, np.zeros(3))
            c, s = math.cos(yaw), math.sin(yaw)
            R2 = np.array([[c, -s], [s, c]])
            local = np.array(
                [[2.2, 0.9], [2.2, -0.9], [-2.2, -0.9], [-2.2, 0.9]]
            )
            expected = center[:2] + local @ R2.T
            assert np.allclose(corners[:, :2], expected, atol=1e-9)
            radius = math.hypot(2.2, 0.9)
            dist = np.linalg.norm(corners[:, :2] - center[:2], axis=1)
            assert np.allclose(dist, radius, atol=1e-9)

    def test_corners_distinct(self):
        corners = vehicle_footprint(
            make_sample(0.0, [3, 4, 0], yaw=0.7), DIMS, np.zeros(3)
        )
        for i in range(4):
            for j in range(i + 1, 4):
                assert np.linalg.norm(corners[i] - corners[j]) > 0.5


class TestRefineCorrespondences:
    def test_truth_calibration_gives_near_zero_delta(self, intr, cam, flat_plane):
        h = synthetic_hypothesis(intr, cam)
        pairs = refine_correspondences(h, cam, DIMS, flat_plane, intr)
        assert len(pairs) == len(h.pairs)
        values = delta_p_values(cam, pairs, flat_plane, intr)
        assert np.nanmax(values) < 1e-3

    def test_selected_corner_is_nearest_to_bottom_edge_ground_line(
        self, intr, cam, flat_plane
    ):
        h = synthetic_hypothesis(intr, cam, n=8)
        pairs = refine_correspondences(h, cam, DIMS, flat_plane, intr)
        for (sample, box), pair in zip(h.pairs, pairs):
            corners = vehicle_footprint(sample, DIMS, cam.anchor)
            a = backproject_to_plane(intr, cam, box.bottom_edge[0], flat_plane)
            b = backproject_to_plane(intr, cam, box.bottom_edge[1], flat_plane)
            seg = b - a
            dists = []
            for corner in corners:
                s = np.clip((corner - a) @ seg / (seg @ seg), 0.0, 1.0)
                dists.append(np.linalg.norm(corner - (a + s * seg)))
            assert np.linalg.norm(pair.world_corner - corners[np.argmin(dists)]) < 1e-9

    def test_anchor_on_bottom_edge(self, intr, cam, flat_plane):
        h = synthetic_hypothesis(intr, cam)
        for pair in refine_correspondences(h, cam, DIMS, flat_plane, intr):
            a, b = pair.bottom_edge
            seg = b - a
            s = np.clip((pair.pixel_anchor - a) @ seg / (seg @ seg), 0.0, 1.0)
            assert np.linalg.norm(pair.pixel_anchor - (a + s * seg)) < 1e-6

    def test_interior_projection_unclamped(self, intr, cam, flat_plane):
        h = synthetic_hypothesis(intr, cam, n=6)
        pairs = refine_correspondences(h, cam, DIMS, flat_plane, intr)
        for pair in pairs:
            px = project(intr, cam, pair.world_corner)
            u_min = min(pair.bottom_edge[0][0], pair.bottom_edge[1][0])
            u_max = max(pair.bottom_edge[0][0], pair.bottom_edge[1][0])
            if u_min < px[0] < u_max:
                assert pair.pixel_anchor[0] == pytest.approx(px[0], abs=1e-9)

    def test_projection_beyond_endpoint_clamps(self, intr, cam, flat_plane):
        # shrink the box so the corner projects left of the bottom edge
        h = synthetic_hypothesis(intr, cam, n=6)
        sample, box = h.pairs[2]
        narrow = BoundingBox(box.u + box.w * 0.45, box.v, box.w * 0.05, box.h)
        h_narrow = Hypothesis(0, [(sample, narrow)], cam, 0.0)
        pairs = refine_correspondences(h_narrow, cam, DIMS, flat_plane, intr)
        px = project(intr, cam, pairs[0].world_corner)
        left = pairs[0].bottom_edge[0]
        if px[0] < left[0]:
            assert np.allclose(pairs[0].pixel_anchor, left, atol=1e-9)


class TestDeltaP:
    def test_corner_equal_to_backprojection_gives_zero(self, intr, flat_plane):
        cam = look_at_extrinsic([0.0, -40.0, 30.0], [0.0, 0.0, 0.0])
        corner = np.array([0.0, 0.0, 0.0])
        px = project(intr, cam, corner)
        edge = np.array([[px[0] - 50, px[1]], [px[0] + 50, px[1]]])
        pair = RefinedPair(corner, px, edge)
        assert delta_p(cam, pair, flat_plane, intr) == pytest.approx(0.0, abs=1e-9)

    def test_constructed_half_meter_offset(self, intr, flat_plane):
        cam = look_at_extrinsic([0.0, -40.0, 30.0], [0.0, 0.0, 0.0])
        corner = np.array([0.0, 0.0, 0.0])
        shifted = np.array([0.5, 0.0, 0.0])
        px = project(intr, cam, shifted)
        pair = RefinedPair(corner, px, np.array([[px[0] - 50, px[1]], [px[0] + 50, px[1]]]))
        assert delta_p(cam, pair, flat_plane, intr) == pytest.approx(0.5, abs=1e-9)

    def test_failed_backprojection_is_nan(self, intr, flat_plane):
        up = look_at_extrinsic([0.0, 0.0, 5.0], [0.0, 0.0, 60.0], up=(0, 1, 0))
        pair = RefinedPair(
            np.zeros(3), np.array([960.0, 600.0]), np.array([[900.0, 600.0], [1020.0, 600.0]])
        )
        assert math.isnan(delta_p(up, pair, flat_plane, intr))


def perturbed(calib, angle_deg, shift_m, rng):
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    R = so3_exp(axis * math.radians(angle_deg)) @ calib.rotation
    t = calib.translation + rng.standard_normal(3) * shift_m / math.sqrt(3)
    return ExtrinsicCalibration(R, t, calib.anchor)


class TestRegister:
    def test_truth_init_is_stationary(self, intr, cam, flat_plane):
        h = synthetic_hypothesis(intr, cam)
        pairs = refine_correspondences(h, cam, DIMS, flat_plane, intr)
        res = register(pairs, cam, intr, flat_plane)
        assert rotation_angle_deg(res.calib.rotation, cam.rotation) < 1e-6
        assert np.linalg.norm(res.calib.translation - cam.translation) < 1e-6

    def test_perturbed_init_converges(self, intr, cam, flat_plane):
        rng = np.random.default_rng(157)
        h = synthetic_hypothesis(intr, cam)
        init = perturbed(cam, 1.0, 0.5, rng)
        pairs = refine_correspondences(h, init, DIMS, flat_plane, intr)
        res = register(pairs, init, intr, flat_plane)
        assert res.improved
        assert res.final_mean_delta_p <= 0.05

    def test_monotone_over_random_perturbations(self, intr, cam, flat_plane):
        rng = np.random.default_rng(163)
        h = synthetic_hypothesis(intr, cam)
        for _ in range(10):
            init = perturbed(cam, rng.uniform(0.2, 2.0), rng.uniform(0.1, 1.0), rng)
            pairs = refine_correspondences(h, init, DIMS, flat_plane, intr)
            res = register(pairs, init, intr, flat_plane)
            assert res.final_mean_delta_p <= res.initial_mean_delta_p + 1e-12
            if not res.improved:
                assert res.calib is init

    def test_three_pairs_rejected(self, intr, cam, flat_plane):
        h = synthetic_hypothesis(intr, cam, n=6)
        pairs = refine_correspondences(h, cam, DIMS, flat_plane, intr)[:3]
        with pytest.raises(InsufficientDataError):
            register(pairs, cam, intr, flat_plane)

    def test_translation_gauge_invariance(self, intr, cam, flat_plane):
        rng = np.random.default_rng(167)
        h = synthetic_hypothesis(intr, cam)
        init = perturbed(cam, 0.5, 0.3, rng)
        pairs = refine_correspondences(h, init, DIMS, flat_plane, intr)
        res = register(pairs, init, intr, flat_plane)

        offset = np.array([123.0, -45.0, 6.0])
        moved_pairs = [
            RefinedPair(p.world_corner + offset, p.pixel_anchor, p.bottom_edge)
            for p in pairs
        ]
        moved_plane = GroundPlane(flat_plane.point + offset, flat_plane.normal)
        moved_init = ExtrinsicCalibration(
            init.rotation, init.translation - init.rotation @ offset, init.anchor
        )
        res_moved = register(moved_pairs, moved_init, intr, moved_plane)
        a = delta_p_values(res.calib, res.pairs, flat_plane, intr)
        b = delta_p_values(res_moved.calib, res_moved.pairs, moved_plane, intr)
        assert np.allclose(a, b, atol=1e-9, equal_nan=True)

    def test_frozen_anchor_mode(self, intr, cam, flat_plane):
        rng = np.random.default_rng(173)
        h = synthetic_hypothesis(intr, cam)
        init = perturbed(cam, 0.5, 0.3, rng)
        pairs = refine_correspondences(h, init, DIMS, flat_plane, intr)
        res = register(
            pairs, init, intr, flat_plane, RegistrationParams(freeze_anchors=True)
        )
        assert res.final_mean_delta_p <= res.initial_mean_delta_p
        # stored anchors are untouched in frozen mode
        for before, after in zip(pairs, res.pairs):
            assert np.array_equal(before.pixel_anchor, after.pixel_anchor)


class TestEvaluate:
    def test_single_pair_statistics(self, intr, flat_plane):
        cam = look_at_extrinsic([0.0, -40.0, 30.0], [0.0, 0.0, 0.0])
        corner = np.array([0.0, 0.0, 0.0])
        px = project(intr, cam, np.array([0.5, 0.0, 0.0]))
        pair = RefinedPair(corner, px, np.array([[px[0] - 50, px[1]], [px[0] + 50, px[1]]]))
        m = evaluate(cam, [pair], flat_plane, intr)
        assert m.delta_p_mean == pytest.approx(0.5, abs=1e-6)
        assert m.delta_p_max == pytest.approx(0.5, abs=1e-6)
        assert m.e_mean_pct == pytest.approx(1.0, abs=1e-3)
        assert m.e_max_pct == pytest.approx(1.0, abs=1e-3)
        assert m.pair_count == 1

    def test_uniform_delta_mean_equals_max(self, intr, flat_plane):
        cam = look_at_extrinsic([0.0, -40.0, 30.0], [0.0, 0.0, 0.0])
        pairs = []
        for x in np.linspace(-5, 5, 6):
            corner = np.array([x, 0.0, 0.0])
            px = project(intr, cam, corner + np.array([0.0, 0.3, 0.0]))
            pairs.append(
                RefinedPair(corner, px, np.array([[px[0] - 50, px[1]], [px[0] + 50, px[1]]]))
            )
        m = evaluate(cam, pairs, flat_plane, intr)
        assert m.delta_p_mean == pytest.approx(0.3, abs=1e-6)
        assert m.delta_p_max == pytest.approx(0.3, abs=1e-6)
        assert m.e_mean_pct <= m.e_max_pct


class TestMergeAndSelect:
    def two_traversal_group(self, intr, cam, jitter_px=0.3, corrupt_second=False):
        rng = np.random.default_rng(179)
        h1 = synthetic_hypothesis(
            intr, cam, track_id=0, jitter_rng=rng, jitter_px=jitter_px
        )
        lateral = 3.5
        h2 = synthetic_hypothesis(
            intr, cam, track_id=1, lateral=lateral, jitter_rng=rng, jitter_px=jitter_px
        )
        if corrupt_second:
            corrupted = []
            for sample, box in h2.pairs:
                corrupted.append(
                    (sample, BoundingBox(box.u + 40.0, box.v + 25.0, box.w, box.h))
                )
            h2 = Hypothesis(1, corrupted, h2.calib, 0.0)
        # member calibrations as a box-center pipeline would produce them
        h1.calib = perturbed(cam, 0.3, 0.2, rng)
        h1.median_reproj_px = 1.0
        h2.calib = perturbed(cam, 0.4, 0.25, rng)
        h2.median_reproj_px = 2.0
        return HypothesisGroup([h1, h2])

    def test_merged_calibration_selected_on_clean_group(self, intr, cam):
        group = self.two_traversal_group(intr, cam)
        result = merge_and_select([group], DIMS, intr, np.zeros(3))
        assert result.source == "merged"
        scores = dict(result.candidates)
        assert scores["merged"] <= min(scores["track_0"], scores["track_1"]) + 1e-12
        assert result.delta_p_mean < 0.2
        assert np.linalg.norm(camera_center(result.calib) - camera_center(cam)) < 0.5

    def test_corrupted_member_loses(self, intr, cam):
        group = self.two_traversal_group(intr, cam, corrupt_second=True)
        result = merge_and_select([group], DIMS, intr, np.zeros(3))
        scores = dict(result.candidates)
        assert result.source != "track_1"
        assert scores[result.source] < scores["track_1"]

    def test_zero_groups_signal_insufficient_traversals(self, intr):
        with pytest.raises(InsufficientTraversalsError):
            merge_and_select([], DIMS, intr, np.zeros(3))

    def test_selection_dominance(self, intr, cam):
        group = self.two_traversal_group(intr, cam)
        result = merge_and_select([group], DIMS, intr, np.zeros(3))
        winner_score = dict(result.candidates)[result.source]
        for _, score in result.candidates:
            assert winner_score <= score + 1e-12
