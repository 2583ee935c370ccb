"""Deterministic synthetic calibration scenarios.

A scenario drives a target vehicle (and optional distractor traffic)
along waypoint routes past a ground-truth camera, projects every
vehicle's 3D box into the image and emits the axis-aligned hull as its
detection, alongside a localization log of the target with configurable
Gaussian position noise. All outputs share one clock and are exactly
reproducible per seed, which makes generated scenes usable as oracles
for end-to-end tests.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import GenerationError, InputError
from .geometry import (
    MIN_DEPTH,
    ExtrinsicCalibration,
    GroundPlane,
    Intrinsics,
    look_at_extrinsic,
    project_points,
)
from .hypothesis import LocalizationSample
from .refinement import VehicleDims, vehicle_footprint
from .tracking import BoundingBox



@dataclass(frozen=True)
class NoiseConfig:
    """Gaussian noise on the x/y localization, optional box corruption."""

    sigma_pos: float = 0.0
    sigma_box: float = 0.0
    detection_dropout: float = 0.0

    def __post_init__(self):
        if min(self.sigma_pos, self.sigma_box, self.detection_dropout) < 0:
            raise InputError("noise parameters must be non-negative")


@dataclass(frozen=True)
class TrajectorySpec:
    """Constant-speed waypoint route in local scene coordinates.

    A single waypoint makes the vehicle hold its position for
    ``hold_time`` seconds (parked traffic).
    """

    waypoints: tuple
    speed: float = 10.0
    start_time: float = 0.0
    hold_time: float = 0.0
    dims: VehicleDims = VehicleDims(4.4, 1.8, 1.5)
    name: str = "vehicle"


@dataclass(frozen=True)
class ScenarioConfig:
    intrinsics: Intrinsics
    camera_position: tuple  # local scene coordinates
    camera_look_at: tuple
    target: TrajectorySpec
    return_route: tuple = ()  # waypoints driven between traversals, off camera
    traversal_count: int = 2
    distractors: tuple = ()
    utm_origin: tuple = (500000.0, 5400000.0, 300.0)
    frame_rate: float = 10.0
    localization_rate: float = 50.0
    base_time: float = 0.0
    noise: NoiseConfig = NoiseConfig()
    rng_seed: int = 0

    def __post_init__(self):
        if self.traversal_count < 1:
            raise InputError("traversal_count must be >= 1")
        if self.frame_rate <= 0 or self.localization_rate <= 0:
            raise InputError("rates must be positive")


@dataclass(frozen=True)
class ObstacleRegion:
    """Image rectangle that drops or shrinks detections centered inside."""

    u_min: float
    v_min: float
    u_max: float
    v_max: float
    policy: str = "drop"  # or "shrink"
    shrink_factor: float = 0.5

    def contains(self, u, v):
        return self.u_min <= u <= self.u_max and self.v_min <= v <= self.v_max


@dataclass
class ScenarioTruth:
    """Ground truth the pipeline is measured against."""

    rotation: np.ndarray
    camera_position_utm: np.ndarray
    utm_origin: np.ndarray
    identities: dict  # (timestamp, BoundingBox) -> vehicle name
    target_name: str = "target"

    def calibration(self, anchor=None):
        anchor = np.asarray(
            self.utm_origin if anchor is None else anchor, dtype=float
        )
        t = -self.rotation @ (self.camera_position_utm - anchor)
        return ExtrinsicCalibration(self.rotation, t, anchor)

    def plane(self, anchor=None):
        anchor = np.asarray(
            self.utm_origin if anchor is None else anchor, dtype=float
        )
        return GroundPlane(self.utm_origin - anchor, np.array([0.0, 0.0, 1.0]))

    def camera_position(self, anchor):
        return self.camera_position_utm - np.asarray(anchor, dtype=float)

    def track_identity(self, track):
        """Majority vehicle name behind a finalized track, or None."""
        votes = {}
        for det in track.detections:
            name = self.identities.get((det.timestamp, det.box))
            if name is not None:
                votes[name] = votes.get(name, 0) + 1
        if not votes:
            return None
        return max(sorted(votes), key=lambda k: votes[k])


class _Route:
    """Arc-length parameterized polyline with heading."""

    def __init__(self, waypoints, speed, start_time, hold_time):
        pts = np.atleast_2d(np.asarray(waypoints, dtype=float))
        if pts.shape[1] == 2:
            pts = np.column_stack([pts, np.zeros(len(pts))])
        self.points = pts
        self.speed = speed
        self.start = start_time
        if len(pts) == 1:
            self.seg_len = np.zeros(0)
            self.cum = np.zeros(1)
            self.duration = hold_time
        else:
            self.seg_len = np.linalg.norm(np.diff(pts, axis=0), axis=1)
            self.cum = np.concatenate([[0.0], np.cumsum(self.seg_len)])
            if speed <= 0:
                raise InputError("route speed must be positive")
            self.duration = self.cum[-1] / speed

    @property
    def end(self):
        return self.start + self.duration

    def pose(self, t):
        """(position, yaw) at time t, or None outside the active window."""
        if t < self.start - 1e-9 or t > self.end + 1e-9:
            return None
        if len(self.points) == 1:
            return self.points[0], 0.0
        s = min(max((t - self.start) * self.speed, 0.0), self.cum[-1])
        k = min(int(np.searchsorted(self.cum, s, side="right")) - 1, len(self.seg_len) - 1)
        frac = (s - self.cum[k]) / self.seg_len[k]
        pos = self.points[k] + frac * (self.points[k + 1] - self.points[k])
        d = self.points[k + 1] - self.points[k]
        return pos, math.atan2(d[1], d[0])


def _target_session_route(config):
    """Concatenate traversal and return legs into one continuous route."""
    path = np.atleast_2d(np.asarray(config.target.waypoints, dtype=float))
    legs = [path]
    if config.traversal_count > 1:
        if len(config.return_route) == 0:
            raise InputError("multi-traversal scenarios need a return_route")
        ret = np.atleast_2d(np.asarray(config.return_route, dtype=float))
        for _ in range(config.traversal_count - 1):
            legs.append(ret)
            legs.append(path)
    merged = [legs[0]]
    for leg in legs[1:]:
        merged.append(leg)
    return _Route(
        np.vstack(merged),
        config.target.speed,
        config.target.start_time,
        config.target.hold_time,
    )


def _emit_box(intr, extr, position, yaw, dims, origin_shift):
    """Hull box of the 8 vehicle-box corners, or None when not visible."""
    sample = LocalizationSample(0.0, position + origin_shift, 0.0, 0.0, yaw)
    ground = vehicle_footprint(sample, dims, origin_shift)
    corners = np.vstack([ground, ground + np.array([0.0, 0.0, dims.height])])
    px, depth = project_points(intr, extr, corners)
    front = depth > MIN_DEPTH
    if front.sum() < 4:
        return None
    px = px[front]
    u_min, v_min = px.min(axis=0)
    u_max, v_max = px.max(axis=0)
    if u_max < 0 or u_min > intr.image_width or v_max < 0 or v_min > intr.image_height:
        return None
    if u_max - u_min <= 0 or v_max - v_min <= 0:
        return None
    return BoundingBox(
        (u_min + u_max) / 2, (v_min + v_max) / 2, u_max - u_min, v_max - v_min
    )


def generate(config):
    """Produce ``(frames, localization_log, truth)`` for a scenario.

    Frames are ``(timestamp, [BoundingBox, ...])`` tuples holding only
    non-empty time steps; the localization log covers the whole session
    at ``localization_rate`` with noise applied to x and y. Everything
    is a pure function of the config.
    """
    rng = np.random.default_rng(config.rng_seed)
    rng_loc, rng_box, rng_drop = rng.spawn(3)

    utm_origin = np.asarray(config.utm_origin, dtype=float)
    extr_local = look_at_extrinsic(config.camera_position, config.camera_look_at)

    target_route = _target_session_route(config)
    distractor_routes = [
        _Route(d.waypoints, d.speed, d.start_time, d.hold_time)
        for d in config.distractors
    ]

    session_end = max(
        [target_route.end] + [r.end for r in distractor_routes], default=0.0
    )

    # localization log of the target, 50 Hz-style, noisy in x/y
    log = []
    n_loc = int(math.floor((target_route.end - target_route.start) * config.localization_rate)) + 1
    for i in range(n_loc):
        t = target_route.start + i / config.localization_rate
        pose = target_route.pose(t)
        if pose is None:
            continue
        pos, yaw = pose
        noisy = pos.copy()
        if config.noise.sigma_pos > 0:
            noisy[:2] = noisy[:2] + rng_loc.normal(0.0, config.noise.sigma_pos, size=2)
        log.append(
            LocalizationSample(
                config.base_time + t, noisy + utm_origin, 0.0, 0.0, yaw
            )
        )

    vehicles = [("target", config.target.dims, target_route)]
    vehicles += [
        (d.name, d.dims, r) for d, r in zip(config.distractors, distractor_routes)
    ]

    frames = []
    identities = {}
    target_seen = 0
    n_frames = int(math.floor(session_end * config.frame_rate)) + 1
    for i in range(n_frames):
        t = i / config.frame_rate
        timestamp = config.base_time + t
        boxes = []
        names = []
        for name, dims, route in vehicles:
            pose = route.pose(t)
            if pose is None:
                continue
            pos, yaw = pose
            box = _emit_box(config.intrinsics, extr_local, pos, yaw, dims, np.zeros(3))
            if box is None:
                continue
            if config.noise.detection_dropout > 0 and rng_drop.uniform() < config.noise.detection_dropout:
                continue
            if config.noise.sigma_box > 0:
                box = BoundingBox(
                    box.u + rng_box.normal(0.0, config.noise.sigma_box),
                    box.v + rng_box.normal(0.0, config.noise.sigma_box),
                    max(box.w + rng_box.normal(0.0, config.noise.sigma_box), 1.0),
                    max(box.h + rng_box.normal(0.0, config.noise.sigma_box), 1.0),
                )
            boxes.append(box)
            names.append(name)
            if name == "target":
                target_seen += 1
        if boxes:
            frames.append((timestamp, boxes))
            for box, name in zip(boxes, names):
                identities[(timestamp, box)] = name

    if target_seen == 0:
        raise GenerationError("the target vehicle never enters the camera frustum")

    truth = ScenarioTruth(
        rotation=extr_local.rotation,
        camera_position_utm=np.asarray(config.camera_position, dtype=float) + utm_origin,
        utm_origin=utm_origin,
        identities=identities,
    )
    return frames, log, truth


def occlude(frames, regions):
    """Apply obstacle regions to frames; policies act on box centers."""
    if not regions:
        return list(frames)
    out = []
    for timestamp, boxes in frames:
        kept = []
        for box in boxes:
            hit = next((r for r in regions if r.contains(box.u, box.v)), None)
            if hit is None:
                kept.append(box)
            elif hit.policy == "shrink":
                kept.append(
                    BoundingBox(
                        box.u, box.v,
                        max(box.w * hit.shrink_factor, 1e-3),
                        max(box.h * hit.shrink_factor, 1e-3),
                    )
                )
            elif hit.policy != "drop":
                raise InputError(f"unknown occlusion policy {hit.policy!r}")
        if kept:
            out.append((timestamp, kept))
    return out


def curved_road_scenario(
    seed=0,
    sigma_pos=0.0,
    sigma_box=0.0,
    traversal_count=2,
    n_distractors=5,
    frame_rate=10.0,
    localization_rate=50.0,
):
    """Reference scenario: S-curved east-west road watched from the south.

    The target passes eastbound ``traversal_count`` times with an
    off-camera return loop in between. Distractors cover the cases the
    filters must survive: oncoming traffic, a same-direction vehicle on
    a far lane that mimics the target path, a crossing vehicle during
    the return gap, and a parked car. Distractor timing and speed vary
    with the seed.
    """
    rng = np.random.default_rng(seed)
    intr = Intrinsics(
        fx=1000.0, fy=1000.0, cx=960.0, cy=600.0, image_width=1920, image_height=1200
    )

    def lane(offset, x_from=-70.0, x_to=70.0, step=2.0):
        n = int(abs(x_to - x_from) / step) + 1
        xs = np.linspace(x_from, x_to, n)
        return tuple((x, 6.0 * math.sin(x / 20.0) + offset) for x in xs)

    target = TrajectorySpec(
        waypoints=lane(-1.75), speed=10.0, start_time=0.0, name="target"
    )
    return_route = (
        (80.0, -20.0),
        (80.0, -50.0),
        (-80.0, -50.0),
        (-80.0, -20.0),
    )

    # traversal windows (the road leg takes path_len / speed seconds)
    path_len = 140.0 * 1.02  # arc is slightly longer than the x span
    loop_len = 10 + 30 + 160 + 30 + 12
    t_leg = path_len / 10.0
    t_loop = loop_len / 10.0
    window_starts = [k * (t_leg + t_loop) for k in range(traversal_count)]

    pool = [
        TrajectorySpec(
            waypoints=lane(1.75, 70.0, -70.0),
            speed=float(rng.uniform(9.0, 12.0)),
            start_time=window_starts[0] + float(rng.uniform(0.0, 2.0)),
            name="oncoming_1",
        ),
        TrajectorySpec(
            waypoints=lane(-7.0),
            speed=10.0,
            start_time=float(rng.uniform(-1.0, 1.0)),
            name="mimic",
        ),
        TrajectorySpec(
            waypoints=((12.0, 45.0), (12.0, 2.0)),
            speed=float(rng.uniform(6.0, 9.0)),
            start_time=t_leg + float(rng.uniform(2.0, 6.0)),
            name="crosser",
        ),
        TrajectorySpec(
            waypoints=((8.0, 4.0),),
            hold_time=traversal_count * (t_leg + t_loop) + 20.0,
            start_time=0.0,
            name="parked",
        ),
        TrajectorySpec(
            waypoints=lane(1.75, 70.0, -70.0),
            speed=float(rng.uniform(9.0, 12.0)),
            start_time=(window_starts[-1] if traversal_count > 1 else 0.0)
            + float(rng.uniform(0.0, 2.0)),
            name="oncoming_2",
        ),
    ]
    extra = [
        TrajectorySpec(
            waypoints=lane(1.75, 70.0, -70.0),
            speed=float(rng.uniform(9.0, 12.0)),
            start_time=float(rng.uniform(0.0, window_starts[-1] + t_leg)),
            name=f"extra_{k}",
        )
        for k in range(max(0, n_distractors - len(pool)))
    ]
    distractors = tuple(pool[:n_distractors] + extra)

    return ScenarioConfig(
        intrinsics=intr,
        camera_position=(0.0, -25.0, 7.0),
        camera_look_at=(0.0, 8.0, 0.0),
        target=target,
        return_route=return_route,
        traversal_count=traversal_count,
        distractors=distractors,
        frame_rate=frame_rate,
        localization_rate=localization_rate,
        noise=NoiseConfig(sigma_pos=sigma_pos, sigma_box=sigma_box),
        rng_seed=seed,
    )
