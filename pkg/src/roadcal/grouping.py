"""Pairwise hypothesis similarity and camera-position clustering.

Two hypotheses of the real calibration vehicle agree on the camera pose;
hypotheses of other traffic produce poses that disagree in position,
orientation or mutual visibility. A similarity graph connects agreeing
pairs, isolated hypotheses are dropped, and DBSCAN on the camera centers
yields the candidate groups.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .geometry import MIN_DEPTH, camera_center, in_frustum, project_points



@dataclass(frozen=True)
class SimilarityScores:
    """Directional frustum/overlap ratios and the rotation agreement."""

    r_out: float
    r_ov: float
    r_sim: float


@dataclass(frozen=True)
class GroupingParams:
    # Box centers sit outside the image on FoV entry/exit frames even for
    # correct pairings, so the frustum-outlier gate needs headroom.
    max_r_out: float = 0.25
    min_r_ov: float = 0.7
    min_r_sim: float = 0.99
    k_px: float = 20.0
    dbscan_eps_m: float = 3.0
    dbscan_min_pts: int = 2

    def __post_init__(self):
        if not (0.0 <= self.max_r_out <= 1.0 and 0.0 <= self.min_r_ov <= 1.0):
            raise InputError("ratio thresholds must lie in [0, 1]")
        if not (-1.0 / 3.0 <= self.min_r_sim <= 1.0):
            raise InputError("min_r_sim must lie in [-1/3, 1]")
        if self.k_px <= 0:
            raise InputError("k_px must be positive")


@dataclass
class HypothesisGroup:
    """Hypotheses that agree pairwise and share a camera location."""

    members: list


def outlier_ratio(h_i, h_j, intr):
    """Fraction of h_i's world positions invisible to h_j's camera."""
    world = h_i.positions(anchor=h_j.calib.anchor)
    visible = in_frustum(intr, h_j.calib, world)
    return float(np.mean(~visible))


def _distances_to_boxes(pixels, boxes):
    """Distance from each pixel to the nearest box rectangle (0 inside)."""
    centers = np.array([[b.u, b.v] for b in boxes])
    half = np.array([[b.w / 2.0, b.h / 2.0] for b in boxes])
    rel = np.abs(pixels[:, None, :] - centers[None, :, :]) - half[None, :, :]
    outside = np.maximum(rel, 0.0)
    return np.min(np.linalg.norm(outside, axis=2), axis=1)


def overlap_ratio(h_i, h_j, intr, k_px):
    """Fraction of h_i's positions projecting near some box of h_j.

    Projection uses h_j's calibration; points behind that camera count
    as non-overlapping.
    """
    world = h_i.positions(anchor=h_j.calib.anchor)
    pixels, depth = project_points(intr, h_j.calib, world)
    near = np.zeros(len(world), dtype=bool)
    in_front = depth > MIN_DEPTH
    if np.any(in_front):
        dists = _distances_to_boxes(pixels[in_front], h_j.boxes())
        near[in_front] = dists <= k_px
    return float(np.mean(near))


def rotational_similarity(r_i, r_j):
    """Trace-based rotation agreement, (1 + 2 cos theta) / 3 in [-1/3, 1]."""
    return float(np.trace(np.asarray(r_j).T @ np.asarray(r_i)) / 3.0)


def similarity_scores(h_i, h_j, intr, gp):
    """Symmetrized scores: worst-case r_out and r_ov over both directions."""
    return SimilarityScores(
        r_out=max(outlier_ratio(h_i, h_j, intr), outlier_ratio(h_j, h_i, intr)),
        r_ov=min(
            overlap_ratio(h_i, h_j, intr, gp.k_px),
            overlap_ratio(h_j, h_i, intr, gp.k_px),
        ),
        r_sim=rotational_similarity(h_i.calib.rotation, h_j.calib.rotation),
    )


def similarity_graph(hyps, intr, gp=GroupingParams()):
    """Adjacency sets over hypothesis indices; edges join similar pairs."""
    if not hyps:
        raise InputError("similarity graph needs at least one hypothesis")
    adjacency = {i: set() for i in range(len(hyps))}
    for i in range(len(hyps)):
        for j in range(i + 1, len(hyps)):
            s = similarity_scores(hyps[i], hyps[j], intr, gp)
            if s.r_out <= gp.max_r_out and s.r_ov >= gp.min_r_ov and s.r_sim >= gp.min_r_sim:
                adjacency[i].add(j)
                adjacency[j].add(i)
    return adjacency


def dbscan(points, eps, min_pts):
    """Density-based clustering; returns labels with -1 marking noise.

    Classic flat implementation scanning points in index order, which
    keeps runs reproducible.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    if n == 0:
        return np.empty(0, dtype=int)
    dist = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=2)
    neighborhoods = [np.flatnonzero(dist[i] <= eps) for i in range(n)]

    UNSET, NOISE = -2, -1
    labels = np.full(n, UNSET, dtype=int)
    cluster = 0
    for i in range(n):
        if labels[i] != UNSET:
            continue
        if len(neighborhoods[i]) < min_pts:
            labels[i] = NOISE
            continue
        labels[i] = cluster
        seeds = list(neighborhoods[i])
        k = 0
        while k < len(seeds):
            q = seeds[k]
            k += 1
            if labels[q] == NOISE:
                labels[q] = cluster
            if labels[q] != UNSET:
                continue
            labels[q] = cluster
            if len(neighborhoods[q]) >= min_pts:
                seeds.extend(neighborhoods[q])
        cluster += 1
    return labels


def cluster_groups(graph, hyps, gp=GroupingParams()):
    """Groups of connected hypotheses with co-located camera centers.

    Degree-0 nodes are discarded first (a lone traversal cannot confirm
    itself), then DBSCAN clusters the surviving camera centers. Noise
    points and clusters smaller than the density minimum are dropped. An
    empty result signals too few calibration-vehicle traversals.
    """
    connected = [i for i in sorted(graph) if graph[i]]
    if not connected:
        return []
    centers = np.array([camera_center(hyps[i].calib) for i in connected])
    labels = dbscan(centers, gp.dbscan_eps_m, gp.dbscan_min_pts)
    groups = []
    for label in sorted(set(labels) - {-1}):
        members = [hyps[connected[k]] for k in np.flatnonzero(labels == label)]
        if len(members) >= max(2, gp.dbscan_min_pts):
            groups.append(HypothesisGroup(members))
    return groups
