"""Camera model walkthrough: projection, backprojection, UTM anchoring.

Run:  python demos/01_camera_geometry.py
"""

import numpy as np

from roadcal import (
    GroundPlane,
    Intrinsics,
    MeanAnchor,
    apply_anchor,
    backproject_to_plane,
    camera_center,
    in_frustum,
    look_at_extrinsic,
    project,
)

# A 1920x1200 camera with a 1000 px focal length, mounted 7 m above the
# ground, 25 m south of the road, looking north and slightly down.
intr = Intrinsics(fx=1000, fy=1000, cx=960, cy=600, image_width=1920, image_height=1200)
cam = look_at_extrinsic(position=[0.0, -25.0, 7.0], target=[0.0, 8.0, 0.0])

print("camera center (should equal the mounting position):", camera_center(cam))

# Project a few points on the road surface.
road_points = np.array([[x, 0.0, 0.0] for x in (-15.0, 0.0, 15.0)])
pixels = project(intr, cam, road_points)
for p, px in zip(road_points, pixels):
    print(f"world {p} -> pixel ({px[0]:7.1f}, {px[1]:7.1f})")

# Backprojection inverts the projection for points on a known plane.
ground = GroundPlane(point=np.zeros(3), normal=np.array([0.0, 0.0, 1.0]))
recovered = backproject_to_plane(intr, cam, pixels[1], ground)
print("round trip error:", np.linalg.norm(recovered - road_points[1]), "m")

# The frustum test tells which world points the camera can see at all.
probes = np.array([[0.0, 0.0, 0.0], [0.0, -40.0, 0.0], [500.0, 0.0, 0.0]])
print("visible:", dict(zip(["on road", "behind camera", "far east"],
                           in_frustum(intr, cam, probes).tolist())))

# Raw UTM coordinates are huge; anchoring keeps the math well-conditioned.
raw = np.array([[5.0e5 + x, 5.4e6, 300.0] for x in (-30.0, 0.0, 30.0)])
anchored, anchor = apply_anchor(raw, MeanAnchor())
print("anchor (subtracted from every coordinate):", anchor)
print("anchored points:\n", anchored)
