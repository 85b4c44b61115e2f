"""Deterministic synthetic rigs, feature maps, and weights for demos and self-checks.

Rectified rigs use power-of-two focal lengths so that the identity warp and
integer line intercepts come out exact in floating point; the convergent
random rigs imitate a tabletop capture: cameras on a ring looking at a common
target a few baseline-lengths away, with the epipoles rejected out of frame so
that every in-image pixel carries a well-conditioned line.
"""

from __future__ import annotations

import numpy as np

from .geometry import (
    CameraExtrinsics,
    CameraIntrinsics,
    CameraPair,
    projection_constants,
)


def rectified_pair(
    height: int = 8,
    width: int = 8,
    focal: float = 128.0,
    baseline: float = 1.0,
    principal: tuple[float, float] | None = (0.0, 0.0),
) -> CameraPair:
    """Side-by-side rig: identical intrinsics, identity rotation, x-translation.

    Every reference row maps to the same source row, so line slopes are
    exactly 0 and intercepts are exactly the row index.
    """
    cx, cy = principal if principal is not None else (width / 2.0, height / 2.0)
    k = CameraIntrinsics(fx=focal, fy=focal, cx=cx, cy=cy)
    rel = CameraExtrinsics(np.eye(3), np.array([baseline, 0.0, 0.0]))
    return CameraPair(k, k, rel, (height, width))


def vertical_baseline_pair(
    height: int = 8,
    width: int = 8,
    focal: float = 128.0,
    baseline: float = 1.0,
) -> CameraPair:
    """Over/under rig: lines run vertically, so the swapped orientation is used."""
    k = CameraIntrinsics(fx=focal, fy=focal, cx=0.0, cy=0.0)
    rel = CameraExtrinsics(np.eye(3), np.array([0.0, baseline, 0.0]))
    return CameraPair(k, k, rel, (height, width))


def _look_at_rotation(position: np.ndarray, target: np.ndarray) -> np.ndarray:
    """World-to-camera rotation for a camera at ``position`` looking at ``target``.

    Camera axes: x right, y down, z forward; world y serves as the down hint.
    """
    forward = target - position
    forward = forward / np.linalg.norm(forward)
    right = np.cross(np.array([0.0, 1.0, 0.0]), forward)
    norm = np.linalg.norm(right)
    if norm < 1e-12:
        # Looking straight along the down hint; pick an arbitrary right axis.
        right = np.array([1.0, 0.0, 0.0])
    else:
        right = right / norm
    down = np.cross(forward, right)
    return np.stack([right, down, forward])


def _epipole_in_image(pair: CameraPair, margin: float) -> bool:
    """True when either view's epipole lands inside the padded image rectangle."""
    h, w = pair.image_size
    lo_x, hi_x = -margin, (w - 1) + margin
    lo_y, hi_y = -margin, (h - 1) + margin

    constants = projection_constants(pair)
    for vec in (
        constants.offset,  # source-view epipole: zero-depth limit point
        pair.ref_intrinsics.matrix()
        @ (-pair.rel_extrinsics.rotation.T @ pair.rel_extrinsics.translation),
    ):
        if abs(vec[2]) < 1e-9 * max(1.0, float(np.abs(vec).max())):
            continue  # epipole at infinity in this view
        x, y = vec[0] / vec[2], vec[1] / vec[2]
        if lo_x <= x <= hi_x and lo_y <= y <= hi_y:
            return True
    return False


def random_pair(
    rng: np.random.Generator,
    height: int = 64,
    width: int = 80,
    epipole_margin: float = 8.0,
) -> CameraPair:
    """Random convergent rig with both epipoles outside the image rectangle."""
    for _ in range(200):
        focal = rng.uniform(80.0, 200.0)
        ref_k = CameraIntrinsics(
            fx=focal,
            fy=focal * rng.uniform(0.95, 1.05),
            cx=width / 2.0 + rng.uniform(-3.0, 3.0),
            cy=height / 2.0 + rng.uniform(-3.0, 3.0),
        )
        src_k = CameraIntrinsics(
            fx=focal * rng.uniform(0.9, 1.1),
            fy=focal * rng.uniform(0.9, 1.1),
            cx=width / 2.0 + rng.uniform(-3.0, 3.0),
            cy=height / 2.0 + rng.uniform(-3.0, 3.0),
        )
        # Reference camera at the world origin looking along +z; source camera
        # displaced mostly sideways, both converging on a shared target.
        target = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(5.0, 8.0)])
        lateral = rng.uniform(0.4, 1.2) * (1 if rng.uniform() < 0.5 else -1)
        position = np.array([lateral, rng.uniform(-0.4, 0.4), rng.uniform(-0.3, 0.3)])
        rotation = _look_at_rotation(position, target)
        rel = CameraExtrinsics(rotation, -rotation @ position)
        pair = CameraPair(ref_k, src_k, rel, (height, width))
        if not _epipole_in_image(pair, epipole_margin):
            return pair
    raise RuntimeError("failed to sample a rig with epipoles out of frame")


# Depth sweep bounds that keep projections finite for rigs built here: the
# convergence target sits 5-8 units out, so [2, 12] brackets the scene.
DEPTH_SWEEP = (2.0, 12.0)


def random_feature_map(rng: np.random.Generator, height: int, width: int, channels: int):
    """Standard-normal feature grid as float64."""
    return rng.standard_normal((height, width, channels))
