"""Shared fixtures: a small oracle scene, posed datasets and tiny fields."""

import numpy as np
import pytest

from senerf.scenedata import (
    Dataset,
    camera_from_pose,
    default_scene,
    make_extreme_split,
    oracle_render,
    sample_sphere_poses,
)


@pytest.fixture(scope="session")
def scene():
    return default_scene()


@pytest.fixture(scope="session")
def pose_pool():
    return sample_sphere_poses(40, np.random.default_rng(7))


@pytest.fixture(scope="session")
def oracle_dataset(scene, pose_pool):
    cams = [camera_from_pose(p) for p in pose_pool]
    renders = [oracle_render(scene, c) for c in cams]
    return Dataset(
        images=np.stack([r[0] for r in renders]),
        cameras=cams,
        names=[f"r_{i:03d}" for i in range(len(cams))],
        depths=np.stack([r[1] for r in renders]),
    )


@pytest.fixture(scope="session")
def extreme_split(pose_pool):
    return make_extreme_split(pose_pool, np.random.default_rng(0))


def project_unoccluded_fraction(dataset, idx_a, idx_b, color_tol=1.0 / 255.0):
    """Fraction of view-a surface pixels that land on matching colors in view b.

    Uses oracle depths on both sides; a pixel counts as unoccluded when the
    projected point's distance to camera b agrees with b's own depth at the
    landing pixel (relative tolerance 2%).  Returns (agreeing fraction,
    number of unoccluded surface pixels checked).
    """
    from senerf.reliability import _warp_grid

    cam_a, cam_b = dataset.cameras[idx_a], dataset.cameras[idx_b]
    img_a, img_b = dataset.images[idx_a], dataset.images[idx_b]
    depth_a, depth_b = dataset.depths[idx_a], dataset.depths[idx_b]
    surface = np.isfinite(depth_a)
    up, vp, lz = _warp_grid(np.where(surface, depth_a, 1.0), cam_a, cam_b)
    h, w = depth_a.shape
    inb = surface & (lz > 0) & (up >= 0) & (up < w) & (vp >= 0) & (vp < h)
    iu = np.clip(up.astype(np.int64), 0, w - 1)
    iv = np.clip(vp.astype(np.int64), 0, h - 1)
    # distance from camera b to the 3D point equals z / cos(angle); compare
    # via the landing pixel's oracle depth along its own ray
    dir_b = cam_b.world_dir(iu + 0.5, iv + 0.5)
    ray_z = dir_b @ cam_b.rotation[:, 2]
    expected_depth = lz / np.maximum(ray_z, 1e-9)
    d_b = depth_b[iv, iu]
    unocc = inb & np.isfinite(d_b) & (np.abs(d_b - expected_depth) < 0.02 * expected_depth)
    if not np.any(unocc):
        return 1.0, 0
    diff = np.linalg.norm(img_a - img_b[iv, iu], axis=-1)
    agree = diff[unocc] <= color_tol + 1e-7
    return float(np.mean(agree)), int(np.count_nonzero(unocc))
