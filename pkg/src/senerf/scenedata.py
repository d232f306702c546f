"""Analytic scene oracle, spherical camera poses and dataset I/O.

The oracle scene is a handful of emissive solids (spheres, axis-aligned
boxes) on a flat background, all inside the unit cube.  Exact ray-solid
intersection gives ground-truth images, depths and silhouette masks with
no external assets, which is what makes desk-scale verification of the
whole pipeline possible.  Datasets round-trip through a directory of PNGs
plus a ``transforms.json`` in the familiar camera_angle_x / frames layout.
"""

from __future__ import annotations

import dataclasses
import json
import os
from pathlib import Path

import numpy as np

from . import imgio
from .renderer import Camera, generate_rays

DEFAULT_FOV_DEG = 40.0
DEFAULT_RADIUS = 4.0
DEFAULT_SIZE = 64
DEFAULT_NEAR = 2.0
DEFAULT_FAR = 6.0

_LIGHT_DIR = np.array([1.0, -1.0, 1.5]) / np.linalg.norm([1.0, -1.0, 1.5])


class DatasetError(ValueError):
    """Malformed dataset directory or scene description."""


@dataclasses.dataclass
class Sphere:
    center: tuple
    radius: float
    albedo: tuple

    def bounds(self):
        c, r = np.asarray(self.center), self.radius
        return c - r, c + r


@dataclasses.dataclass
class Box:
    center: tuple
    size: tuple
    albedo: tuple

    def bounds(self):
        c, h = np.asarray(self.center), np.asarray(self.size) / 2.0
        return c - h, c + h


@dataclasses.dataclass
class SceneSpec:
    """Solids plus background color; everything must fit the unit cube."""

    solids: list
    background: tuple = (1.0, 1.0, 1.0)
    shading: bool = False

    def __post_init__(self):
        for solid in self.solids:
            lo, hi = solid.bounds()
            if np.any(lo < -1.0 - 1e-9) or np.any(hi > 1.0 + 1e-9):
                raise DatasetError(f"solid extends outside the unit cube: {solid}")
            if np.any(np.asarray(solid.albedo) < 0) or np.any(
                np.asarray(solid.albedo) > 1
            ):
                raise DatasetError(f"albedo out of [0, 1]: {solid}")

    def to_dict(self):
        out = {"background": list(self.background), "shading": self.shading, "solids": []}
        for s in self.solids:
            if isinstance(s, Sphere):
                out["solids"].append(
                    {
                        "type": "sphere",
                        "center": list(s.center),
                        "radius": s.radius,
                        "albedo": list(s.albedo),
                    }
                )
            else:
                out["solids"].append(
                    {
                        "type": "box",
                        "center": list(s.center),
                        "size": list(s.size),
                        "albedo": list(s.albedo),
                    }
                )
        return out

    @classmethod
    def from_dict(cls, data):
        solids = []
        for entry in data.get("solids", []):
            kind = entry.get("type")
            if kind == "sphere":
                solids.append(
                    Sphere(tuple(entry["center"]), entry["radius"], tuple(entry["albedo"]))
                )
            elif kind == "box":
                solids.append(
                    Box(tuple(entry["center"]), tuple(entry["size"]), tuple(entry["albedo"]))
                )
            else:
                raise DatasetError(f"unknown solid type {kind!r}")
        return cls(
            solids,
            tuple(data.get("background", (1.0, 1.0, 1.0))),
            bool(data.get("shading", False)),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as err:
            raise DatasetError(f"{path}: invalid scene JSON ({err})") from None
        return cls.from_dict(data)


def default_scene():
    """Two spheres and a box with distinct albedos on a white background."""
    return SceneSpec(
        solids=[
            Sphere((-0.35, -0.25, 0.05), 0.45, (0.85, 0.25, 0.20)),
            Sphere((0.40, 0.30, 0.15), 0.35, (0.20, 0.45, 0.85)),
            Box((0.05, 0.05, -0.50), (0.95, 0.70, 0.28), (0.25, 0.70, 0.30)),
        ]
    )


@dataclasses.dataclass
class PoseSpec:
    """Spherical camera placement: azimuth/elevation in degrees plus radius."""

    phi: float
    theta: float
    radius: float = DEFAULT_RADIUS

    def __post_init__(self):
        if self.radius <= 0:
            raise DatasetError(f"radius must be positive, got {self.radius}")

    def position(self):
        phi, theta = np.radians(self.phi), np.radians(self.theta)
        return self.radius * np.array(
            [np.cos(theta) * np.cos(phi), np.cos(theta) * np.sin(phi), np.sin(theta)]
        )


def look_at(position, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)):
    """World-from-camera rotation for an OpenCV camera looking at ``target``.

    Falls back to a +x up-vector when the view direction is parallel to
    ``up`` (the straight-down/straight-up case).
    """
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    forward = forward / np.linalg.norm(forward)
    up = np.asarray(up, dtype=np.float64)
    if np.linalg.norm(np.cross(forward, up)) < 1e-9:
        up = np.array([1.0, 0.0, 0.0])
    right = np.cross(forward, up)
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    return np.stack([right, down, forward], axis=1)


def spherical_pose(phi, theta, radius):
    """(rotation, position) for a camera at spherical coords looking at origin."""
    pos = PoseSpec(phi, theta, radius).position()
    return look_at(pos), pos


def camera_from_pose(
    pose,
    width=DEFAULT_SIZE,
    height=DEFAULT_SIZE,
    fov_deg=DEFAULT_FOV_DEG,
    near=DEFAULT_NEAR,
    far=DEFAULT_FAR,
):
    rotation, position = spherical_pose(pose.phi, pose.theta, pose.radius)
    fx = 0.5 * width / np.tan(0.5 * np.radians(fov_deg))
    return Camera(
        fx=fx,
        fy=fx,
        cx=width / 2.0,
        cy=height / 2.0,
        rotation=rotation,
        position=position,
        width=width,
        height=height,
        near=near,
        far=far,
    )


def pose_of_camera(camera):
    """Recover (phi, theta, radius) in degrees from a camera position."""
    x, y, z = camera.position
    radius = float(np.linalg.norm(camera.position))
    theta = float(np.degrees(np.arcsin(np.clip(z / radius, -1.0, 1.0))))
    phi = float(np.degrees(np.arctan2(y, x)))
    return PoseSpec(phi, theta, radius)


def _intersect_sphere(origins, dirs, sphere):
    oc = origins - np.asarray(sphere.center)
    b = np.einsum("ij,ij->i", oc, dirs)
    c = np.einsum("ij,ij->i", oc, oc) - sphere.radius**2
    disc = b * b - c
    hit = disc >= 0.0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t0 = -b - sq
    t1 = -b + sq
    t = np.where(t0 > 1e-9, t0, t1)
    t = np.where(hit & (t > 1e-9), t, np.inf)
    t_safe = np.where(np.isfinite(t), t, 0.0)
    normal = origins + dirs * t_safe[:, None] - np.asarray(sphere.center)
    return t, normal


def _intersect_box(origins, dirs, box):
    half = np.asarray(box.size) / 2.0
    lo = np.asarray(box.center) - half
    hi = np.asarray(box.center) + half
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t_lo = (lo - origins) * inv
        t_hi = (hi - origins) * inv
    t1 = np.minimum(t_lo, t_hi)
    t2 = np.maximum(t_lo, t_hi)
    t_near = np.nanmax(t1, axis=1)
    t_far = np.nanmin(t2, axis=1)
    hit = (t_far >= t_near) & (t_far > 1e-9)
    t = np.where(t_near > 1e-9, t_near, t_far)
    t = np.where(hit & (t > 1e-9), t, np.inf)
    t_safe = np.where(np.isfinite(t), t, 0.0)
    rel = (origins + dirs * t_safe[:, None] - np.asarray(box.center)) / half
    axis = np.argmax(np.abs(rel), axis=1)
    normal = np.zeros_like(rel)
    normal[np.arange(len(axis)), axis] = np.sign(rel[np.arange(len(axis)), axis])
    return t, normal


def oracle_render(scene, camera):
    """Exact render of the analytic scene: (image, depth, object mask).

    Colors are per-solid albedos (optionally Lambertian-shaded by a fixed
    directional light), depth is the distance to the nearest hit along the
    unit-direction ray and misses get the background color and +inf depth.
    One sample per pixel center, so repeated renders are bit-identical.
    """
    origins, dirs = generate_rays(camera)
    n = origins.shape[0]
    best_t = np.full(n, np.inf)
    color = np.broadcast_to(
        np.asarray(scene.background, dtype=np.float64), (n, 3)
    ).copy()
    for solid in scene.solids:
        if isinstance(solid, Sphere):
            t, normal = _intersect_sphere(origins, dirs, solid)
        else:
            t, normal = _intersect_box(origins, dirs, solid)
        closer = t < best_t
        if not np.any(closer):
            continue
        albedo = np.asarray(solid.albedo, dtype=np.float64)
        if scene.shading:
            norm = normal[closer]
            norm = norm / np.linalg.norm(norm, axis=1, keepdims=True)
            lambert = np.maximum(norm @ _LIGHT_DIR, 0.0)
            shade = (0.35 + 0.65 * lambert)[:, None] * albedo
        else:
            shade = albedo
        color[closer] = shade
        best_t[closer] = t[closer]

    h, w = camera.height, camera.width
    image = np.clip(color, 0.0, 1.0).astype(np.float32).reshape(h, w, 3)
    depth = best_t.astype(np.float32).reshape(h, w)
    mask = np.isfinite(depth)
    return image, depth, mask


@dataclasses.dataclass
class Dataset:
    """Posed images (plus optional ground-truth depths) for one scene."""

    images: np.ndarray
    cameras: list
    names: list
    depths: np.ndarray | None = None

    def __len__(self):
        return len(self.cameras)

    def subset(self, indices):
        return Dataset(
            images=self.images[list(indices)],
            cameras=[self.cameras[i] for i in indices],
            names=[self.names[i] for i in indices],
            depths=None if self.depths is None else self.depths[list(indices)],
        )


def write_dataset(scene, cameras, out_dir, write_depth=False):
    """Render the oracle for every camera and persist the dataset layout.

    Produces ``images/*.png``, ``transforms.json`` (camera_angle_x plus
    per-frame file_path and 4x4 world-from-camera transform_matrix) and,
    optionally, ``depths/*.pfm``.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    if write_depth:
        (out / "depths").mkdir(exist_ok=True)
    frames = []
    for i, cam in enumerate(cameras):
        image, depth, _ = oracle_render(scene, cam)
        name = f"r_{i:03d}"
        imgio.save_png(out / "images" / f"{name}.png", image)
        if write_depth:
            imgio.save_pfm(out / "depths" / f"{name}.pfm", depth)
        matrix = np.eye(4)
        matrix[:3, :3] = cam.rotation
        matrix[:3, 3] = cam.position
        frames.append(
            {
                "file_path": f"images/{name}.png",
                "transform_matrix": matrix.tolist(),
            }
        )
    cam0 = cameras[0]
    meta = {
        "camera_angle_x": float(2.0 * np.arctan(0.5 * cam0.width / cam0.fx)),
        "w": cam0.width,
        "h": cam0.height,
        "near": cam0.near,
        "far": cam0.far,
        "frames": frames,
    }
    with open(out / "transforms.json", "w") as fh:
        json.dump(meta, fh, indent=2)
    return out


def read_dataset(data_dir):
    """Inverse of :func:`write_dataset`."""
    root = Path(data_dir)
    transforms = root / "transforms.json"
    if not transforms.exists():
        raise DatasetError(f"{transforms}: missing transforms.json")
    try:
        with open(transforms) as fh:
            meta = json.load(fh)
    except json.JSONDecodeError as err:
        raise DatasetError(f"{transforms}: invalid JSON ({err})") from None
    for key in ("camera_angle_x", "frames"):
        if key not in meta:
            raise DatasetError(f"{transforms}: missing key {key!r}")

    images, cameras, names, depths = [], [], [], []
    width, height = meta.get("w"), meta.get("h")
    near = meta.get("near", DEFAULT_NEAR)
    far = meta.get("far", DEFAULT_FAR)
    for frame in meta["frames"]:
        path = root / frame["file_path"]
        if not path.exists():
            raise DatasetError(f"{path}: referenced image missing")
        img = imgio.load_png(path)
        if width is None:
            height, width = img.shape[:2]
        matrix = np.asarray(frame["transform_matrix"], dtype=np.float64)
        fx = 0.5 * width / np.tan(0.5 * meta["camera_angle_x"])
        cameras.append(
            Camera(
                fx=fx,
                fy=fx,
                cx=width / 2.0,
                cy=height / 2.0,
                rotation=matrix[:3, :3],
                position=matrix[:3, 3],
                width=width,
                height=height,
                near=near,
                far=far,
            )
        )
        images.append(img)
        names.append(Path(frame["file_path"]).stem)
        depth_path = root / "depths" / f"{Path(frame['file_path']).stem}.pfm"
        depths.append(imgio.load_pfm(depth_path) if depth_path.exists() else None)

    have_depths = all(d is not None for d in depths) and depths
    return Dataset(
        images=np.stack(images) if images else np.zeros((0, 0, 0, 3), np.float32),
        cameras=cameras,
        names=names,
        depths=np.stack(depths) if have_depths else None,
    )


def angular_distance_deg(pose_a, pose_b):
    """Great-circle angle between two spherical placements, in degrees."""
    a = pose_a.position() / pose_a.radius
    b = pose_b.position() / pose_b.radius
    return float(np.degrees(np.arccos(np.clip(np.dot(a, b), -1.0, 1.0))))


def sample_sphere_poses(
    n, rng, theta_range=(-5.0, 65.0), radius=DEFAULT_RADIUS, phi_range=(0.0, 360.0)
):
    phis = rng.uniform(*phi_range, size=n)
    thetas = rng.uniform(*theta_range, size=n)
    return [PoseSpec(float(p), float(t), radius) for p, t in zip(phis, thetas)]


def make_extreme_split(poses, rng, n_train=3, bound_deg=40.0):
    """Pick ``n_train`` one-sided training views; everything else is held out.

    Training views must be pairwise within ``bound_deg`` of each other on
    the pose sphere, which forces them onto one side of the scene.
    """
    if len(poses) < 20:
        raise DatasetError(f"need at least 20 candidate poses, got {len(poses)}")
    order = rng.permutation(len(poses))
    for anchor in order:
        near = [
            i
            for i in order
            if angular_distance_deg(poses[anchor], poses[i]) < bound_deg
        ]
        for combo_start in range(len(near)):
            chosen = [near[combo_start]]
            for j in near:
                if j in chosen:
                    continue
                if all(
                    angular_distance_deg(poses[j], poses[k]) < bound_deg
                    for k in chosen
                ):
                    chosen.append(j)
                if len(chosen) == n_train:
                    break
            if len(chosen) == n_train:
                train = sorted(chosen)
                test = [i for i in range(len(poses)) if i not in train]
                return train, test
    raise DatasetError(
        f"no {n_train} poses are pairwise within {bound_deg} degrees; "
        "use a larger pose pool"
    )
