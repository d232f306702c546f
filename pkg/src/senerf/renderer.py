"""Camera model, ray generation and differentiable volume compositing.

Cameras follow the OpenCV pinhole convention: x right, y down, z forward,
with a world-from-camera rigid pose.  Rays march through evenly spaced
bins between the near and far bounds, one jittered sample per bin, and the
compositor turns per-sample densities and colors into pixel color,
expected depth, opacity and per-bin weights via alpha compositing.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import autodiff as ad

OPACITY_SURFACE_MIN = 0.05
DEPTH_GUARD = 1e-6


class RenderError(ValueError):
    """Invalid camera or non-finite densities during compositing."""


@dataclasses.dataclass
class Camera:
    """Pinhole camera with intrinsics in pixels and a world-from-camera pose."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    position: np.ndarray
    width: int
    height: int
    near: float
    far: float

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise RenderError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not (0 < self.near < self.far):
            raise RenderError(f"need 0 < near < far, got {self.near}, {self.far}")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-5 or np.linalg.det(self.rotation) < 0:
            raise RenderError("rotation must be orthonormal with determinant +1")

    @property
    def intrinsics(self):
        k = np.eye(3)
        k[0, 0], k[1, 1] = self.fx, self.fy
        k[0, 2], k[1, 2] = self.cx, self.cy
        return k

    def world_dir(self, u, v):
        """World-space unit direction through continuous pixel coords (u, v)."""
        d = np.stack(
            [
                (np.asarray(u) - self.cx) / self.fx,
                (np.asarray(v) - self.cy) / self.fy,
                np.ones_like(np.asarray(u, dtype=np.float64)),
            ],
            axis=-1,
        )
        d = d @ self.rotation.T
        return d / np.linalg.norm(d, axis=-1, keepdims=True)


def generate_rays(camera):
    """One ray per pixel through the pixel center, row-major (v, u) order.

    Returns (origins, directions) of shape [H*W, 3]; directions are unit
    length, origins repeat the camera center.
    """
    h, w = camera.height, camera.width
    u = np.arange(w, dtype=np.float64) + 0.5
    v = np.arange(h, dtype=np.float64) + 0.5
    uu, vv = np.meshgrid(u, v)
    dirs = camera.world_dir(uu.reshape(-1), vv.reshape(-1))
    origins = np.broadcast_to(camera.position, dirs.shape).copy()
    return origins, dirs


def stratified_sample(n_rays, n_bins, t_near, t_far, rng=None, jitter=True):
    """One sample distance per evenly spaced bin, uniform within the bin.

    With ``jitter`` off, samples sit at bin midpoints.  Deterministic for a
    given generator state.
    """
    if n_bins < 1:
        raise RenderError(f"need at least one bin, got {n_bins}")
    width = (t_far - t_near) / n_bins
    edges = t_near + width * np.arange(n_bins, dtype=np.float64)
    if jitter:
        if rng is None:
            raise RenderError("jittered sampling requires an rng")
        offsets = rng.random((n_rays, n_bins))
    else:
        offsets = np.full((n_rays, n_bins), 0.5)
    return (edges + offsets * width).astype(np.float32)


@dataclasses.dataclass
class CompositeResult:
    color: ad.Value
    weights: ad.Value
    opacity: ad.Value
    depth: np.ndarray
    surface: np.ndarray
    sigma: ad.Value | None = None


def composite(sigma, color, t, t_far, background=(1.0, 1.0, 1.0)):
    """Alpha-composite per-sample densities and colors along each ray.

    ``sigma`` [R, B] and ``color`` [R, B, 3] may be Values (differentiable)
    or arrays; ``t`` [R, B] are the strictly increasing sample distances.
    Deltas are consecutive sample gaps with a final gap to the far bound.
    Pixel color composites onto ``background``; expected depth is the
    weight-averaged sample distance (guarded for near-empty rays) and is
    not differentiated.
    """
    sigma = sigma if isinstance(sigma, ad.Value) else ad.Value(sigma)
    color = color if isinstance(color, ad.Value) else ad.Value(color)
    t = np.asarray(t)
    dtype = sigma.dtype
    if not np.all(np.isfinite(sigma.data)):
        bad = int(np.argwhere(~np.all(np.isfinite(sigma.data), axis=-1))[0][0])
        raise RenderError(f"non-finite density on ray {bad}")
    far_col = np.broadcast_to(np.asarray(t_far, dtype=t.dtype), (t.shape[0], 1))
    delta = np.diff(t, axis=1, append=far_col).astype(dtype)
    if np.any(delta <= 0):
        bad = int(np.argwhere(np.any(delta <= 0, axis=-1))[0][0])
        raise RenderError(f"non-increasing sample distances on ray {bad}")

    tau = ad.mul(sigma, ad.Value(delta, dtype=dtype))
    alpha = ad.sub(1.0, ad.exp(ad.mul(tau, -1.0)))
    trans = ad.exp(ad.mul(ad.cumsum_exclusive(tau, axis=1), -1.0))
    weights = ad.mul(trans, alpha)
    opacity = ad.reduce_sum(weights, axis=1)

    n_rays, n_bins = t.shape
    w3 = ad.reshape(weights, (n_rays, n_bins, 1))
    fg = ad.reduce_sum(ad.mul(w3, color), axis=1)
    bg = np.broadcast_to(np.asarray(background, dtype=dtype), (3,))
    residual = ad.reshape(ad.sub(1.0, opacity), (n_rays, 1))
    out_color = ad.add(fg, ad.mul(residual, ad.Value(bg, dtype=dtype)))

    w_np = weights.data
    acc = w_np.sum(axis=1)
    depth = (w_np * t).sum(axis=1) / np.maximum(acc, DEPTH_GUARD)
    depth = np.where(acc > 0.0, depth, np.inf).astype(np.float32)
    surface = acc >= OPACITY_SURFACE_MIN
    return CompositeResult(out_color, weights, opacity, depth, surface, sigma)


@dataclasses.dataclass
class RenderedView:
    """Full-image render: color, expected depth, opacity, optional bin weights."""

    color: np.ndarray
    depth: np.ndarray
    opacity: np.ndarray
    surface: np.ndarray
    weights: np.ndarray | None
    camera: Camera
    bin_layout: tuple[float, float, int]
    sigmas: np.ndarray | None = None

    @property
    def masked_depth(self):
        """Depth with no-surface pixels set to +inf."""
        return np.where(self.surface, self.depth, np.inf)


def field_points(origins, dirs, t):
    """Expand rays and sample distances into flat point/direction arrays."""
    origins = np.asarray(origins, dtype=np.float32)
    dirs = np.asarray(dirs, dtype=np.float32)
    pts = origins[:, None, :] + dirs[:, None, :] * t[:, :, None]
    n_bins = t.shape[1]
    return pts.reshape(-1, 3), np.repeat(dirs, n_bins, axis=0)


def render_rays(field, origins, dirs, t, t_far, background=(1.0, 1.0, 1.0)):
    """Evaluate the field on jittered samples and composite each ray."""
    pts, dview = field_points(origins, dirs, t)
    sigma, color = field.eval(pts, dview)
    n_rays, n_bins = t.shape
    sigma = ad.reshape(sigma, (n_rays, n_bins))
    color = ad.reshape(color, (n_rays, n_bins, 3))
    return composite(sigma, color, t, t_far, background)


def render_view(
    field,
    camera,
    n_bins,
    seed=0,
    jitter=True,
    retain_weights=False,
    retain_sigma=False,
    background=(1.0, 1.0, 1.0),
    chunk=16384,
    threads=1,
):
    """Render a full camera view (forward only).

    The jitter for every ray is drawn up front from a generator keyed by
    ``seed``, so chunking and thread count do not change the output.
    """
    origins, dirs = generate_rays(camera)
    n_rays = origins.shape[0]
    rng = np.random.default_rng(seed) if jitter else None
    t = stratified_sample(n_rays, n_bins, camera.near, camera.far, rng, jitter)

    colors = np.empty((n_rays, 3), dtype=np.float32)
    depth = np.empty(n_rays, dtype=np.float32)
    opacity = np.empty(n_rays, dtype=np.float32)
    surface = np.empty(n_rays, dtype=bool)
    weights = np.empty((n_rays, n_bins), dtype=np.float32) if retain_weights else None
    sigmas = np.empty((n_rays, n_bins), dtype=np.float32) if retain_sigma else None

    spans = [(s, min(s + chunk, n_rays)) for s in range(0, n_rays, chunk)]

    def run(span):
        lo, hi = span
        res = render_rays(
            field, origins[lo:hi], dirs[lo:hi], t[lo:hi], camera.far, background
        )
        colors[lo:hi] = res.color.data
        depth[lo:hi] = res.depth
        opacity[lo:hi] = res.opacity.data
        surface[lo:hi] = res.surface
        if weights is not None:
            weights[lo:hi] = res.weights.data
        if sigmas is not None:
            sigmas[lo:hi] = res.sigma.data

    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, spans))
    else:
        for span in spans:
            run(span)

    h, w = camera.height, camera.width
    return RenderedView(
        color=colors.reshape(h, w, 3),
        depth=depth.reshape(h, w),
        opacity=opacity.reshape(h, w),
        surface=surface.reshape(h, w),
        weights=weights.reshape(h, w, n_bins) if weights is not None else None,
        sigmas=sigmas.reshape(h, w, n_bins) if sigmas is not None else None,
        camera=camera,
        bin_layout=(camera.near, camera.far, n_bins),
    )
