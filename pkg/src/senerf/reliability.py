"""Per-ray reliability of pseudo labels via cross-view feature consistency.

A pseudo-view pixel with a rendered depth is back-projected into every
known view; the cosine similarity of per-pixel features at the landing
spot, maximized over views, is thresholded into a binary reliability mask.
Thresholds come from a fixed value, an adaptive percentile of the
similarity pool, or are skipped entirely for the unified (soft) variant.

The vectorized pipeline is written to be bit-identical to the per-pixel
reference loop in :func:`reference_reliability_mask`: both run the warp in
float64 and the interpolation/cosine arithmetic in float32, in the same
operation order.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy import ndimage

SIM_SENTINEL = -1.0
MIN_SURFACE_OPACITY = 0.05


class ReliabilityError(ValueError):
    """Empty similarity pools or mismatched mask shapes."""


# ---------------------------------------------------------------------------
# feature extraction


class PyramidExtractor:
    """Multi-scale smoothed-color + gradient features, 5 channels per scale.

    At each downsampling factor the image is blurred, subsampled, reduced
    to [smoothed RGB, |dx|, |dy|] of the luminance, and bilinearly
    upsampled back to full resolution.  Four scales give a 20-channel map
    that is deterministic and needs no pretrained weights.
    """

    def __init__(self, scales=(1, 2, 4, 8)):
        self.scales = tuple(scales)

    @property
    def channels(self):
        return 5 * len(self.scales)

    def extract(self, image):
        image = np.asarray(image, dtype=np.float32)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ReliabilityError(f"expected an HxWx3 image, got {image.shape}")
        h, w = image.shape[:2]
        if h < 16 or w < 16:
            raise ReliabilityError(f"image too small for the pyramid: {h}x{w}")
        maps = []
        for k in self.scales:
            sigma = max(0.5, k / 2.0)
            smooth = ndimage.gaussian_filter(image, sigma=(sigma, sigma, 0.0))
            small = smooth[k // 2 :: k, k // 2 :: k] if k > 1 else smooth
            lum = small @ np.array([0.299, 0.587, 0.114], dtype=np.float32)
            gy, gx = np.gradient(lum.astype(np.float32))
            level = np.concatenate(
                [small, np.abs(gx)[..., None], np.abs(gy)[..., None]], axis=2
            )
            if k > 1:
                level = _upsample_bilinear(level, h, w, k)
            maps.append(level.astype(np.float32))
        return np.concatenate(maps, axis=2)


def _upsample_bilinear(level, h, w, k):
    """Bilinear upsample by factor k, aligning pixel centers."""
    sh, sw = level.shape[:2]
    # source sample i sits at full-res coordinate i*k + k//2
    rows = (np.arange(h, dtype=np.float64) - k // 2) / k
    cols = (np.arange(w, dtype=np.float64) - k // 2) / k
    rows = np.clip(rows, 0, sh - 1)
    cols = np.clip(cols, 0, sw - 1)
    grid_r = np.repeat(rows, w)
    grid_c = np.tile(cols, h)
    out = np.empty((h * w, level.shape[2]), dtype=np.float32)
    for c in range(level.shape[2]):
        out[:, c] = ndimage.map_coordinates(
            level[:, :, c], [grid_r, grid_c], order=1, mode="nearest"
        )
    return out.reshape(h, w, level.shape[2])


def extract_features(image, extractor=None):
    """Per-pixel feature map [H, W, F] for one image; deterministic."""
    return (extractor or PyramidExtractor()).extract(image)


# ---------------------------------------------------------------------------
# projection


def project_pixel(pixel, depth, cam_i, cam_j):
    """Map a continuous pixel of view i to view j via the rendered depth.

    Back-projects ``pixel`` (u, v) to a view-i point at the given depth
    (z-depth along the optical axis scaling the unprojected ray), moves it
    through the relative rigid transform and projects with view j's
    intrinsics.  Returns (u', v') or None when the depth is invalid, the
    point lands behind camera j, or outside its image rectangle.
    """
    if depth is None or not np.isfinite(depth) or depth <= 0.0:
        return None
    u, v = float(pixel[0]), float(pixel[1])
    d = float(depth)
    x = (u - cam_i.cx) / cam_i.fx * d
    y = (v - cam_i.cy) / cam_i.fy * d
    r, t = cam_i.rotation, cam_i.position
    px = r[0, 0] * x + r[0, 1] * y + r[0, 2] * d + t[0]
    py = r[1, 0] * x + r[1, 1] * y + r[1, 2] * d + t[1]
    pz = r[2, 0] * x + r[2, 1] * y + r[2, 2] * d + t[2]
    rj, tj = cam_j.rotation, cam_j.position
    qx, qy, qz = px - tj[0], py - tj[1], pz - tj[2]
    lx = rj[0, 0] * qx + rj[1, 0] * qy + rj[2, 0] * qz
    ly = rj[0, 1] * qx + rj[1, 1] * qy + rj[2, 1] * qz
    lz = rj[0, 2] * qx + rj[1, 2] * qy + rj[2, 2] * qz
    if lz <= 1e-9:
        return None
    up = cam_j.fx * lx / lz + cam_j.cx
    vp = cam_j.fy * ly / lz + cam_j.cy
    if not (0.0 <= up <= cam_j.width and 0.0 <= vp <= cam_j.height):
        return None
    return float(up), float(vp)


def _warp_grid(depth, cam_i, cam_j):
    """Vectorized projection of every pixel center of view i into view j.

    Returns float64 (u', v', z') arrays of shape [H, W]; validity is left
    to the caller.  Arithmetic mirrors :func:`project_pixel`.
    """
    h, w = depth.shape
    u = np.arange(w, dtype=np.float64) + 0.5
    v = np.arange(h, dtype=np.float64) + 0.5
    uu, vv = np.meshgrid(u, v)
    d = depth.astype(np.float64)
    x = (uu - cam_i.cx) / cam_i.fx * d
    y = (vv - cam_i.cy) / cam_i.fy * d
    r, t = cam_i.rotation, cam_i.position
    px = r[0, 0] * x + r[0, 1] * y + r[0, 2] * d + t[0]
    py = r[1, 0] * x + r[1, 1] * y + r[1, 2] * d + t[1]
    pz = r[2, 0] * x + r[2, 1] * y + r[2, 2] * d + t[2]
    rj, tj = cam_j.rotation, cam_j.position
    qx, qy, qz = px - tj[0], py - tj[1], pz - tj[2]
    lx = rj[0, 0] * qx + rj[1, 0] * qy + rj[2, 0] * qz
    ly = rj[0, 1] * qx + rj[1, 1] * qy + rj[2, 1] * qz
    lz = rj[0, 2] * qx + rj[1, 2] * qy + rj[2, 2] * qz
    with np.errstate(divide="ignore", invalid="ignore"):
        up = cam_j.fx * lx / lz + cam_j.cx
        vp = cam_j.fy * ly / lz + cam_j.cy
    return up, vp, lz


def _bilinear_feature(features, gx, gy, ix, iy, W, H):
    """Shared float32 corner blend; gx/gy are feature-grid coordinates."""
    fx = (gx - ix).astype(np.float32)
    fy = (gy - iy).astype(np.float32)
    f00 = features[iy, ix]
    f10 = features[iy, ix + 1]
    f01 = features[iy + 1, ix]
    f11 = features[iy + 1, ix + 1]
    one = np.float32(1.0)
    v0 = f00 * (one - fx)[..., None] + f10 * fx[..., None]
    v1 = f01 * (one - fx)[..., None] + f11 * fx[..., None]
    return v0 * (one - fy)[..., None] + v1 * fy[..., None]


def _cosine_rows(a, b):
    """Channel-sequential float32 cosine along the last axis of a and b."""
    f = a.shape[-1]
    num = np.zeros(a.shape[:-1], dtype=np.float32)
    na = np.zeros(a.shape[:-1], dtype=np.float32)
    nb = np.zeros(a.shape[:-1], dtype=np.float32)
    for k in range(f):
        ak = a[..., k]
        bk = b[..., k]
        num += ak * bk
        na += ak * ak
        nb += bk * bk
    denom = np.sqrt(na) * np.sqrt(nb)
    with np.errstate(divide="ignore", invalid="ignore"):
        sim = num / denom
    return np.where(denom > 0.0, sim, np.float32(0.0)).astype(np.float32)


def similarity_map(
    pseudo_features,
    depth,
    pseudo_cam,
    known_features,
    known_cams,
    surface=None,
):
    """Max cross-view feature similarity per pseudo-view pixel.

    ``depth`` is the pseudo view's rendered depth; pixels without a usable
    surface (``surface`` false, or non-finite/non-positive depth) get no
    projections.  For each known view the pixel's center is warped in, the
    known feature map is sampled bilinearly and a float32 cosine taken.
    Returns (similarity [H, W] with -1 where no projection landed,
    valid-projection count [H, W]).
    """
    h, w = depth.shape
    usable = np.isfinite(depth) & (depth > 0.0)
    if surface is not None:
        usable &= surface
    best = np.full((h, w), -np.inf, dtype=np.float32)
    count = np.zeros((h, w), dtype=np.int32)
    pf = np.asarray(pseudo_features, dtype=np.float32)
    for feats, cam in zip(known_features, known_cams):
        kf = np.asarray(feats, dtype=np.float32)
        kh, kw = kf.shape[:2]
        up, vp, lz = _warp_grid(np.where(usable, depth, 1.0), pseudo_cam, cam)
        gx = up - 0.5
        gy = vp - 0.5
        valid = usable & (lz > 1e-9)
        valid &= (gx >= 0.0) & (gx <= kw - 1.0) & (gy >= 0.0) & (gy <= kh - 1.0)
        gx = np.where(valid, gx, 0.0)
        gy = np.where(valid, gy, 0.0)
        ix = np.minimum(np.floor(gx).astype(np.int64), kw - 2)
        iy = np.minimum(np.floor(gy).astype(np.int64), kh - 2)
        sampled = _bilinear_feature(kf, gx, gy, ix, iy, kw, kh)
        sim = _cosine_rows(pf, sampled)
        best = np.where(valid, np.maximum(best, sim), best)
        count += valid.astype(np.int32)
    sims = np.where(count > 0, best, np.float32(SIM_SENTINEL)).astype(np.float32)
    return sims, count


# ---------------------------------------------------------------------------
# thresholds and masks


@dataclasses.dataclass
class ThresholdPolicy:
    """Reliability thresholding: fixed tau, adaptive percentile, or unified.

    ``alpha_at`` applies the per-iteration curriculum increment (iteration
    counts from 0).  ``gt`` is the oracle mode driven by ground-truth
    color differences instead of feature similarity.
    """

    kind: str = "adaptive"
    tau0: float = 0.6
    alpha0: float = 0.15
    alpha_step: float = 0.05
    gt_tolerance: float = 0.1

    def __post_init__(self):
        if self.kind not in ("fixed", "adaptive", "unified", "gt"):
            raise ReliabilityError(f"unknown threshold policy {self.kind!r}")
        if not -1.0 <= self.tau0 <= 1.0:
            raise ReliabilityError(f"tau0 must lie in [-1, 1], got {self.tau0}")

    def alpha_at(self, iteration):
        return min(self.alpha0 + self.alpha_step * iteration, 1.0)


def nearest_rank_percentile(values, fraction):
    """Nearest-rank percentile of a multiset at level ``fraction`` in [0, 1]."""
    data = np.sort(np.asarray(values).ravel())
    if data.size == 0:
        raise ReliabilityError("percentile of an empty multiset")
    rank = int(np.ceil(fraction * data.size))
    return float(data[max(rank, 1) - 1])


def compute_threshold(similarities, policy, iteration=0):
    """Threshold for one pseudo-label set under the given policy.

    Fixed returns tau0; adaptive returns the nearest-rank (1 - alpha)
    percentile of the pooled valid similarities; unified has no hard
    threshold and returns None.
    """
    if policy.kind == "fixed":
        return policy.tau0
    if policy.kind == "unified":
        return None
    if policy.kind == "gt":
        return None
    values = np.asarray(similarities, dtype=np.float32).ravel()
    values = values[values > SIM_SENTINEL]
    if values.size == 0:
        raise ReliabilityError(
            "adaptive threshold: no valid similarities in this pseudo-label set"
        )
    alpha = policy.alpha_at(iteration)
    return nearest_rank_percentile(values, 1.0 - alpha)


def build_mask(similarity, counts, tau):
    """Binary reliability mask: at least one valid pair with similarity > tau."""
    similarity = np.asarray(similarity, dtype=np.float32)
    counts = np.asarray(counts)
    if similarity.shape != counts.shape:
        raise ReliabilityError(
            f"similarity {similarity.shape} and counts {counts.shape} differ"
        )
    return ((counts >= 1) & (similarity > np.float32(tau))).astype(np.uint8)


def reference_reliability_mask(
    pseudo_features, depth, pseudo_cam, known_features, known_cams, tau, surface=None
):
    """Literal per-pixel transcription of the reliability loop.

    Slow by design; the vectorized pipeline is tested to be bit-identical
    to this on small inputs.
    """
    h, w = depth.shape
    mask = np.zeros((h, w), dtype=np.uint8)
    pf = np.asarray(pseudo_features, dtype=np.float32)
    tau32 = np.float32(tau)
    for i in range(h):
        for j in range(w):
            d = depth[i, j]
            if surface is not None and not surface[i, j]:
                continue
            if not np.isfinite(d) or d <= 0.0:
                continue
            best = None
            for feats, cam in zip(known_features, known_cams):
                kf = np.asarray(feats, dtype=np.float32)
                kh, kw = kf.shape[:2]
                hit = project_pixel((j + 0.5, i + 0.5), float(d), pseudo_cam, cam)
                if hit is None:
                    continue
                gx, gy = hit[0] - 0.5, hit[1] - 0.5
                if not (0.0 <= gx <= kw - 1.0 and 0.0 <= gy <= kh - 1.0):
                    continue
                ix = min(int(np.floor(gx)), kw - 2)
                iy = min(int(np.floor(gy)), kh - 2)
                vec = _bilinear_feature(
                    kf,
                    np.float64(gx),
                    np.float64(gy),
                    np.int64(ix),
                    np.int64(iy),
                    kw,
                    kh,
                )
                sim = _cosine_rows(pf[i, j], vec)
                if best is None or sim > best:
                    best = sim
            if best is not None and best > tau32:
                mask[i, j] = 1
    return mask


def mask_metrics(pred, truth):
    """Precision, recall and false-positive rate of a predicted binary mask.

    Degenerate denominators: precision is 1 with no predicted positives,
    recall is 1 with no actual positives, FPR is 0 with no negatives.
    """
    pred = np.asarray(pred) > 0
    truth = np.asarray(truth) > 0
    if pred.shape != truth.shape:
        raise ReliabilityError(f"mask shapes differ: {pred.shape} vs {truth.shape}")
    tp = np.count_nonzero(pred & truth)
    fp = np.count_nonzero(pred & ~truth)
    fn = np.count_nonzero(~pred & truth)
    tn = np.count_nonzero(~pred & ~truth)
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    fpr = fp / (fp + tn) if fp + tn else 0.0
    return float(precision), float(recall), float(fpr)


def gt_mask(rendered, ground_truth, color_tolerance):
    """Oracle reliability: 1 where the rendered color is within tolerance.

    Uses the L2 color difference per pixel with a strict inequality, so a
    zero tolerance marks everything unreliable.
    """
    rendered = np.asarray(rendered, dtype=np.float32)
    ground_truth = np.asarray(ground_truth, dtype=np.float32)
    if rendered.shape != ground_truth.shape:
        raise ReliabilityError(
            f"image shapes differ: {rendered.shape} vs {ground_truth.shape}"
        )
    diff = np.linalg.norm(rendered - ground_truth, axis=-1)
    return (diff < color_tolerance).astype(np.uint8)
