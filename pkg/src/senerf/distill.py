"""Training losses for teacher-student ray distillation.

Reliable pseudo rays are distilled directly (color plus per-bin geometry);
unreliable rays are pulled toward a Gaussian-weighted average of their
reliable neighbors' geometry.  A soft "unified" variant blends the direct
and neighbor terms continuously by similarity instead of using a hard
mask.  Geometry targets are per-bin compositing weights by default, with
raw densities available behind a switch at label-generation time.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import autodiff as ad


class DistillError(ValueError):
    """Mismatched ray sets or bin layouts between teacher and student."""


@dataclasses.dataclass
class DistillWeights:
    """Multipliers for the color / geometry / prior terms of the total loss."""

    color: float = 1.0
    geometry: float = 1.0
    prior: float = 0.005

    def __post_init__(self):
        if min(self.color, self.geometry, self.prior) < 0:
            raise DistillError("distillation weights must be non-negative")


@dataclasses.dataclass
class GaussianKernel:
    """Discretized isotropic Gaussian over a QxQ window, center excluded.

    ``weights[dx + Q//2, dy + Q//2]`` is the neighbor weight at offset
    (dx, dy); the center entry is zero so a ray never regularizes itself.
    """

    size: int
    weights: np.ndarray

    def offsets(self):
        half = self.size // 2
        out = []
        for dx in range(-half, half + 1):
            for dy in range(-half, half + 1):
                if dx == 0 and dy == 0:
                    continue
                out.append((dx, dy, float(self.weights[dx + half, dy + half])))
        return out


def gaussian_kernel(size=3, std=1.0):
    if size < 1 or size % 2 == 0:
        raise DistillError(f"kernel size must be odd and positive, got {size}")
    half = size // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    dx, dy = np.meshgrid(ax, ax, indexing="ij")
    w = np.exp(-(dx**2 + dy**2) / (2.0 * std**2)) / np.sqrt(2.0 * np.pi)
    w[half, half] = 0.0
    return GaussianKernel(size, w)


def _masked_sqnorm(diff, mask):
    if mask is None:
        return ad.sqnorm(diff)
    m = np.asarray(mask, dtype=diff.dtype)
    while m.ndim < diff.data.ndim:
        m = m[..., None]
    return ad.reduce_sum(ad.mul(ad.mul(diff, diff), ad.Value(m, dtype=diff.dtype)))


def photometric_loss(rendered, target):
    """Sum of squared color residuals over a ray batch."""
    rendered = rendered if isinstance(rendered, ad.Value) else ad.Value(rendered)
    target = np.asarray(target, dtype=rendered.dtype)
    if rendered.shape != target.shape:
        raise DistillError(
            f"photometric: rendered {rendered.shape} vs target {target.shape}"
        )
    return ad.sqnorm(ad.sub(rendered, ad.Value(target, dtype=rendered.dtype)))


def reliable_color_loss(student_colors, teacher_colors, mask):
    """Masked color distillation: reliable rays follow the teacher's color."""
    student_colors = (
        student_colors
        if isinstance(student_colors, ad.Value)
        else ad.Value(student_colors)
    )
    diff = ad.sub(
        student_colors, ad.Value(np.asarray(teacher_colors), dtype=student_colors.dtype)
    )
    return _masked_sqnorm(diff, mask)


def reliable_geometry_loss(student_weights, teacher_weights, mask):
    """Masked per-bin geometry distillation between matching bin layouts."""
    student_weights = (
        student_weights
        if isinstance(student_weights, ad.Value)
        else ad.Value(student_weights)
    )
    teacher_weights = np.asarray(teacher_weights)
    if student_weights.shape != teacher_weights.shape:
        raise DistillError(
            "geometry distillation: bin layouts differ "
            f"({student_weights.shape} vs {teacher_weights.shape})"
        )
    diff = ad.sub(
        student_weights, ad.Value(teacher_weights, dtype=student_weights.dtype)
    )
    return _masked_sqnorm(diff, mask)


def prior_geometry_loss(student_weights, prior_targets, active):
    """Pull unreliable rays toward their neighborhood prior.

    ``active`` flags rays that are unreliable and have at least one
    reliable neighbor; rays without neighbors are skipped entirely.
    """
    student_weights = (
        student_weights
        if isinstance(student_weights, ad.Value)
        else ad.Value(student_weights)
    )
    prior_targets = np.asarray(prior_targets)
    if student_weights.shape != prior_targets.shape:
        raise DistillError(
            "prior distillation: bin layouts differ "
            f"({student_weights.shape} vs {prior_targets.shape})"
        )
    diff = ad.sub(
        student_weights, ad.Value(prior_targets, dtype=student_weights.dtype)
    )
    return _masked_sqnorm(diff, np.asarray(active, dtype=np.float32))


def gaussian_weighted_density(bin_values, mask, pixel, kernel):
    """Neighborhood prior for one unreliable pixel, or None without neighbors.

    ``bin_values`` is the teacher's per-bin geometry on the full view grid
    [H, W, B]; only reliable neighbors inside the kernel window contribute,
    weighted by the Gaussian and renormalized.
    """
    i, j = pixel
    h, w = mask.shape
    num = None
    denom = 0.0
    for dx, dy, g in kernel.offsets():
        x, y = i + dx, j + dy
        if not (0 <= x < h and 0 <= y < w):
            continue
        if not mask[x, y]:
            continue
        contrib = g * bin_values[x, y]
        num = contrib if num is None else num + contrib
        denom += g
    if num is None or denom <= 0.0:
        return None
    return num / denom


def gaussian_prior_map(bin_values, mask, kernel):
    """Vectorized neighborhood prior for every pixel of a view.

    Returns (targets [H, W, B], has_neighbor [H, W]); pixels without any
    reliable neighbor get zero targets and a false flag.  Matches
    :func:`gaussian_weighted_density` pixel for pixel.
    """
    h, w, b = bin_values.shape
    half = kernel.size // 2
    pad_vals = np.pad(bin_values, ((half, half), (half, half), (0, 0)))
    pad_mask = np.pad(mask.astype(np.float64), half)
    num = np.zeros((h, w, b), dtype=np.float64)
    denom = np.zeros((h, w), dtype=np.float64)
    for dx, dy, g in kernel.offsets():
        m = pad_mask[half + dx : half + dx + h, half + dy : half + dy + w]
        v = pad_vals[half + dx : half + dx + h, half + dy : half + dy + w]
        num += (g * m)[..., None] * v
        denom += g * m
    has = denom > 0.0
    targets = np.where(has[..., None], num / np.maximum(denom, 1e-30)[..., None], 0.0)
    return targets.astype(np.float32), has


def unified_geometry_loss(
    student_weights, direct_targets, sims, neighbor_targets, neighbor_weights
):
    """Soft geometry distillation blending direct and neighbor terms by similarity.

    Per ray: s * ||direct - student||^2 summed over bins, plus (1 - s)
    times the neighbor-weighted same quantity against each neighbor's
    teacher geometry.  ``neighbor_weights`` already carry the
    max(delta-similarity, 0) Gaussian normalization and sum to 1 per ray
    (or to 0 when the ray has no better neighbor, dropping the term).
    """
    student_weights = (
        student_weights
        if isinstance(student_weights, ad.Value)
        else ad.Value(student_weights)
    )
    dtype = student_weights.dtype
    sims = np.clip(np.asarray(sims, dtype=np.float32), 0.0, 1.0)
    direct_targets = np.asarray(direct_targets)
    if student_weights.shape != direct_targets.shape:
        raise DistillError(
            "unified distillation: bin layouts differ "
            f"({student_weights.shape} vs {direct_targets.shape})"
        )
    diff = ad.sub(student_weights, ad.Value(direct_targets, dtype=dtype))
    direct = ad.reduce_sum(
        ad.mul(ad.mul(diff, diff), ad.Value(sims[:, None], dtype=dtype))
    )

    n_rays, n_bins = student_weights.shape
    k = neighbor_weights.shape[1]
    s3 = ad.reshape(student_weights, (n_rays, 1, n_bins))
    ndiff = ad.sub(s3, ad.Value(np.asarray(neighbor_targets), dtype=dtype))
    per_pair = ad.mul(ad.mul(ndiff, ndiff), ad.Value(
        np.asarray(neighbor_weights, dtype=np.float32)[:, :, None], dtype=dtype
    ))
    neighbor = ad.reduce_sum(
        ad.mul(
            ad.reduce_sum(ad.reshape(per_pair, (n_rays, k * n_bins)), axis=1),
            ad.Value(1.0 - sims, dtype=dtype),
        )
    )
    return ad.add(direct, neighbor)


def unified_color_loss(student_colors, teacher_colors, sims):
    """Similarity-weighted color distillation for the unified variant."""
    sims = np.clip(np.asarray(sims, dtype=np.float32), 0.0, 1.0)
    return reliable_color_loss(student_colors, teacher_colors, sims)


def unified_neighbor_weights(sims, kernel):
    """Per-ray neighbor indices and normalized blend weights for a view grid.

    For pixel (i, j), neighbor (x, y) inside the kernel window gets weight
    max(s_xy - s_ij, 0) * g(x, y) before normalization.  Rays whose
    normalizer is zero get all-zero weights (their neighbor term drops).
    Returns (flat neighbor indices [H*W, K], weights [H*W, K]); invalid
    neighbors point at index 0 with zero weight.
    """
    h, w = sims.shape
    offsets = kernel.offsets()
    k = len(offsets)
    idx = np.zeros((h * w, k), dtype=np.int64)
    wts = np.zeros((h * w, k), dtype=np.float32)
    s = np.asarray(sims, dtype=np.float64)
    for n, (dx, dy, g) in enumerate(offsets):
        xs = np.arange(h)[:, None] + dx
        ys = np.arange(w)[None, :] + dy
        inside = (xs >= 0) & (xs < h) & (ys >= 0) & (ys < w)
        xs_c = np.clip(xs, 0, h - 1)
        ys_c = np.clip(ys, 0, w - 1)
        ds = s[xs_c, ys_c] - s
        wts[:, n] = (np.maximum(ds, 0.0) * g * inside).reshape(-1)
        idx[:, n] = (xs_c * w + ys_c).reshape(-1) * inside.reshape(-1)
    norm = wts.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        normed = wts / norm
    return idx, np.where(norm > 0.0, normed, 0.0).astype(np.float32)


def sigmoid_weight(similarity, beta):
    """Soft reliability weight 1 / (1 + exp(-beta (s - 0.7)))."""
    if beta <= 0:
        raise DistillError(f"beta must be positive, got {beta}")
    return 1.0 / (1.0 + np.exp(-beta * (np.asarray(similarity, dtype=np.float64) - 0.7)))


@dataclasses.dataclass
class PseudoRayBatch:
    """Frozen teacher targets for one batch of pseudo rays.

    Geometry targets are per-bin teacher values (compositing weights by
    default); ``prior_active`` marks unreliable rays with usable
    neighborhood priors.  The unified fields are None under hard-mask
    policies.
    """

    teacher_colors: np.ndarray
    teacher_bins: np.ndarray
    mask: np.ndarray
    prior_targets: np.ndarray
    prior_active: np.ndarray
    sims: np.ndarray | None = None
    neighbor_targets: np.ndarray | None = None
    neighbor_weights: np.ndarray | None = None


def total_student_loss(
    known_colors,
    known_targets,
    pseudo_colors,
    pseudo_weights,
    pseudo: PseudoRayBatch | None,
    weights: DistillWeights,
    mode="masked",
):
    """Photometric supervision plus the configured distillation terms.

    Returns (total, parts) where ``parts`` maps term names to plain
    floats for logging.  With no pseudo rays the total reduces to the
    photometric term alone.
    """
    total = photometric_loss(known_colors, known_targets)
    parts = {"photometric": float(total.data)}
    if pseudo is None:
        parts.update(reliable_color=0.0, reliable_geometry=0.0, prior_geometry=0.0)
        return total, parts

    if mode == "masked":
        mask = pseudo.mask.astype(np.float32)
        lc = reliable_color_loss(pseudo_colors, pseudo.teacher_colors, mask)
        lg = reliable_geometry_loss(pseudo_weights, pseudo.teacher_bins, mask)
        lp = prior_geometry_loss(
            pseudo_weights, pseudo.prior_targets, pseudo.prior_active
        )
        parts["reliable_color"] = float(lc.data)
        parts["reliable_geometry"] = float(lg.data)
        parts["prior_geometry"] = float(lp.data)
        total = ad.add(
            total,
            ad.add(
                ad.add(ad.mul(lc, weights.color), ad.mul(lg, weights.geometry)),
                ad.mul(lp, weights.prior),
            ),
        )
    elif mode == "unified":
        lc = unified_color_loss(pseudo_colors, pseudo.teacher_colors, pseudo.sims)
        lg = unified_geometry_loss(
            pseudo_weights,
            pseudo.teacher_bins,
            pseudo.sims,
            pseudo.neighbor_targets,
            pseudo.neighbor_weights,
        )
        parts["reliable_color"] = float(lc.data)
        parts["reliable_geometry"] = float(lg.data)
        parts["prior_geometry"] = 0.0
        total = ad.add(
            total,
            ad.add(ad.mul(lc, weights.color), ad.mul(lg, weights.geometry)),
        )
    else:
        raise DistillError(f"unknown distillation mode {mode!r}")
    return total, parts
