"""End-to-end gradient validation of the full training objective.

Builds a tiny but complete scenario (known rays plus pseudo rays with
every distillation branch active, rendered through a small tri-plane
field) and compares analytic gradients against central differences.  Used
by the CLI's grad-check command and the acceptance suite.
"""

from __future__ import annotations

import time

import numpy as np

from . import autodiff as ad
from . import distill
from .fields import KPlanesConfig, KPlanesField
from .renderer import render_rays, stratified_sample


def build_total_loss_case(dtype=np.float32, seed=0, n_rays=8, n_bins=16):
    """A deterministic closure computing the full student objective.

    Half the rays carry photometric supervision, half are pseudo rays with
    a frozen teacher's colors and bin weights; masks split those into
    reliable and unreliable-with-prior so the color, geometry and prior
    terms all contribute.  Returns (fn, parameters).
    """
    rng = np.random.default_rng(seed)
    cfg = KPlanesConfig(resolution=8, features=4, hidden=16, geo_features=7)
    student = KPlanesField(cfg, seed=seed, dtype=dtype)
    teacher = KPlanesField(cfg, seed=seed + 1, dtype=dtype)

    n_known = n_rays // 2
    n_pseudo = n_rays - n_known
    origins = rng.uniform(-0.2, 0.2, size=(n_rays, 3))
    origins[:, 0] -= 2.5
    dirs = rng.normal(size=(n_rays, 3))
    dirs[:, 0] = np.abs(dirs[:, 0]) + 1.0
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = origins.astype(np.float32)
    dirs = dirs.astype(np.float32)
    t = stratified_sample(n_rays, n_bins, 1.5, 4.5, rng)
    t_far = 4.5
    known_targets = rng.uniform(0.0, 1.0, size=(n_known, 3)).astype(np.float32)

    teacher_res = render_rays(
        teacher, origins[n_known:], dirs[n_known:], t[n_known:], t_far
    )
    teacher_colors = np.array(teacher_res.color.data, dtype=np.float32)
    teacher_bins = np.array(teacher_res.weights.data, dtype=np.float32)
    mask = np.zeros(n_pseudo, dtype=np.uint8)
    mask[: n_pseudo // 2] = 1
    prior_targets = np.roll(teacher_bins, 1, axis=0).astype(np.float32)
    prior_active = mask == 0
    batch = distill.PseudoRayBatch(
        teacher_colors=teacher_colors,
        teacher_bins=teacher_bins,
        mask=mask,
        prior_targets=prior_targets,
        prior_active=prior_active,
    )
    weights = distill.DistillWeights()

    def fn():
        res_known = render_rays(
            student, origins[:n_known], dirs[:n_known], t[:n_known], t_far
        )
        res_pseudo = render_rays(
            student, origins[n_known:], dirs[n_known:], t[n_known:], t_far
        )
        total, _ = distill.total_student_loss(
            res_known.color,
            known_targets,
            res_pseudo.color,
            res_pseudo.weights,
            batch,
            weights,
        )
        return total

    return fn, student.parameters()


def run_grad_check(double=False, seed=0, samples=24, eps=None):
    """Gradient check of the full objective; returns (max_rel_err, seconds)."""
    dtype = np.float64 if double else np.float32
    fn, params = build_total_loss_case(dtype=dtype, seed=seed)
    started = time.perf_counter()
    err = ad.grad_check(
        fn, params, eps=eps, n_samples=samples, rng=np.random.default_rng(seed)
    )
    return err, time.perf_counter() - started
