"""Iterative teacher-student training.

Each iteration renders pseudo labels from viewpoints near the known ones,
scores their per-ray reliability, trains a freshly initialized student on
the known views plus the labels, and promotes the student to teacher.
Every random draw is keyed by (seed, phase, stream), so reruns with the
same config are bit-identical and a student trained with zero pseudo rays
consumes exactly the same random streams as a plain teacher run.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import distill, imgio, metrics, reliability
from .fields import KPlanesConfig, MlpConfig, make_field, save_checkpoint
from .renderer import generate_rays, render_rays, render_view, stratified_sample
from .scenedata import camera_from_pose, oracle_render, pose_of_camera


class TrainingError(RuntimeError):
    """Divergence or an inconsistent training setup."""


@dataclasses.dataclass
class OptimConfig:
    lr_grid: float = 2e-2
    lr_net: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    cosine_decay: bool = True


@dataclasses.dataclass
class ViewRangeSchedule:
    """Progressive pseudo-view range (degrees around each known view)."""

    initial_deg: float = 10.0
    growth_deg: float = 10.0

    def range_at(self, iteration):
        return self.initial_deg + self.growth_deg * iteration


@dataclasses.dataclass
class SelfTrainConfig:
    iterations: int = 2
    steps_per_iteration: int = 600
    batch_rays: int = 1024
    n_bins: int = 32
    pseudo_views_per_iteration: int = 8
    pseudo_ray_fraction: float = 0.5
    variant: str = "kplanes"
    field: KPlanesConfig | MlpConfig | None = None
    weights: distill.DistillWeights = dataclasses.field(
        default_factory=distill.DistillWeights
    )
    policy: reliability.ThresholdPolicy = dataclasses.field(
        default_factory=reliability.ThresholdPolicy
    )
    view_range: ViewRangeSchedule = dataclasses.field(default_factory=ViewRangeSchedule)
    optimizer: OptimConfig = dataclasses.field(default_factory=OptimConfig)
    kernel_size: int = 3
    distill_target: str = "weights"
    background: tuple = (1.0, 1.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise TrainingError(f"need at least one iteration, got {self.iterations}")
        if self.field is None:
            self.field = KPlanesConfig() if self.variant == "kplanes" else MlpConfig()
        if self.policy.kind == "adaptive":
            final = self.policy.alpha0 + self.policy.alpha_step * (self.iterations - 1)
            if final > 1.0 + 1e-9:
                raise TrainingError(
                    f"alpha schedule exceeds 1 at the last iteration ({final:.2f})"
                )
        if self.distill_target not in ("weights", "sigma"):
            raise TrainingError(f"unknown distill target {self.distill_target!r}")
        if not 0.0 <= self.pseudo_ray_fraction < 1.0:
            raise TrainingError("pseudo_ray_fraction must lie in [0, 1)")

    def make_field(self, phase_key):
        field = make_field(self.variant, self.field, seed=[self.seed, phase_key, 0])
        if self.variant == "mlp":
            field.config.anneal_horizon = max(self.steps_per_iteration // 4, 1)
            field.anneal.horizon = field.config.anneal_horizon
        return field


class Adam:
    """Adaptive-moment optimizer with per-group learning rates.

    With ``total_steps`` set, each group's rate follows a cosine decay to
    zero across the run.
    """

    def __init__(self, groups, beta1=0.9, beta2=0.999, eps=1e-8, total_steps=None):
        self.groups = [(list(params), lr) for params, lr in groups if params]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.total_steps = total_steps
        self.t = 0
        self.moments = {
            id(p): (np.zeros_like(p.data), np.zeros_like(p.data))
            for params, _ in self.groups
            for p in params
        }

    def _scale(self):
        if not self.total_steps:
            return 1.0
        frac = min(self.t / self.total_steps, 1.0)
        return 0.5 * (1.0 + np.cos(np.pi * frac))

    def step(self):
        scale = self._scale()
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for params, lr in self.groups:
            rate = lr * scale
            for p in params:
                m, v = self.moments[id(p)]
                m *= b1
                m += (1.0 - b1) * p.grad
                v *= b2
                v += (1.0 - b2) * np.square(p.grad)
                p.data -= rate * (m / bias1) / (np.sqrt(v / bias2) + self.eps)

    def zero_grad(self):
        for params, _ in self.groups:
            for p in params:
                p.reset_grad()


def make_optimizer(field, cfg: SelfTrainConfig, total_steps=None):
    groups = field.param_groups()
    return Adam(
        [(groups["grid"], cfg.optimizer.lr_grid), (groups["net"], cfg.optimizer.lr_net)],
        beta1=cfg.optimizer.beta1,
        beta2=cfg.optimizer.beta2,
        eps=cfg.optimizer.eps,
        total_steps=total_steps if cfg.optimizer.cosine_decay else None,
    )


@dataclasses.dataclass
class RayStore:
    """Flattened per-pixel rays and colors of a posed image set."""

    origins: np.ndarray
    dirs: np.ndarray
    colors: np.ndarray
    near: float
    far: float

    @classmethod
    def from_dataset(cls, dataset):
        origins, dirs, colors = [], [], []
        near = dataset.cameras[0].near
        far = dataset.cameras[0].far
        for image, cam in zip(dataset.images, dataset.cameras):
            if (cam.near, cam.far) != (near, far):
                raise TrainingError("all cameras in a run must share near/far bounds")
            o, d = generate_rays(cam)
            origins.append(o)
            dirs.append(d)
            colors.append(image.reshape(-1, 3))
        return cls(
            origins=np.concatenate(origins).astype(np.float32),
            dirs=np.concatenate(dirs).astype(np.float32),
            colors=np.concatenate(colors).astype(np.float32),
            near=near,
            far=far,
        )

    def __len__(self):
        return self.origins.shape[0]


def param_hash(field):
    """Deterministic digest of a field's parameter buffers."""
    digest = hashlib.sha256()
    for p in field.parameters():
        digest.update(p.name.encode())
        digest.update(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# pseudo labels


@dataclasses.dataclass
class PseudoView:
    """One pseudo view's frozen teacher outputs and reliability data."""

    camera: object
    color: np.ndarray
    depth: np.ndarray
    surface: np.ndarray
    opacity: np.ndarray
    bin_values: np.ndarray
    similarity: np.ndarray
    counts: np.ndarray
    mask: np.ndarray
    prior_targets: np.ndarray
    prior_active: np.ndarray
    neighbor_idx: np.ndarray | None = None
    neighbor_weights: np.ndarray | None = None


@dataclasses.dataclass
class PseudoLabelSet:
    """All pseudo views of one iteration plus the threshold bookkeeping."""

    views: list
    bin_layout: tuple
    policy_kind: str
    tau: float | None
    alpha: float | None
    teacher_hash: str

    @property
    def n_rays(self):
        return sum(v.mask.size for v in self.views)

    def reliable_fraction(self):
        total = sum(v.mask.size for v in self.views)
        ones = sum(int(v.mask.sum()) for v in self.views)
        return ones / total if total else 0.0

    def flatten(self, unified=False):
        """Concatenate per-ray training arrays across views."""
        origins, dirs = [], []
        colors, bins, masks = [], [], []
        priors, prior_on, sims = [], [], []
        nb_t, nb_w = [], []
        for view in self.views:
            o, d = generate_rays(view.camera)
            origins.append(o)
            dirs.append(d)
            colors.append(view.color.reshape(-1, 3))
            n_bins = view.bin_values.shape[-1]
            flat_bins = view.bin_values.reshape(-1, n_bins)
            bins.append(flat_bins)
            masks.append(view.mask.reshape(-1))
            priors.append(view.prior_targets.reshape(-1, n_bins))
            prior_on.append(view.prior_active.reshape(-1))
            sims.append(view.similarity.reshape(-1))
            if unified:
                nb_t.append(flat_bins[view.neighbor_idx])
                nb_w.append(view.neighbor_weights)
        return {
            "origins": np.concatenate(origins),
            "dirs": np.concatenate(dirs),
            "colors": np.concatenate(colors),
            "bins": np.concatenate(bins),
            "mask": np.concatenate(masks),
            "prior_targets": np.concatenate(priors),
            "prior_active": np.concatenate(prior_on),
            "sims": np.concatenate(sims),
            "neighbor_targets": np.concatenate(nb_t) if unified else None,
            "neighbor_weights": np.concatenate(nb_w) if unified else None,
        }


def select_pseudo_views(known_cameras, iteration, schedule, rng, count=8):
    """Sample pseudo cameras around the known views' spherical placements.

    Each pick perturbs one known view's (phi, theta) uniformly within the
    iteration's range at the same radius; draws that coincide exactly with
    a known pose are redrawn.  A zero range returns plain copies.
    """
    known_poses = [pose_of_camera(cam) for cam in known_cameras]
    span = schedule.range_at(iteration)
    out = []
    base_cam = known_cameras[0]
    for i in range(count):
        base = known_poses[i % len(known_poses)]
        for _ in range(32):
            if span == 0.0:
                phi, theta = base.phi, base.theta
            else:
                phi = base.phi + rng.uniform(-span, span)
                theta = float(np.clip(base.theta + rng.uniform(-span, span), -89.0, 89.0))
            clash = any(
                abs(phi - k.phi) < 1e-12 and abs(theta - k.theta) < 1e-12
                for k in known_poses
            )
            if not clash or span == 0.0:
                break
        out.append(
            camera_from_pose(
                dataclasses.replace(base, phi=phi, theta=theta),
                width=base_cam.width,
                height=base_cam.height,
                fov_deg=float(
                    np.degrees(2.0 * np.arctan(0.5 * base_cam.width / base_cam.fx))
                ),
                near=base_cam.near,
                far=base_cam.far,
            )
        )
    return out


def generate_pseudo_labels(
    teacher,
    pseudo_cameras,
    known_images,
    known_cameras,
    cfg: SelfTrainConfig,
    iteration=0,
    extractor=None,
    known_features=None,
    scene=None,
):
    """Render, score and freeze pseudo labels for one iteration.

    Under the ``gt`` policy the mask comes from oracle color differences
    (``scene`` required); otherwise features of the rendered views are
    matched against the known views and thresholded per policy.
    """
    policy = cfg.policy
    extractor = extractor or reliability.PyramidExtractor()
    if known_features is None and policy.kind != "gt":
        known_features = [extractor.extract(img) for img in known_images]
    kernel = distill.gaussian_kernel(cfg.kernel_size)

    renders, sims_all, counts_all = [], [], []
    for v, cam in enumerate(pseudo_cameras):
        view = render_view(
            teacher,
            cam,
            cfg.n_bins,
            seed=[cfg.seed, 90 + iteration, v],
            jitter=True,
            retain_weights=True,
            retain_sigma=cfg.distill_target == "sigma",
            background=cfg.background,
        )
        renders.append(view)
        if policy.kind == "gt":
            sims_all.append(np.full(view.depth.shape, reliability.SIM_SENTINEL, np.float32))
            counts_all.append(np.zeros(view.depth.shape, np.int32))
        else:
            feats = extractor.extract(view.color)
            sims, counts = reliability.similarity_map(
                feats, view.depth, cam, known_features, known_cameras, view.surface
            )
            sims_all.append(sims)
            counts_all.append(counts)

    alpha = policy.alpha_at(iteration) if policy.kind == "adaptive" else None
    if policy.kind == "adaptive":
        pool = np.concatenate([s[s > reliability.SIM_SENTINEL] for s in sims_all])
        if pool.size == 0:
            raise reliability.ReliabilityError(
                f"pseudo-label set at iteration {iteration} has no valid similarities"
            )
        tau = reliability.nearest_rank_percentile(pool, 1.0 - alpha)
    elif policy.kind == "fixed":
        tau = policy.tau0
    else:
        tau = None

    views = []
    for view, sims, counts, cam in zip(renders, sims_all, counts_all, pseudo_cameras):
        if policy.kind == "gt":
            if scene is None:
                raise TrainingError("gt policy requires the oracle scene")
            oracle_img, _, _ = oracle_render(scene, cam)
            mask = reliability.gt_mask(view.color, oracle_img, policy.gt_tolerance)
        elif policy.kind == "unified":
            mask = reliability.build_mask(sims, counts, 0.7)
        else:
            mask = reliability.build_mask(sims, counts, tau)
        bin_values = view.sigmas if cfg.distill_target == "sigma" else view.weights
        if policy.kind == "unified":
            prior_targets = np.zeros_like(bin_values)
            prior_active = np.zeros(mask.shape, dtype=bool)
            nidx, nwts = distill.unified_neighbor_weights(sims, kernel)
        else:
            prior_targets, has = distill.gaussian_prior_map(
                bin_values, mask > 0, kernel
            )
            prior_active = (mask == 0) & has
            nidx, nwts = None, None
        views.append(
            PseudoView(
                camera=cam,
                color=view.color,
                depth=view.masked_depth,
                surface=view.surface,
                opacity=view.opacity,
                bin_values=bin_values,
                similarity=sims,
                counts=counts,
                mask=mask,
                prior_targets=prior_targets,
                prior_active=prior_active,
                neighbor_idx=nidx,
                neighbor_weights=nwts,
            )
        )
    return PseudoLabelSet(
        views=views,
        bin_layout=(pseudo_cameras[0].near, pseudo_cameras[0].far, cfg.n_bins),
        policy_kind=policy.kind,
        tau=tau,
        alpha=alpha,
        teacher_hash=param_hash(teacher),
    )


def save_labels(labels: PseudoLabelSet, out_dir):
    """Persist a label set: per view color/depth/mask/similarity/bin weights."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, view in enumerate(labels.views):
        vdir = out / f"view_{i:03d}"
        vdir.mkdir(exist_ok=True)
        imgio.save_png(vdir / "color.png", view.color)
        imgio.save_pfm(vdir / "depth.pfm", view.depth)
        imgio.save_mask_png(vdir / "mask.png", view.mask)
        imgio.save_pfm(vdir / "similarity.pfm", view.similarity)
        imgio.save_bin_weights(vdir / "weights.bin", view.bin_values)
        cam = view.camera
        matrix = np.eye(4)
        matrix[:3, :3] = cam.rotation
        matrix[:3, 3] = cam.position
        meta = {
            "transform_matrix": matrix.tolist(),
            "fx": cam.fx,
            "width": cam.width,
            "height": cam.height,
            "near": cam.near,
            "far": cam.far,
            "bin_layout": list(labels.bin_layout),
            "policy": labels.policy_kind,
            "tau": labels.tau,
            "alpha": labels.alpha,
            "teacher_hash": labels.teacher_hash,
        }
        with open(vdir / "meta.json", "w") as fh:
            json.dump(meta, fh, indent=2)


# ---------------------------------------------------------------------------
# training loops


def _sample_rays(store: RayStore, idx, n_bins, rng):
    t = stratified_sample(len(idx), n_bins, store.near, store.far, rng, jitter=True)
    return store.origins[idx], store.dirs[idx], t


def _train_loop(field, store, cfg: SelfTrainConfig, phase_key, pseudo=None):
    """Optimize a field on known rays (plus optional pseudo labels).

    Random streams are keyed by (seed, phase_key, stream); the pseudo
    streams are only consumed when pseudo rays exist, so an empty label
    set reproduces the plain photometric run exactly.
    """
    steps = cfg.steps_per_iteration
    rng_batch = np.random.default_rng([cfg.seed, phase_key, 1])
    rng_jitter = np.random.default_rng([cfg.seed, phase_key, 2])
    rng_pbatch = np.random.default_rng([cfg.seed, phase_key, 3])
    rng_pjitter = np.random.default_rng([cfg.seed, phase_key, 4])
    opt = make_optimizer(field, cfg, total_steps=steps)

    flat = None
    mode = "unified" if (pseudo and pseudo.policy_kind == "unified") else "masked"
    if pseudo is not None and pseudo.n_rays > 0:
        flat = pseudo.flatten(unified=mode == "unified")
        n_pseudo_batch = int(cfg.batch_rays * cfg.pseudo_ray_fraction)
        n_known_batch = cfg.batch_rays - n_pseudo_batch
    else:
        n_known_batch = cfg.batch_rays
        n_pseudo_batch = 0

    curves = {
        "total": [],
        "photometric": [],
        "reliable_color": [],
        "reliable_geometry": [],
        "prior_geometry": [],
    }
    snapshot = [p.data.copy() for p in field.parameters()]
    for step in range(steps):
        idx = rng_batch.integers(0, len(store), size=n_known_batch)
        o, d, t = _sample_rays(store, idx, cfg.n_bins, rng_jitter)
        with ad.Tape() as tape:
            res_known = render_rays(field, o, d, t, store.far, cfg.background)
            if flat is not None:
                pidx = rng_pbatch.integers(0, flat["origins"].shape[0], size=n_pseudo_batch)
                tp = stratified_sample(
                    n_pseudo_batch, cfg.n_bins, store.near, store.far, rng_pjitter
                )
                res_pseudo = render_rays(
                    field,
                    flat["origins"][pidx],
                    flat["dirs"][pidx],
                    tp,
                    store.far,
                    cfg.background,
                )
                student_bins = (
                    res_pseudo.sigma
                    if cfg.distill_target == "sigma"
                    else res_pseudo.weights
                )
                batch = distill.PseudoRayBatch(
                    teacher_colors=flat["colors"][pidx],
                    teacher_bins=flat["bins"][pidx],
                    mask=flat["mask"][pidx],
                    prior_targets=flat["prior_targets"][pidx],
                    prior_active=flat["prior_active"][pidx],
                    sims=flat["sims"][pidx],
                    neighbor_targets=(
                        flat["neighbor_targets"][pidx] if mode == "unified" else None
                    ),
                    neighbor_weights=(
                        flat["neighbor_weights"][pidx] if mode == "unified" else None
                    ),
                )
                total, parts = distill.total_student_loss(
                    res_known.color,
                    store.colors[idx],
                    res_pseudo.color,
                    student_bins,
                    batch,
                    cfg.weights,
                    mode=mode,
                )
            else:
                total, parts = distill.total_student_loss(
                    res_known.color,
                    store.colors[idx],
                    None,
                    None,
                    None,
                    cfg.weights,
                )
        if not np.isfinite(total.data):
            for p, saved in zip(field.parameters(), snapshot):
                p.data[...] = saved
            raise TrainingError(
                f"loss diverged at step {step}; parameters restored to the last snapshot"
            )
        tape.backward(total)
        opt.step()
        opt.zero_grad()
        field.step += 1
        curves["total"].append(float(total.data))
        for key in ("photometric", "reliable_color", "reliable_geometry", "prior_geometry"):
            curves[key].append(parts.get(key, 0.0))
        if (step + 1) % 100 == 0:
            snapshot = [p.data.copy() for p in field.parameters()]
    return curves


def train_teacher(dataset, cfg: SelfTrainConfig, phase_key=0):
    """Photometric-only training of a fresh field on the known views."""
    if len(dataset) < 1:
        raise TrainingError("training requires at least one view")
    field = cfg.make_field(phase_key)
    store = RayStore.from_dataset(dataset)
    curves = _train_loop(field, store, cfg, phase_key)
    return field, curves


def train_student(dataset, labels: PseudoLabelSet, cfg: SelfTrainConfig, phase_key):
    """Fresh student optimized on known views plus frozen pseudo labels."""
    field = cfg.make_field(phase_key)
    store = RayStore.from_dataset(dataset)
    curves = _train_loop(field, store, cfg, phase_key, pseudo=labels)
    return field, curves


def evaluate(field, dataset, cfg: SelfTrainConfig, threads=1):
    """Held-out metrics: per-view and mean PSNR/SSIM against dataset images."""
    views = []
    for name, image, cam in zip(dataset.names, dataset.images, dataset.cameras):
        rendered = render_view(
            field,
            cam,
            cfg.n_bins,
            jitter=False,
            background=cfg.background,
            threads=threads,
        )
        views.append(
            {
                "name": name,
                "psnr": metrics.psnr(rendered.color, image),
                "ssim": metrics.ssim(rendered.color, image),
            }
        )
    mean_psnr = float(np.mean([v["psnr"] for v in views])) if views else float("nan")
    mean_ssim = float(np.mean([v["ssim"] for v in views])) if views else float("nan")
    return views, mean_psnr, mean_ssim


@dataclasses.dataclass
class IterationReport:
    """Everything measured during one teacher->student iteration."""

    iteration: int
    alpha: float | None
    tau: float | None
    reliable_fraction: float
    teacher_mean_psnr: float
    teacher_mean_ssim: float
    mean_psnr: float
    mean_ssim: float
    views: list
    loss_curves: dict
    mask: dict | None
    teacher_hash: str
    runtime_s: float

    def to_dict(self):
        return dataclasses.asdict(self)


def self_train(
    dataset,
    cfg: SelfTrainConfig,
    heldout=None,
    out_dir=None,
    scene=None,
    extractor=None,
    initial_teacher=None,
):
    """Run the full teacher-student loop for ``cfg.iterations`` rounds.

    Returns a list of (student field, IterationReport).  With ``out_dir``
    set, each iteration persists teacher/student checkpoints, the label
    store and ``report.json`` under ``<out_dir>/iter<k>/``.  ``scene``
    enables oracle mask metrics (and the ``gt`` labeling policy);
    ``heldout`` supplies the fixed evaluation split.
    """
    extractor = extractor or reliability.PyramidExtractor()
    known_features = (
        [extractor.extract(img) for img in dataset.images]
        if cfg.policy.kind != "gt"
        else None
    )
    if initial_teacher is not None:
        teacher = initial_teacher
    else:
        teacher, _ = train_teacher(dataset, cfg, phase_key=0)

    results = []
    for k in range(cfg.iterations):
        started = time.perf_counter()
        iter_dir = None
        if out_dir is not None:
            iter_dir = Path(out_dir) / f"iter{k + 1}"
            iter_dir.mkdir(parents=True, exist_ok=True)
            save_checkpoint(teacher, iter_dir / "teacher.ckpt", extra={"iteration": k + 1})

        rng_views = np.random.default_rng([cfg.seed, 80, k])
        pseudo_cams = select_pseudo_views(
            dataset.cameras, k, cfg.view_range, rng_views, cfg.pseudo_views_per_iteration
        )
        if cfg.pseudo_views_per_iteration > 0:
            labels = generate_pseudo_labels(
                teacher,
                pseudo_cams,
                dataset.images,
                dataset.cameras,
                cfg,
                iteration=k,
                extractor=extractor,
                known_features=known_features,
                scene=scene,
            )
            if iter_dir is not None:
                save_labels(labels, iter_dir / "labels")
        else:
            labels = None

        student, curves = train_student(dataset, labels, cfg, phase_key=k + 1)

        mask_stats = None
        if scene is not None and labels is not None and cfg.policy.kind != "gt":
            stats = []
            for view in labels.views:
                oracle_img, _, _ = oracle_render(scene, view.camera)
                truth = reliability.gt_mask(
                    view.color, oracle_img, cfg.policy.gt_tolerance
                )
                stats.append(reliability.mask_metrics(view.mask, truth))
            mask_stats = {
                "precision": float(np.mean([s[0] for s in stats])),
                "recall": float(np.mean([s[1] for s in stats])),
                "fpr": float(np.mean([s[2] for s in stats])),
            }

        if heldout is not None and len(heldout):
            _, teacher_psnr, teacher_ssim = evaluate(teacher, heldout, cfg)
            views, mean_psnr, mean_ssim = evaluate(student, heldout, cfg)
        else:
            teacher_psnr = teacher_ssim = mean_psnr = mean_ssim = float("nan")
            views = []

        report = IterationReport(
            iteration=k + 1,
            alpha=labels.alpha if labels else None,
            tau=labels.tau if labels else None,
            reliable_fraction=labels.reliable_fraction() if labels else 0.0,
            teacher_mean_psnr=teacher_psnr,
            teacher_mean_ssim=teacher_ssim,
            mean_psnr=mean_psnr,
            mean_ssim=mean_ssim,
            views=views,
            loss_curves=curves,
            mask=mask_stats,
            teacher_hash=labels.teacher_hash if labels else param_hash(teacher),
            runtime_s=time.perf_counter() - started,
        )
        if iter_dir is not None:
            save_checkpoint(student, iter_dir / "student.ckpt", extra={"iteration": k + 1})
            with open(iter_dir / "report.json", "w") as fh:
                json.dump(report.to_dict(), fh, indent=2)
        results.append((student, report))
        teacher = student
    return results
