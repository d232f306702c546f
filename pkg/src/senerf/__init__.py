"""Self-evolving radiance fields at desk scale.

Train a radiance field from a few posed views, render pseudo labels from
nearby unknown viewpoints, score their per-ray reliability by cross-view
feature consistency, and distill them into a freshly initialized student,
iterating student -> teacher.  Everything runs on numpy against analytic
scene oracles.
"""

from .autodiff import AutodiffError, Parameter, Tape, grad_check
from .distill import DistillWeights, GaussianKernel, gaussian_kernel
from .fields import (
    AnnealSchedule,
    KPlanesConfig,
    KPlanesField,
    MlpConfig,
    MlpField,
    field_eval,
    load_checkpoint,
    make_field,
    save_checkpoint,
)
from .metrics import psnr, ssim
from .reliability import (
    PyramidExtractor,
    ThresholdPolicy,
    build_mask,
    compute_threshold,
    extract_features,
    gt_mask,
    mask_metrics,
    project_pixel,
    similarity_map,
)
from .renderer import Camera, RenderedView, composite, generate_rays, render_view
from .scenedata import (
    Box,
    Dataset,
    PoseSpec,
    SceneSpec,
    Sphere,
    camera_from_pose,
    default_scene,
    make_extreme_split,
    oracle_render,
    read_dataset,
    sample_sphere_poses,
    spherical_pose,
    write_dataset,
)
from .selftrain import (
    IterationReport,
    SelfTrainConfig,
    evaluate,
    generate_pseudo_labels,
    select_pseudo_views,
    self_train,
    train_student,
    train_teacher,
)

__version__ = "0.1.0"
