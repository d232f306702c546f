"""Radiance-field parameterizations.

Two variants share the (x, d) -> (density, color) contract:

* :class:`KPlanesField` factorizes space into three axis-aligned feature
  planes combined by Hadamard product, decoded by two small MLPs.
* :class:`MlpField` is a plain MLP over positional encodings whose
  frequency bands are gated coarse-to-fine during training.

Both are built on :mod:`senerf.autodiff` Parameters so they can be trained
end to end through the renderer.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import struct

import numpy as np

from . import autodiff as ad

CHECKPOINT_MAGIC = b"SENF"

# (first axis, second axis) of each feature plane: xy, yz, xz
PLANE_AXES = ((0, 1), (1, 2), (0, 2))
PLANE_NAMES = ("plane_xy", "plane_yz", "plane_xz")


@dataclasses.dataclass
class AnnealSchedule:
    """Coarse-to-fine gate for positional-encoding frequency bands.

    Band j's weight ramps from 0 to 1 as the progress variable
    eta = bands * step / horizon sweeps through [j, j+1].
    """

    bands: int
    horizon: int

    def eta(self, step):
        if self.horizon <= 0:
            return float(self.bands)
        return self.bands * step / self.horizon

    def weights(self, step):
        eta = self.eta(step)
        j = np.arange(self.bands, dtype=np.float64)
        return (1.0 - np.cos(np.pi * np.clip(eta - j, 0.0, 1.0))) / 2.0


def positional_encoding(v, bands, weights=None, include_input=True):
    """Fourier-feature encoding [sin(2^j pi v), cos(2^j pi v)] per band.

    ``v`` is [P, k]; each band's pair of blocks is scaled by the matching
    entry of ``weights`` (all ones when omitted).  Output width is
    k * 2 * bands, plus k when the raw input is kept.
    """
    v = np.asarray(v)
    parts = [v] if include_input else []
    for j in range(bands):
        arg = (2.0**j) * np.pi * v
        w = 1.0 if weights is None else weights[j]
        parts.append(np.sin(arg) * w)
        parts.append(np.cos(arg) * w)
    return np.concatenate(parts, axis=-1).astype(v.dtype, copy=False)


@dataclasses.dataclass
class KPlanesConfig:
    resolution: int = 32
    features: int = 8
    hidden: int = 32
    geo_features: int = 15
    dir_bands: int = 2
    box_min: float = -1.0
    box_max: float = 1.0


@dataclasses.dataclass
class MlpConfig:
    hidden: int = 64
    depth: int = 3
    pos_bands: int = 6
    dir_bands: int = 2
    anneal_horizon: int = 500
    box_min: float = -1.0
    box_max: float = 1.0


def _uniform(rng, lo, hi, shape, dtype):
    return rng.uniform(lo, hi, size=shape).astype(dtype)


def _linear_init(rng, fan_in, fan_out, name, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    w = ad.Parameter(_uniform(rng, -bound, bound, (fan_in, fan_out), dtype), name)
    b = ad.Parameter(np.zeros(fan_out, dtype=dtype), name + "_b")
    return w, b


class KPlanesField:
    """Tri-plane factorized field with hybrid MLP decoders.

    Plane entries start uniformly positive so the Hadamard product is
    non-degenerate at initialization; decoder weights use the usual
    1/sqrt(fan-in) uniform range.
    """

    variant = "kplanes"

    def __init__(self, config=None, seed=0, dtype=np.float32):
        self.config = config or KPlanesConfig()
        self.dtype = np.dtype(dtype)
        self.step = 0
        self.clamp_count = 0
        cfg = self.config
        rng = np.random.default_rng(seed)
        n, m, h = cfg.resolution, cfg.features, cfg.hidden
        self.planes = [
            ad.Parameter(_uniform(rng, 0.1, 0.5, (n, n, m), self.dtype), name)
            for name in PLANE_NAMES
        ]
        self.sig_w1, self.sig_b1 = _linear_init(rng, m, h, "sig_w1", self.dtype)
        self.sig_wd, self.sig_bd = _linear_init(rng, h, 1, "sig_wd", self.dtype)
        self.sig_wf, self.sig_bf = _linear_init(
            rng, h, cfg.geo_features, "sig_wf", self.dtype
        )
        dir_width = 3 + 3 * 2 * cfg.dir_bands
        self.rgb_w1, self.rgb_b1 = _linear_init(
            rng, cfg.geo_features + dir_width, h, "rgb_w1", self.dtype
        )
        self.rgb_w2, self.rgb_b2 = _linear_init(rng, h, 3, "rgb_w2", self.dtype)

    def parameters(self):
        return list(self.planes) + [
            self.sig_w1,
            self.sig_b1,
            self.sig_wd,
            self.sig_bd,
            self.sig_wf,
            self.sig_bf,
            self.rgb_w1,
            self.rgb_b1,
            self.rgb_w2,
            self.rgb_b2,
        ]

    def param_groups(self):
        params = self.parameters()
        return {"grid": params[:3], "net": params[3:]}

    @property
    def n_params(self):
        return sum(p.size for p in self.parameters())

    def _normalize(self, x):
        cfg = self.config
        lo, hi = cfg.box_min, cfg.box_max
        outside = np.count_nonzero((x < lo - 1e-7) | (x > hi + 1e-7))
        if outside:
            self.clamp_count += int(outside)
        clamped = np.clip(x, lo, hi)
        return (clamped - lo) / (hi - lo) * (cfg.resolution - 1)

    def features(self, x):
        """Hadamard-combined bilinear plane features for points [P, 3]."""
        u = self._normalize(np.asarray(x, dtype=self.dtype))
        q = None
        for plane, (a, b) in zip(self.planes, PLANE_AXES):
            part = ad.bilinear_gather(plane, u[:, (a, b)])
            q = part if q is None else ad.mul(q, part)
        return q

    def decode(self, q, d):
        """Map plane features plus view direction to (density, rgb)."""
        h = ad.tanh(ad.add(ad.matmul(q, self.sig_w1), self.sig_b1))
        sigma_raw = ad.reshape(ad.add(ad.matmul(h, self.sig_wd), self.sig_bd), (-1,))
        qhat = ad.add(ad.matmul(h, self.sig_wf), self.sig_bf)
        enc_d = positional_encoding(
            np.asarray(d, dtype=self.dtype), self.config.dir_bands
        )
        rin = ad.concat([qhat, ad.Value(enc_d, dtype=self.dtype)], axis=1)
        h2 = ad.tanh(ad.add(ad.matmul(rin, self.rgb_w1), self.rgb_b1))
        rgb = ad.sigmoid(ad.add(ad.matmul(h2, self.rgb_w2), self.rgb_b2))
        return ad.softplus(sigma_raw), rgb

    def eval(self, x, d):
        return self.decode(self.features(x), d)


class MlpField:
    """Fully connected field over annealed positional encodings.

    ``step`` drives the band gating; trainers advance it once per
    optimizer step.  Direction bands are few and stay ungated.
    """

    variant = "mlp"

    def __init__(self, config=None, seed=0, dtype=np.float32):
        self.config = config or MlpConfig()
        self.dtype = np.dtype(dtype)
        self.step = 0
        self.clamp_count = 0
        cfg = self.config
        self.anneal = AnnealSchedule(cfg.pos_bands, cfg.anneal_horizon)
        rng = np.random.default_rng(seed)
        pos_width = 3 + 3 * 2 * cfg.pos_bands
        dir_width = 3 + 3 * 2 * cfg.dir_bands
        h = cfg.hidden
        self.trunk = []
        width = pos_width
        for i in range(cfg.depth):
            self.trunk.append(_linear_init(rng, width, h, f"trunk{i}", self.dtype))
            width = h
        self.wd, self.bd = _linear_init(rng, h, 1, "density", self.dtype)
        self.rgb_w1, self.rgb_b1 = _linear_init(
            rng, h + dir_width, h, "rgb_w1", self.dtype
        )
        self.rgb_w2, self.rgb_b2 = _linear_init(rng, h, 3, "rgb_w2", self.dtype)

    def parameters(self):
        params = []
        for w, b in self.trunk:
            params += [w, b]
        params += [self.wd, self.bd, self.rgb_w1, self.rgb_b1, self.rgb_w2, self.rgb_b2]
        return params

    def param_groups(self):
        return {"grid": [], "net": self.parameters()}

    @property
    def n_params(self):
        return sum(p.size for p in self.parameters())

    def eval(self, x, d):
        cfg = self.config
        x = np.asarray(x, dtype=self.dtype)
        lo, hi = cfg.box_min, cfg.box_max
        outside = np.count_nonzero((x < lo - 1e-7) | (x > hi + 1e-7))
        if outside:
            self.clamp_count += int(outside)
        x = np.clip(x, lo, hi)
        enc_x = positional_encoding(x, cfg.pos_bands, self.anneal.weights(self.step))
        h = ad.Value(enc_x, dtype=self.dtype)
        for w, b in self.trunk:
            h = ad.tanh(ad.add(ad.matmul(h, w), b))
        sigma_raw = ad.reshape(ad.add(ad.matmul(h, self.wd), self.bd), (-1,))
        enc_d = positional_encoding(np.asarray(d, dtype=self.dtype), cfg.dir_bands)
        rin = ad.concat([h, ad.Value(enc_d, dtype=self.dtype)], axis=1)
        h2 = ad.tanh(ad.add(ad.matmul(rin, self.rgb_w1), self.rgb_b1))
        rgb = ad.sigmoid(ad.add(ad.matmul(h2, self.rgb_w2), self.rgb_b2))
        return ad.softplus(sigma_raw), rgb


def field_eval(field, x, d):
    """Dispatch (x, d) -> (density, color) to the configured field variant."""
    return field.eval(x, d)


def make_field(variant, config=None, seed=0, dtype=np.float32):
    if variant == "kplanes":
        return KPlanesField(config, seed=seed, dtype=dtype)
    if variant == "mlp":
        return MlpField(config, seed=seed, dtype=dtype)
    raise ValueError(f"unknown field variant {variant!r}")


_CONFIG_TYPES = {"kplanes": KPlanesConfig, "mlp": MlpConfig}


def save_checkpoint(field, path, step=None, extra=None):
    """Write a field as a JSON header plus little-endian float32 buffers.

    The write goes through a temp file and an atomic rename.
    """
    params = field.parameters()
    header = {
        "variant": field.variant,
        "config": dataclasses.asdict(field.config),
        "step": int(field.step if step is None else step),
        "params": [{"name": p.name, "shape": list(p.shape)} for p in params],
        "extra": extra or {},
    }
    blob = json.dumps(header).encode("utf-8")
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p in params:
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path, dtype=np.float32):
    """Rebuild a field from :func:`save_checkpoint` output."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a field checkpoint (bad magic {magic!r})")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        cfg_type = _CONFIG_TYPES[header["variant"]]
        field = make_field(
            header["variant"], cfg_type(**header["config"]), seed=0, dtype=dtype
        )
        by_name = {p.name: p for p in field.parameters()}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(4 * count)
            if len(buf) != 4 * count:
                raise ValueError(f"{path}: truncated buffer for {entry['name']}")
            arr = np.frombuffer(buf, dtype="<f4").reshape(shape)
            by_name[entry["name"]].values = arr.astype(dtype)
    field.step = header["step"]
    return field, header


def checkpoint_hash(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()
