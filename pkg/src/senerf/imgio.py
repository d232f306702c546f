"""File formats shared across the pipeline.

PNG (8-bit, via Pillow) for color/opacity/mask images, PFM (little-endian,
scale -1.0) for depth and similarity maps, a tiny binary container for
per-ray bin weights, and a stacked-PFM convention for multi-channel
feature maps.
"""

from __future__ import annotations

import json
import struct

import numpy as np
from PIL import Image


def save_png(path, image):
    """Write a float image in [0, 1] (HxW or HxWx3) as 8-bit PNG."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    mode = "L" if arr.ndim == 2 else "RGB"
    Image.fromarray(arr, mode=mode).save(path)


def load_png(path):
    """Read a PNG as float32 in [0, 1]; grayscale stays 2D."""
    with Image.open(path) as img:
        arr = np.asarray(img)
    if arr.ndim == 3 and arr.shape[2] == 4:
        arr = arr[:, :, :3]
    return arr.astype(np.float32) / 255.0


def save_mask_png(path, mask):
    """Binary mask to {0, 255} grayscale PNG."""
    arr = (np.asarray(mask) > 0).astype(np.uint8) * 255
    Image.fromarray(arr, mode="L").save(path)


def load_mask_png(path):
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return (arr > 127).astype(np.uint8)


def save_pfm(path, data):
    """Portable FloatMap: 1 or 3 channels, bottom-up rows, little endian."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 2:
        kind, h, w = b"Pf", *arr.shape
    elif arr.ndim == 3 and arr.shape[2] == 3:
        kind, h, w = b"PF", arr.shape[0], arr.shape[1]
    else:
        raise ValueError(f"PFM supports HxW or HxWx3 data, got {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(kind + b"\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(np.ascontiguousarray(arr[::-1], dtype="<f4").tobytes())


def load_pfm(path):
    with open(path, "rb") as fh:
        kind = fh.readline().strip()
        if kind not in (b"Pf", b"PF"):
            raise ValueError(f"{path}: not a PFM file (header {kind!r})")
        dims = fh.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(fh.readline())
        channels = 3 if kind == b"PF" else 1
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(4 * w * h * channels), dtype=dtype)
    shape = (h, w) if channels == 1 else (h, w, 3)
    return np.ascontiguousarray(data.reshape(shape)[::-1]).astype(np.float32)


def save_bin_weights(path, weights):
    """Per-ray bin weights [H, W, B] as uint32 header (H, W, B) + float32 data."""
    arr = np.asarray(weights, dtype=np.float32)
    if arr.ndim != 3:
        raise ValueError(f"bin weights must be HxWxB, got {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<III", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_bin_weights(path):
    with open(path, "rb") as fh:
        h, w, b = struct.unpack("<III", fh.read(12))
        data = np.frombuffer(fh.read(4 * h * w * b), dtype="<f4")
    if data.size != h * w * b:
        raise ValueError(f"{path}: truncated bin-weights file")
    return data.reshape(h, w, b).astype(np.float32)


def save_feature_stack(path_base, features):
    """Multi-channel map [H, W, F] as one tall PFM plus a JSON sidecar."""
    arr = np.asarray(features, dtype=np.float32)
    h, w, f = arr.shape
    stacked = np.transpose(arr, (2, 0, 1)).reshape(f * h, w)
    save_pfm(str(path_base) + ".pfm", stacked)
    with open(str(path_base) + ".json", "w") as fh:
        json.dump({"channels": f, "height": h, "width": w}, fh)


def load_feature_stack(path_base):
    with open(str(path_base) + ".json") as fh:
        meta = json.load(fh)
    f, h, w = meta["channels"], meta["height"], meta["width"]
    stacked = load_pfm(str(path_base) + ".pfm")
    if stacked.shape != (f * h, w):
        raise ValueError(
            f"{path_base}: stack shape {stacked.shape} does not match sidecar {meta}"
        )
    return np.transpose(stacked.reshape(f, h, w), (1, 2, 0))
