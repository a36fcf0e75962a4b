"""Synthetic grayscale video built from the sample images bundled with scikit-image.

Used to produce small training corpora and benchmark scenes when no real
video collection is at hand.  Each sequence pans (and slowly zooms) a window
across a still image, which gives smooth, DAVIS-like global motion.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import ndimage

from .forward import MaskSet, compress, generate_masks
from .tensor_io import save_frame_dir, save_tensor

SOURCE_IMAGES = ("camera", "astronaut", "coffee", "chelsea", "rocket", "moon", "brick", "grass", "clock", "coins")


def source_image(name: str) -> np.ndarray:
    from skimage import color, data

    img = getattr(data, name)()
    if img.ndim == 3:
        img = color.rgb2gray(img[..., :3])
    else:
        img = img.astype(np.float64) / 255.0
    return np.asarray(img, dtype=np.float64)


def panning_sequence(image, frames: int, H: int, W: int, rng, max_speed: float = 2.0) -> np.ndarray:
    """(frames, H, W) crops along a straight sub-pixel trajectory, values in [0, 1]."""
    ih, iw = image.shape
    speed = rng.uniform(-max_speed, max_speed, size=2)
    span = np.abs(speed) * (frames - 1)
    if ih < H + span[0] + 2 or iw < W + span[1] + 2:
        raise ValueError(f"image {image.shape} too small for {frames}x{H}x{W} at speed {speed}")
    y0 = rng.uniform(1 + max(0.0, -speed[0] * (frames - 1)), ih - H - 1 - max(0.0, speed[0] * (frames - 1)))
    x0 = rng.uniform(1 + max(0.0, -speed[1] * (frames - 1)), iw - W - 1 - max(0.0, speed[1] * (frames - 1)))
    rows, cols = np.mgrid[0:H, 0:W].astype(np.float64)
    out = np.empty((frames, H, W))
    for t in range(frames):
        coords = [rows + y0 + speed[0] * t, cols + x0 + speed[1] * t]
        out[t] = ndimage.map_coordinates(image, coords, order=3, mode="reflect")
    return np.clip(out, 0.0, 1.0)


def write_corpus(directory, n_sequences: int, frames: int, H: int, W: int, seed: int = 0,
                 max_speed: float = 2.0) -> list[Path]:
    """Write ``n_sequences`` PNG frame folders ``seq_XXX`` under ``directory``."""
    rng = np.random.default_rng(seed)
    directory = Path(directory)
    paths = []
    for i in range(n_sequences):
        name = SOURCE_IMAGES[i % len(SOURCE_IMAGES)]
        seq = panning_sequence(source_image(name), frames, H, W, rng, max_speed)
        path = directory / f"seq_{i:03d}_{name}"
        save_frame_dir(path, seq)
        paths.append(path)
    return paths


def write_benchmark(directory, scenes=("camera", "astronaut", "coffee", "chelsea", "rocket", "moon"),
                    B: int = 8, H: int = 256, W: int = 256, seed: int = 0,
                    masks: MaskSet | None = None, with_measurement: bool = True) -> list[Path]:
    """Benchmark layout ``<scene>/gt.ten``, ``<scene>/masks.ten`` and optionally ``measurement.ten``."""
    rng = np.random.default_rng(seed)
    masks = masks if masks is not None else generate_masks(B, H, W, 0.5, seed)
    directory = Path(directory)
    out = []
    for name in scenes:
        gt = panning_sequence(source_image(name), B, H, W, rng).astype(np.float32)
        # quantise to 8 bits like real benchmark frames
        gt = (np.rint(gt * 255.0) / 255.0).astype(np.float32)
        scene = directory / name
        scene.mkdir(parents=True, exist_ok=True)
        save_tensor(scene / "gt.ten", gt)
        save_tensor(scene / "masks.ten", masks.masks)
        if with_measurement:
            save_tensor(scene / "measurement.ten", compress(gt.astype(np.float64), masks).astype(np.float32))
        out.append(scene)
    return out
