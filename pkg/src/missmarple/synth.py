"""Procedural splice datasets with exact ground-truth masks.

Backgrounds are smooth colour gradients with low-amplitude band-limited
noise. Donor regions come from a second, differently textured source. In the
``coarse`` regime donors are pasted with hard edges and their own colours; in
the ``fine`` regime the paste is alpha-feathered and the donor's per-channel
mean is shifted onto the surrounding background.
"""
from __future__ import annotations

from dataclasses import dataclass
import os

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

from .patches import DatasetManifest, ManifestEntry, write_manifest

SHAPES = ("rect", "ellipse", "polygon")


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n_authentic: int = 10
    n_spliced: int = 10
    size: int = 256
    regime: str = "coarse"
    seed: int = 0
    patch_size: int = 64
    shapes: tuple = SHAPES
    min_area: float = 0.10
    max_area: float = 0.40
    feather_range: tuple = (3, 7)
    color_match: float = 1.0
    background_noise: float = 6.0
    donor_noise: float = 28.0

    def __post_init__(self):
        if self.regime not in ("coarse", "fine"):
            raise ValueError(f"regime must be 'coarse' or 'fine', got {self.regime!r}")
        if self.size < 2 * self.patch_size:
            raise ValueError(f"image size {self.size} must be at least twice the patch size")
        if not 0.01 <= self.min_area <= self.max_area <= 0.40:
            raise ValueError("area bounds must satisfy 0.01 <= min_area <= max_area <= 0.40")
        if any(s not in SHAPES for s in self.shapes):
            raise ValueError(f"shapes must be drawn from {SHAPES}")
        if self.regime == "fine" and min(self.feather_range) < 1:
            raise ValueError("fine regime needs a feather radius of at least 1")

    @property
    def feather(self):
        return self.feather_range if self.regime == "fine" else (0, 0)


def _smooth_noise(rng, size, sigma, amplitude):
    field = ndimage.gaussian_filter(rng.standard_normal((size, size, 3)), sigma=(sigma, sigma, 0))
    field /= field.std() + 1e-12
    return amplitude * field


def background(rng, size, noise):
    c0, c1 = rng.uniform(40, 215, 3), rng.uniform(40, 215, 3)
    angle = rng.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    t = np.clip(0.5 + (np.cos(angle) * (xx - 0.5) + np.sin(angle) * (yy - 0.5)), 0, 1)[..., None]
    img = (1 - t) * c0 + t * c1
    return img + _smooth_noise(rng, size, sigma=rng.uniform(6, 12), amplitude=noise)


def donor_texture(rng, size, noise):
    """High-frequency texture: striped carrier plus fine noise, random palette."""
    base = rng.uniform(20, 235, 3)
    yy, xx = np.mgrid[0:size, 0:size]
    freq = rng.uniform(0.15, 0.45)
    theta = rng.uniform(0, np.pi)
    stripes = np.sin(freq * (np.cos(theta) * xx + np.sin(theta) * yy))[..., None]
    tint = rng.uniform(-1, 1, 3)
    img = base + 0.6 * noise * stripes * tint
    return img + _smooth_noise(rng, size, sigma=rng.uniform(0.6, 1.2), amplitude=noise)


def donor_mask(rng, size, shape, min_area, max_area):
    """Binary (0/255) mask of one donor region, or None if the draw is degenerate."""
    target = rng.uniform(min_area, max_area) * size * size
    aspect = rng.uniform(0.6, 1.6)
    if shape == "ellipse":
        target *= 4 / np.pi
    elif shape == "polygon":
        target *= 1.6
    h = int(round(np.sqrt(target / aspect)))
    w = int(round(target / max(h, 1)))
    h, w = min(h, size - 2), min(w, size - 2)
    if h < 2 or w < 2:
        return None
    top = int(rng.integers(0, size - h + 1))
    left = int(rng.integers(0, size - w + 1))
    im = Image.new("L", (size, size), 0)
    draw = ImageDraw.Draw(im)
    box = (left, top, left + w - 1, top + h - 1)
    if shape == "rect":
        draw.rectangle(box, fill=255)
    elif shape == "ellipse":
        draw.ellipse(box, fill=255)
    else:
        n = int(rng.integers(5, 9))
        ang = np.sort(rng.uniform(0, 2 * np.pi, n))
        rad = rng.uniform(0.75, 1.0, n)
        cx, cy = left + w / 2, top + h / 2
        pts = [(cx + r * np.cos(a) * w / 2, cy + r * np.sin(a) * h / 2) for a, r in zip(ang, rad)]
        draw.polygon(pts, fill=255)
    mask = np.asarray(im, dtype=np.uint8)
    area = np.count_nonzero(mask) / (size * size)
    if not 0.01 <= area <= 0.40 or area < min_area * 0.5:
        return None
    return mask


def _to_u8(img):
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def surrounding_ring(mask, width=8):
    inside = mask > 127
    return ndimage.binary_dilation(inside, iterations=width) & ~inside


def generate_pair(config, index):
    """Deterministic (authentic, spliced, mask) triple for ``(config.seed, index)``.

    Images are HxWx3 uint8, the mask HxW uint8 with values 0/255.
    """
    rng = np.random.default_rng([config.seed, index, 0 if config.regime == "coarse" else 1])
    size = config.size
    bg = background(rng, size, config.background_noise)
    authentic = _to_u8(bg)
    for _ in range(100):
        shape = config.shapes[int(rng.integers(len(config.shapes)))]
        mask = donor_mask(rng, size, shape, config.min_area, config.max_area)
        if mask is not None:
            break
    else:
        raise GenerationError(f"no valid donor region after 100 attempts (index {index})")
    inside = mask > 127
    donor = donor_texture(rng, size, config.donor_noise)

    if config.regime == "coarse":
        donor = _to_u8(donor)
        # a donor pixel identical to the background would hide part of the mask
        same = np.all(donor == authentic, axis=-1) & inside
        donor[same, 0] = (authentic[same, 0].astype(np.int16) + 128) % 256
        spliced = np.where(inside[..., None], donor, authentic)
        return authentic, spliced.astype(np.uint8), mask

    ring = surrounding_ring(mask)
    shift = config.color_match * (authentic[ring].mean(axis=0) - donor[inside].mean(axis=0))
    donor = donor + shift
    radius = float(rng.uniform(*config.feather_range))
    alpha = ndimage.gaussian_filter(inside.astype(np.float64), sigma=radius / 2.0)[..., None]
    spliced = alpha * donor + (1 - alpha) * authentic
    return authentic, _to_u8(spliced), mask


def generate_dataset(config, out_dir):
    """Write PNG images, masks and ``manifest.tsv``; returns the manifest.

    Spliced images use pair indices ``0..n_spliced-1`` and authentic images
    ``n_spliced..``, so no authentic image shares a background with a spliced one.
    """
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    entries = []
    for i in range(config.n_spliced):
        _, spliced, mask = generate_pair(config, i)
        img_path = os.path.join(out_dir, "images", f"sp_{i:04d}.png")
        mask_path = os.path.join(out_dir, "masks", f"sp_{i:04d}_mask.png")
        _write_png(spliced, img_path)
        _write_png(mask, mask_path)
        entries.append(ManifestEntry("spliced", img_path, mask_path))
    for j in range(config.n_authentic):
        authentic, _, _ = generate_pair(config, config.n_spliced + j)
        img_path = os.path.join(out_dir, "images", f"au_{j:04d}.png")
        _write_png(authentic, img_path)
        entries.append(ManifestEntry("authentic", img_path))
    manifest = DatasetManifest(f"synth-{config.regime}", entries, patch_size=config.patch_size)
    write_manifest(manifest, os.path.join(out_dir, "manifest.tsv"))
    return manifest


def _write_png(arr, path):
    try:
        Image.fromarray(arr).save(path, format="PNG", optimize=False)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
