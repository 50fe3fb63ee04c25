"""Naive localisation: one bounding box around every fake-scored window."""
from __future__ import annotations

from dataclasses import dataclass
import os

import numpy as np
from PIL import Image

RED = (255, 0, 0)


@dataclass(frozen=True)
class BBox:
    top: int
    left: int
    bottom: int    # exclusive
    right: int     # exclusive

    def __post_init__(self):
        if not (self.top < self.bottom and self.left < self.right):
            raise ValueError(f"degenerate box {self}")

    @property
    def area(self):
        return (self.bottom - self.top) * (self.right - self.left)

    def as_tuple(self):
        return (self.top, self.left, self.bottom, self.right)


def bounding_box(pmap, cutoff=0.5):
    """Union box of windows scoring above ``cutoff``; None if none qualify."""
    hit = np.asarray(pmap.scores) > cutoff
    if not hit.any():
        return None
    rows, cols = np.asarray(pmap.rows)[hit], np.asarray(pmap.cols)[hit]
    size = pmap.patch_size
    return BBox(int(rows.min()), int(cols.min()), int(rows.max()) + size, int(cols.max()) + size)


def iou(a, b):
    top, left = max(a.top, b.top), max(a.left, b.left)
    bottom, right = min(a.bottom, b.bottom), min(a.right, b.right)
    inter = max(bottom - top, 0) * max(right - left, 0)
    return inter / (a.area + b.area - inter)


def mask_box(mask):
    """Tight box around the positive pixels of a 0/255 mask."""
    ys, xs = np.nonzero(np.asarray(mask) > 127)
    if len(ys) == 0:
        return None
    return BBox(int(ys.min()), int(xs.min()), int(ys.max()) + 1, int(xs.max()) + 1)


def render_overlay(image, box, thickness=3, color=RED):
    """Copy of ``image`` (HxWx3 uint8) with a ``thickness``-pixel frame drawn
    just inside ``box``. ``image`` itself is not modified."""
    out = np.array(image, copy=True)
    if box is None:
        return out
    h, w = out.shape[:2]
    if box.top < 0 or box.left < 0 or box.bottom > h or box.right > w:
        raise ValueError(f"box {box.as_tuple()} outside image {h}x{w}")
    t = thickness
    out[box.top:min(box.top + t, box.bottom), box.left:box.right] = color
    out[max(box.bottom - t, box.top):box.bottom, box.left:box.right] = color
    out[box.top:box.bottom, box.left:min(box.left + t, box.right)] = color
    out[box.top:box.bottom, max(box.right - t, box.left):box.right] = color
    return out


def localized_path(path):
    stem, ext = os.path.splitext(path)
    return f"{stem}.localized{ext or '.png'}"


def write_overlay(image_path, box, out_path=None):
    with Image.open(image_path) as im:
        image = np.asarray(im.convert("RGB"))
    out_path = out_path or localized_path(image_path)
    Image.fromarray(render_overlay(image, box)).save(out_path, format="PNG")
    return out_path
