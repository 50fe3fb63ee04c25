"""Manifests, patch extraction and balanced train/val/test corpora."""
from __future__ import annotations

from dataclasses import dataclass, field
import os
import struct

import numpy as np
from PIL import Image

MANIFEST_HEADER = "#missmarple-manifest v1"
ROLES = ("authentic", "spliced")
MASK_THRESHOLD = 127


class ManifestError(ValueError):
    pass


@dataclass
class ManifestEntry:
    role: str
    image_path: str
    mask_path: str | None = None


@dataclass
class DatasetManifest:
    name: str
    entries: list
    patch_size: int = 64
    fake_overlap: float = 0.40
    stride: int = 32

    def validate(self, check_files=True):
        if not 0 < self.fake_overlap <= 1:
            raise ManifestError(f"fake_overlap must be in (0, 1], got {self.fake_overlap}")
        if self.patch_size < 1 or self.stride < 1:
            raise ManifestError("patch_size and stride must be positive")
        for e in self.entries:
            if e.role not in ROLES:
                raise ManifestError(f"unknown role {e.role!r} for {e.image_path}")
            if e.role == "spliced" and not e.mask_path:
                raise ManifestError(f"spliced entry {e.image_path} has no mask")
            if check_files:
                img = load_image(e.image_path)
                if e.mask_path:
                    mask = load_mask(e.mask_path)
                    if mask.shape != img.shape[:2]:
                        raise ManifestError(
                            f"mask {e.mask_path} is {mask.shape}, image {e.image_path} is {img.shape[:2]}"
                        )
        return self


def read_manifest(path, **options):
    """Parse a v1 manifest. Relative paths resolve against the manifest's directory."""
    base = os.path.dirname(os.path.abspath(path))
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != MANIFEST_HEADER:
        raise ManifestError(f"{path}: missing header {MANIFEST_HEADER!r}")
    entries = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) not in (2, 3):
            raise ManifestError(f"{path}:{lineno}: expected 2 or 3 tab-separated fields")
        role, image = parts[0], parts[1]
        mask = parts[2] if len(parts) == 3 and parts[2] else None
        if role not in ROLES:
            raise ManifestError(f"{path}:{lineno}: unknown role {role!r}")
        entries.append(ManifestEntry(
            role, os.path.join(base, image), os.path.join(base, mask) if mask else None))
    name = os.path.splitext(os.path.basename(path))[0]
    return DatasetManifest(name, entries, **options)


def write_manifest(manifest, path):
    base = os.path.dirname(os.path.abspath(path))
    out = [MANIFEST_HEADER]
    for e in manifest.entries:
        fields_ = [e.role, os.path.relpath(e.image_path, base)]
        if e.mask_path:
            fields_.append(os.path.relpath(e.mask_path, base))
        out.append("\t".join(fields_))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(out) + "\n")


def load_image(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def load_mask(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)


@dataclass
class PatchSample:
    raw: np.ndarray          # size x size x 3, uint8
    label: int
    image_id: int
    row: int
    col: int

    @property
    def pixels(self):
        return self.raw.astype(np.float32) / 255.0

    @property
    def key(self):
        return (self.image_id, self.row, self.col)


def window_origins(n, size, stride):
    return range(0, n - size + 1, stride)


def mask_fraction(mask, row, col, size):
    return np.count_nonzero(mask[row:row + size, col:col + size] > MASK_THRESHOLD) / (size * size)


def extract_fake_patches(image, mask, size=64, overlap_frac=0.40, stride=32, image_id=0):
    """Every stride-aligned window whose mask-positive fraction is at least
    ``overlap_frac``, labelled 1, ordered by (row, col)."""
    if mask.shape[:2] != image.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match image shape {image.shape}")
    h, w = mask.shape[:2]
    if size > min(h, w):
        raise ValueError(f"patch size {size} exceeds image {h}x{w}")
    positive = (mask > MASK_THRESHOLD).astype(np.int64)
    integral = np.pad(positive, ((1, 0), (1, 0))).cumsum(0).cumsum(1)
    area = size * size
    out = []
    for r in window_origins(h, size, stride):
        for c in window_origins(w, size, stride):
            count = (integral[r + size, c + size] - integral[r, c + size]
                     - integral[r + size, c] + integral[r, c])
            if count / area >= overlap_frac:
                out.append(PatchSample(image[r:r + size, c:c + size].copy(), 1, image_id, r, c))
    return out


def extract_authentic_patches(image, count, size=64, rng=None, image_id=0):
    """``count`` windows at uniformly random top-left corners, labelled 0."""
    h, w = image.shape[:2]
    if size > min(h, w):
        raise ValueError(f"patch size {size} exceeds image {h}x{w}")
    if count < 0:
        raise ValueError("count must be non-negative")
    rng = rng if rng is not None else np.random.default_rng()
    rows = rng.integers(0, h - size + 1, size=count)
    cols = rng.integers(0, w - size + 1, size=count)
    return [PatchSample(image[r:r + size, c:c + size].copy(), 0, image_id, int(r), int(c))
            for r, c in zip(rows, cols)]


@dataclass(frozen=True)
class SplitConfig:
    test_fraction: float = 0.20
    train_fraction: float = 0.70


@dataclass
class PatchCorpus:
    train: list
    val: list
    test_images: list
    sources: list = field(default_factory=list)   # image path per id
    labels: list = field(default_factory=list)    # image role per id (1 = spliced)
    masks: list = field(default_factory=list)     # mask path per id, or None

    def counts(self):
        def tally(ps):
            ones = sum(p.label for p in ps)
            return {"spliced": ones, "authentic": len(ps) - ones}
        return {"train": tally(self.train), "val": tally(self.val), "test_images": len(self.test_images)}


def arrays(patches):
    """Stack patches into (x float32 [B,H,W,3] in [0,1], y int [B])."""
    if not patches:
        return np.zeros((0, 64, 64, 3), np.float32), np.zeros(0, np.int64)
    x = np.stack([p.raw for p in patches]).astype(np.float32) / 255.0
    y = np.array([p.label for p in patches], dtype=np.int64)
    return x, y


def _split_by_label(patches, frac, rng):
    train, val = [], []
    for label in (0, 1):
        group = [p for p in patches if p.label == label]
        order = rng.permutation(len(group))
        n_train = int(round(frac * len(group)))
        train += [group[i] for i in order[:n_train]]
        val += [group[i] for i in order[n_train:]]
    return sorted(train, key=lambda p: p.key), sorted(val, key=lambda p: p.key)


def build_corpus(manifest, split=SplitConfig(), seed=0):
    """Hold out test images, extract balanced patches and split them.

    Image ids follow manifest order. A ``round(test_fraction * n)`` share of
    each role is held out whole. Fake patches come from every remaining
    spliced image; the same number of authentic patches is spread over the
    remaining authentic images (at most ``ceil(fakes / images)`` each).
    Patches are then split per label into train/val.
    """
    rng = np.random.default_rng(seed)
    by_role = {role: [i for i, e in enumerate(manifest.entries) if e.role == role] for role in ROLES}
    for role, ids in by_role.items():
        if not ids:
            raise ManifestError(f"manifest {manifest.name!r} has no {role} images")
    test = []
    for role in ROLES:
        ids = by_role[role]
        n_test = int(round(split.test_fraction * len(ids)))
        test += [ids[i] for i in sorted(rng.permutation(len(ids))[:n_test])]
    test = sorted(test)
    held = set(test)

    size, entries = manifest.patch_size, manifest.entries
    fakes = []
    for i in by_role["spliced"]:
        if i in held:
            continue
        img, mask = load_image(entries[i].image_path), load_mask(entries[i].mask_path)
        fakes += extract_fake_patches(img, mask, size, manifest.fake_overlap, manifest.stride, i)
    auth_ids = [i for i in by_role["authentic"] if i not in held]
    if not auth_ids:
        raise ManifestError("every authentic image was held out for testing")
    base, extra = divmod(len(fakes), len(auth_ids))
    authentic = []
    for n, i in enumerate(auth_ids):
        count = base + (1 if n < extra else 0)
        authentic += extract_authentic_patches(load_image(entries[i].image_path), count, size, rng, i)
    train, val = _split_by_label(fakes + authentic, split.train_fraction, rng)
    return PatchCorpus(
        train, val, test,
        sources=[e.image_path for e in entries],
        labels=[1 if e.role == "spliced" else 0 for e in entries],
        masks=[e.mask_path for e in entries],
    )


# -- corpus files --------------------------------------------------------

PATCH_MAGIC = b"MMPC"
PATCH_VERSION = 1


def dumps_patches(patches, size=64):
    parts = [PATCH_MAGIC, struct.pack("<HHI", PATCH_VERSION, size, len(patches))]
    for p in patches:
        if p.raw.shape != (size, size, 3) or p.raw.dtype != np.uint8:
            raise ValueError(f"patch {p.key} is not a {size}x{size}x3 uint8 array")
        parts.append(struct.pack("<BIII", p.label, p.image_id, p.row, p.col))
        parts.append(p.raw.tobytes())
    return b"".join(parts)


def loads_patches(data):
    if data[:4] != PATCH_MAGIC:
        raise ValueError("not a patch corpus file (bad magic)")
    version, size, count = struct.unpack_from("<HHI", data, 4)
    if version != PATCH_VERSION:
        raise ValueError(f"unsupported patch corpus version {version}")
    rec = 13 + size * size * 3
    if len(data) != 12 + count * rec:
        raise ValueError(f"patch corpus is {len(data)} bytes, expected {12 + count * rec}")
    out = []
    for k in range(count):
        off = 12 + k * rec
        label, image_id, row, col = struct.unpack_from("<BIII", data, off)
        raw = np.frombuffer(data, np.uint8, size * size * 3, off + 13).reshape(size, size, 3).copy()
        out.append(PatchSample(raw, label, image_id, row, col))
    return out


def save_corpus(corpus, directory, size=64):
    """Write ``train.mmpc``, ``val.mmpc`` and ``images.tsv`` into ``directory``."""
    os.makedirs(directory, exist_ok=True)
    for split in ("train", "val"):
        with open(os.path.join(directory, f"{split}.mmpc"), "wb") as fh:
            fh.write(dumps_patches(getattr(corpus, split), size))
    held = set(corpus.test_images)
    base = os.path.abspath(directory)
    lines = ["#id\tsplit\tlabel\timage\tmask"]
    for i, path in enumerate(corpus.sources):
        path = os.path.relpath(path, base)
        mask = corpus.masks[i] if corpus.masks and corpus.masks[i] else ""
        mask = os.path.relpath(mask, base) if mask else ""
        lines.append(f"{i}\t{'test' if i in held else 'fit'}\t{corpus.labels[i]}\t{path}\t{mask}")
    with open(os.path.join(directory, "images.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_corpus(directory):
    parts = {}
    for split in ("train", "val"):
        with open(os.path.join(directory, f"{split}.mmpc"), "rb") as fh:
            parts[split] = loads_patches(fh.read())
    base = os.path.abspath(directory)
    sources, labels, masks, test = [], [], [], []
    with open(os.path.join(directory, "images.tsv"), encoding="utf-8") as fh:
        for line in fh.read().splitlines()[1:]:
            i, split, label, path, mask = line.split("\t")
            sources.append(os.path.normpath(os.path.join(base, path)))
            labels.append(int(label))
            masks.append(os.path.normpath(os.path.join(base, mask)) if mask else None)
            if split == "test":
                test.append(int(i))
    return PatchCorpus(parts["train"], parts["val"], test, sources, labels, masks)


def balance_gap(patches):
    ones = sum(p.label for p in patches)
    return abs(ones - (len(patches) - ones))


def check_overlap(patches, masks, size, overlap_frac):
    """True when every label-1 patch meets the overlap threshold against its mask."""
    for p in patches:
        if p.label == 1 and mask_fraction(masks[p.image_id], p.row, p.col, size) < overlap_frac:
            return False
    return True


def images_contributing(patches):
    return len({p.image_id for p in patches})

