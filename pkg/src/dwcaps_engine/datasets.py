"""
Datasets: raw-idx files, image directories, the synthetic pattern generator
and the stratified train/test split.

raw-idx is a pair of big-endian idx files sharing a prefix::

    {prefix}-images-idx4-ubyte   magic 0x00000804, count, H, W, 3, then u8 pixels
    {prefix}-labels-idx1-ubyte   magic 0x00000801, count, then u8 labels

plus an optional ``{prefix}-classes.yaml`` listing the class names.
Pixels are scaled to [0, 1] by dividing by 255.
"""

import logging
import string
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional

import numpy as np
from PIL import Image

from dwcaps_engine.core.autograd.tensor import make_rng
from dwcaps_engine.core.utils.errors import ContractError, DatasetError, FormatError, LabelError, SplitError
from dwcaps_engine.core.utils.yaml import read_yaml, write_yaml

logger = logging.getLogger(__name__)

IMAGES_MAGIC = 0x00000804
LABELS_MAGIC = 0x00000801
FORMATS = ("raw-idx", "image-dir")
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".gif")


def asl_class_names():
    """A to Z followed by the three extra signs of the ASL alphabet layout."""
    return list(string.ascii_uppercase) + ["del", "nothing", "space"]


@dataclass
class DatasetBundle:
    images: np.ndarray
    labels: np.ndarray
    class_names: List[str]
    train_idx: Optional[np.ndarray] = None
    test_idx: Optional[np.ndarray] = None

    def __post_init__(self):
        self.images = np.asarray(self.images)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[-1] != 3:
            raise FormatError(f"Images must be [count, H, W, 3], got shape {self.images.shape}.")
        if self.labels.shape != (self.images.shape[0],):
            raise FormatError(f"{self.images.shape[0]} images but labels of shape {self.labels.shape}.")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise LabelError(f"Labels must lie in [0, {len(self.class_names)}).")

    @property
    def num_classes(self):
        return len(self.class_names)

    @property
    def count(self):
        return int(self.images.shape[0])

    @property
    def image_size(self):
        return int(self.images.shape[1])

    @property
    def is_split(self):
        return self.train_idx is not None

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return self.images[indices], self.labels[indices]

    def train_view(self):
        if not self.is_split:
            return self.images, self.labels
        return self.subset(self.train_idx)

    def test_view(self):
        if not self.is_split:
            return self.images, self.labels
        return self.subset(self.test_idx)


# ----------------------------------------------------------------------
# raw-idx
# ----------------------------------------------------------------------
def idx_paths(prefix):
    prefix = str(prefix)
    return (Path(f"{prefix}-images-idx4-ubyte"), Path(f"{prefix}-labels-idx1-ubyte"),
            Path(f"{prefix}-classes.yaml"))


def _read_idx(path, magic, rank):
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError as err:
        raise DatasetError(f"Dataset file not found: {path}") from err
    head = 4 * (1 + rank)
    if len(data) < head:
        raise FormatError(f"{path} is truncated (no complete header).")
    values = np.frombuffer(data[:head], dtype=">u4")
    if int(values[0]) != magic:
        raise FormatError(f"{path} has magic 0x{int(values[0]):08x}, expected 0x{magic:08x}.")
    dims = tuple(int(v) for v in values[1:])
    expected = int(np.prod(dims, dtype=np.int64))
    if len(data) - head != expected:
        raise FormatError(f"{path} holds {len(data) - head} values, header announces {expected}.")
    return np.frombuffer(data[head:], dtype=np.uint8).reshape(dims)


def load_idx(prefix):
    images_path, labels_path, classes_path = idx_paths(prefix)
    pixels = _read_idx(images_path, IMAGES_MAGIC, 4)
    if pixels.shape[-1] != 3:
        raise FormatError(f"{images_path} has {pixels.shape[-1]} channels, expected 3.")
    labels = _read_idx(labels_path, LABELS_MAGIC, 1).astype(np.int64)
    if labels.shape[0] != pixels.shape[0]:
        raise FormatError(f"{pixels.shape[0]} images but {labels.shape[0]} labels.")
    if classes_path.exists():
        class_names = [str(c) for c in read_yaml(classes_path)["classes"]]
    else:
        count = int(labels.max()) + 1 if labels.size else 0
        class_names = [f"class_{c:02d}" for c in range(count)]
    return DatasetBundle(pixels.astype(np.float64) / 255.0, labels, class_names)


def save_idx(bundle, prefix):
    """Write ``bundle`` in raw-idx format; pixel values are rounded to multiples of 1/255."""
    images_path, labels_path, classes_path = idx_paths(prefix)
    images_path.parent.mkdir(parents=True, exist_ok=True)
    if bundle.num_classes > 256:
        raise ContractError("raw-idx labels are single bytes; at most 256 classes.")
    pixels = np.clip(np.rint(bundle.images * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as f:
        np.array([IMAGES_MAGIC, *pixels.shape], dtype=">u4").tofile(f)
        pixels.tofile(f)
    with open(labels_path, "wb") as f:
        np.array([LABELS_MAGIC, bundle.count], dtype=">u4").tofile(f)
        bundle.labels.astype(np.uint8).tofile(f)
    write_yaml(classes_path, {"classes": list(bundle.class_names)})
    return images_path, labels_path


# ----------------------------------------------------------------------
# image directories
# ----------------------------------------------------------------------
def load_image_dir(path, size=32):
    """One subdirectory per class, classes in alphabetical order; images resized to ``size``."""
    root = Path(path)
    if not root.is_dir():
        raise DatasetError(f"Image directory not found: {root}")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DatasetError(f"{root} has no class subdirectories.")
    images, labels = [], []
    for label, class_dir in enumerate(class_dirs):
        files = sorted(p for p in class_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise DatasetError(f"Class directory {class_dir} holds no images.")
        for file in files:
            with Image.open(file) as img:
                img = img.convert("RGB").resize((size, size), Image.BILINEAR)
                images.append(np.asarray(img, dtype=np.uint8))
            labels.append(label)
    logger.info("Loaded %d images of %d classes from %s", len(images), len(class_dirs), root)
    return DatasetBundle(np.stack(images).astype(np.float64) / 255.0, np.array(labels),
                         [p.name for p in class_dirs])


def load_dataset(path, format="raw-idx", size=32):
    if format == "raw-idx":
        return load_idx(path)
    if format == "image-dir":
        return load_image_dir(path, size=size)
    raise ContractError(f"Unknown dataset format {format!r}; expected one of {FORMATS}.")


# ----------------------------------------------------------------------
# synthetic patterns
# ----------------------------------------------------------------------
def _class_color(c, num_classes):
    phase = 2.0 * np.pi * c / num_classes
    return 0.5 + 0.5 * np.cos(phase + np.array([0.0, 2.0 * np.pi / 3.0, 4.0 * np.pi / 3.0]))


def generate_synthetic(num_classes, per_class, size=32, seed=0):
    """
    Class-conditional patterns: an oriented bar (angle set by the class) and a
    coloured blob in a class-dependent quadrant, with position jitter and
    background noise. Each item is drawn in negative with probability 1/2.
    Pixels are multiples of 1/255, so the set survives a raw-idx round trip
    exactly.
    """
    if size not in (32, 64):
        raise ContractError(f"Synthetic images are 32 or 64 pixels wide, got {size}.")
    if num_classes < 1 or per_class < 1:
        raise ContractError("Need at least one class and one item per class.")
    rng = make_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    centre = (size - 1) / 2.0
    thickness = size / 10.0
    images = np.empty((num_classes * per_class, size, size, 3))
    labels = np.repeat(np.arange(num_classes), per_class)
    quadrants = [(0.3, 0.3), (0.3, 0.7), (0.7, 0.3), (0.7, 0.7)]

    for n, c in enumerate(labels):
        angle = np.pi * c / num_classes + rng.uniform(-1.0, 1.0) * np.pi / (4.0 * num_classes)
        dx, dy = rng.uniform(-size / 8.0, size / 8.0, size=2)
        # distance of every pixel to the bar's centre line
        dist = np.abs(-(xx - centre - dx) * np.sin(angle) + (yy - centre - dy) * np.cos(angle))
        bar = np.clip(1.0 - dist / thickness, 0.0, 1.0)
        qy, qx = quadrants[c % 4]
        by, bx = qy * size + rng.uniform(-2, 2), qx * size + rng.uniform(-2, 2)
        blob = np.exp(-((yy - by) ** 2 + (xx - bx) ** 2) / (2.0 * (size / 10.0) ** 2))
        color = _class_color(c, num_classes)
        noise = rng.uniform(0.0, 0.15, size=(size, size, 3))
        image = np.clip(noise + bar[..., None] * color + 0.5 * blob[..., None] * color[::-1], 0.0, 1.0)
        # negative half: class means coincide for a linear read-out
        images[n] = 1.0 - image if rng.uniform() < 0.5 else image

    images = np.rint(images * 255.0) / 255.0
    names = asl_class_names() if num_classes == 29 else [f"class_{c:02d}" for c in range(num_classes)]
    return DatasetBundle(images, labels, names)


# ----------------------------------------------------------------------
# split
# ----------------------------------------------------------------------
def _round_half_up(x):
    return int(np.floor(x + 0.5))


def split(bundle, ratio=0.7, subsample_fraction=0.5, seed=0):
    """
    Stratified train/test split.

    Each class is shuffled with ``seed`` and cut to ``subsample_fraction`` of
    its items first. The train total is ``round(ratio * kept)``, shared
    between classes by largest remainder, leaving every class at least one
    train and one test item.
    """
    if not 0.0 < ratio < 1.0:
        raise ContractError(f"Split ratio must lie in (0, 1), got {ratio}.")
    if not 0.0 < subsample_fraction <= 1.0:
        raise ContractError(f"Subsample fraction must lie in (0, 1], got {subsample_fraction}.")
    rng = make_rng(seed)

    kept = []
    for c in range(bundle.num_classes):
        members = np.flatnonzero(bundle.labels == c)
        if members.size == 0:
            raise SplitError(f"Class {bundle.class_names[c]!r} has no items.")
        members = members[rng.permutation(members.size)]
        n_keep = max(1, _round_half_up(members.size * subsample_fraction))
        if n_keep < 2:
            raise SplitError(f"Class {bundle.class_names[c]!r} keeps {n_keep} item(s); a split needs at least 2.")
        kept.append(members[:n_keep])

    sizes = np.array([k.size for k in kept])
    total_train = _round_half_up(sizes.sum() * ratio)
    quotas = sizes * ratio
    train_counts = np.floor(quotas).astype(np.int64)
    remainder = total_train - int(train_counts.sum())
    if remainder > 0:
        order = sorted(range(len(kept)), key=lambda i: (-(quotas[i] - train_counts[i]), i))
        for i in order[:remainder]:
            train_counts[i] += 1
    train_counts = np.clip(train_counts, 1, sizes - 1)

    train_idx = np.sort(np.concatenate([k[:n] for k, n in zip(kept, train_counts)]))
    test_idx = np.sort(np.concatenate([k[n:] for k, n in zip(kept, train_counts)]))
    logger.debug("split: %d train / %d test items over %d classes", train_idx.size, test_idx.size, len(kept))
    return replace(bundle, train_idx=train_idx, test_idx=test_idx)
