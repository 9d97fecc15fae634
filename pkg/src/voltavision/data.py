"""Dataset ingestion, preprocessing, fold planning, and batch iteration.

Two sources are supported:

* image folders laid out as ``root/<class_name>/*.{png,jpg,jpeg}``; class
  names are the subdirectory names, sorted lexicographically;
* CIFAR-style binary files: each record is one label byte (two for the
  coarse+fine 100-class variant, the fine byte is used) followed by 3072
  pixel bytes in R,G,B plane order, 32x32 row-major.

Images are decoded to RGB in [0, 1], bilinearly resized to 32x32 with the
half-pixel-center convention, and normalized with mean 0.5 / std 0.5 per
channel, which maps them into [-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError, DataError, DecodeError
from .rng import make_rng

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")
CIFAR_PIXEL_BYTES = 3072


@dataclass
class LabeledDataset:
    class_names: list[str]
    samples: list[tuple[np.ndarray, int]]  # ((3, H, W) float32 in [0, 1], class index)
    source: str = ""

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([label for _, label in self.samples], dtype=np.int64)

    def class_counts(self) -> list[int]:
        counts = [0] * len(self.class_names)
        for _, label in self.samples:
            counts[label] += 1
        return counts

    def filter_classes(self, keep_names: list[str]) -> "LabeledDataset":
        """Subset to the named classes, remapping indices to the kept order."""
        missing = [n for n in keep_names if n not in self.class_names]
        if missing:
            raise DataError(f"unknown class name(s) {missing}; dataset has {self.class_names}")
        names = sorted(keep_names)
        remap = {self.class_names.index(n): i for i, n in enumerate(names)}
        samples = [(img, remap[label]) for img, label in self.samples
                   if label in remap]
        return LabeledDataset(class_names=names, samples=samples,
                              source=f"{self.source} (classes {','.join(names)})")


def decode_image_file(path) -> np.ndarray:
    """Decode one image to a (3, H, W) float32 array in [0, 1].

    Grayscale images are replicated to 3 channels; alpha is dropped.
    """
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DecodeError(f"decode error: {path}: {exc}") from exc
    return (arr.astype(np.float32) / 255.0).transpose(2, 0, 1)


def load_image_folder(root) -> LabeledDataset:
    """Load ``root/<class_name>/*`` with deterministic, path-sorted order."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    class_dirs = sorted((d for d in root.iterdir() if d.is_dir()), key=lambda d: d.name)
    if len(class_dirs) < 2:
        raise DataError(f"{root}: found {len(class_dirs)} class directories, need at least 2")
    class_names = [d.name for d in class_dirs]
    samples = []
    for label, class_dir in enumerate(class_dirs):
        files = sorted(p for p in class_dir.iterdir()
                       if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS)
        if not files:
            raise DataError(f"class directory {class_dir} has no decodable images")
        for path in files:
            samples.append((decode_image_file(path), label))
    return LabeledDataset(class_names=class_names, samples=samples, source=str(root))


def load_cifar_binary(paths, coarse_fine: bool = False) -> LabeledDataset:
    """Load CIFAR binary batch files.

    coarse_fine=True selects the two-label-byte record layout of the
    100-class variant; classification labels come from the fine byte.
    """
    label_bytes = 2 if coarse_fine else 1
    record = label_bytes + CIFAR_PIXEL_BYTES
    paths = [Path(p) for p in ([paths] if isinstance(paths, (str, Path)) else paths)]
    if not paths:
        raise DataError("no CIFAR files given")
    samples = []
    max_label = -1
    for path in paths:
        raw = path.read_bytes()
        if len(raw) % record != 0:
            raise DataError(
                f"{path}: length {len(raw)} is not a multiple of record size {record}")
        recs = np.frombuffer(raw, dtype=np.uint8).reshape(-1, record)
        labels = recs[:, label_bytes - 1]
        pixels = recs[:, label_bytes:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
        for img, label in zip(pixels, labels):
            samples.append((img, int(label)))
        if len(labels):
            max_label = max(max_label, int(labels.max()))
    if not samples:
        raise DataError(f"no records found in {[str(p) for p in paths]}")
    class_names = [str(i) for i in range(max_label + 1)]
    return LabeledDataset(class_names=class_names, samples=samples,
                          source=",".join(str(p) for p in paths))


def encode_cifar_record(image: np.ndarray, label: int, coarse_label: int | None = None) -> bytes:
    """Inverse of the CIFAR record parse, for byte-exactness checks."""
    pixels = np.rint(image * 255.0).astype(np.uint8).reshape(-1)
    prefix = bytes([coarse_label, label]) if coarse_label is not None else bytes([label])
    return prefix + pixels.tobytes()


@dataclass(frozen=True)
class PreprocessConfig:
    target_h: int = 32
    target_w: int = 32
    mean: tuple[float, float, float] = (0.5, 0.5, 0.5)
    std: tuple[float, float, float] = (0.5, 0.5, 0.5)

    def __post_init__(self):
        if any(s <= 0 for s in self.std):
            raise ConfigError(f"std must be positive, got {self.std}")


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Channelwise bilinear resize with half-pixel-center sampling.

    Source coordinate of output pixel i is (i + 0.5) * in/out - 0.5, clamped
    to the valid range, so an identical size is an exact identity and corner
    pixels keep their source values on upscale.
    """
    c, h, w = image.shape
    if h == 0 or w == 0:
        raise DataError(f"zero-area image of shape {image.shape}")
    if (h, w) == (out_h, out_w):
        return image.copy()
    ys = np.clip((np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[None, :, None]
    wx = (xs - x0)[None, None, :]
    v00 = image[:, y0][:, :, x0]
    v01 = image[:, y0][:, :, x1]
    v10 = image[:, y1][:, :, x0]
    v11 = image[:, y1][:, :, x1]
    top = v00 * (1 - wx) + v01 * wx
    bottom = v10 * (1 - wx) + v11 * wx
    return (top * (1 - wy) + bottom * wy).astype(np.float32)


def preprocess(image: np.ndarray, cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """Resize an RGB [0, 1] image to the target size and normalize per channel."""
    resized = bilinear_resize(np.asarray(image, dtype=np.float32), cfg.target_h, cfg.target_w)
    mean = np.asarray(cfg.mean, dtype=np.float32)[:, None, None]
    std = np.asarray(cfg.std, dtype=np.float32)[:, None, None]
    return (resized - mean) / std


def prepare_arrays(dataset: LabeledDataset,
                   cfg: PreprocessConfig = PreprocessConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Preprocess the whole dataset once into (N, 3, 32, 32) inputs and labels."""
    if not dataset.samples:
        raise DataError("empty dataset")
    x = np.stack([preprocess(img, cfg) for img, _ in dataset.samples])
    return x, dataset.labels


@dataclass
class FoldPlan:
    k: int
    folds: list[list[int]]
    seed: int

    def train_indices(self, fold: int) -> list[int]:
        out = []
        for i, indices in enumerate(self.folds):
            if i != fold:
                out.extend(indices)
        return sorted(out)

    def to_text(self) -> str:
        lines = [f"k = {self.k}", f"seed = {self.seed}"]
        for i, indices in enumerate(self.folds):
            lines.append(f"fold {i}: " + " ".join(str(j) for j in indices))
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_text())


def kfold_split(dataset: LabeledDataset, k: int = 5, seed: int = 0) -> FoldPlan:
    """Stratified k-fold plan from a seeded per-class shuffle.

    Within every class, fold sizes differ by at most one. The per-class
    remainders rotate across folds (class by class, in class-index order),
    so overall fold sizes also differ by at most one.
    """
    if k < 2:
        raise ConfigError(f"fold count must be >= 2, got {k}")
    labels = dataset.labels
    rng = make_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    extra_cursor = 0
    for c, name in enumerate(dataset.class_names):
        idx = np.flatnonzero(labels == c)
        if len(idx) < k:
            raise DataError(f"class {name!r} has {len(idx)} samples, fewer than k={k}")
        perm = idx[rng.permutation(len(idx))]
        base, rem = divmod(len(idx), k)
        extra_folds = {(extra_cursor + j) % k for j in range(rem)}
        pos = 0
        for f in range(k):
            take = base + (1 if f in extra_folds else 0)
            folds[f].extend(int(i) for i in perm[pos:pos + take])
            pos += take
        extra_cursor += rem
    for f in folds:
        f.sort()
    return FoldPlan(k=k, folds=folds, seed=seed)


def iterate_batches(indices, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Shuffled batches of indices, keyed by (seed, epoch).

    A final batch shorter than 2 is merged into the previous one (train-mode
    batchnorm needs at least 2 samples); with a single short batch there is
    nothing to merge and it is returned as-is.
    """
    idx = np.asarray(indices)
    rng = make_rng(seed, epoch)
    perm = idx[rng.permutation(len(idx))]
    chunks = [perm[i:i + batch_size] for i in range(0, len(perm), batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks
