"""Synthetic domains, client splitting, stratified splits and IDX digit files."""
import csv
import gzip
import logging
import struct
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .config_models import AffineTransform, DomainSpec
from .utils import ConfigurationError, FormatError, InputError

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
IDX_UBYTE = 0x08  # type byte of unsigned-byte payloads


class Dataset:
    """Features of one client or domain, with labels when the data is annotated."""

    def __init__(self, features, labels=None, domain_tag: str = "", num_classes: int = 2):
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] < 1:
            raise InputError(f"features must be a non-empty (N, d) array, got shape {features.shape}")
        if num_classes < 1:
            raise InputError(f"num_classes must be >= 1, got {num_classes}")
        if labels is not None:
            labels = np.asarray(labels)
            if labels.shape != (features.shape[0],):
                raise InputError(f"expected {features.shape[0]} labels, got shape {labels.shape}")
            if not np.issubdtype(labels.dtype, np.integer):
                raise InputError(f"labels must be integers, got dtype {labels.dtype}")
            if labels.min() < 0 or labels.max() >= num_classes:
                raise InputError(f"labels must lie in [0, {num_classes})")
            labels = labels.astype(np.int64)
        self.features = features
        self.labels = labels
        self.domain_tag = domain_tag
        self.num_classes = num_classes

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def labeled(self) -> bool:
        return self.labels is not None

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        labels = None if self.labels is None else self.labels[indices]
        return Dataset(self.features[indices], labels, self.domain_tag, self.num_classes)

    def unlabeled(self) -> "Dataset":
        return Dataset(self.features.copy(), None, self.domain_tag, self.num_classes)

    def class_counts(self) -> np.ndarray:
        if self.labels is None:
            raise InputError(f"dataset '{self.domain_tag}' carries no labels")
        return np.bincount(self.labels, minlength=self.num_classes)

    def to_csv(self, path: str) -> None:
        """Write f0..f{d-1},label rows; label is empty for unlabeled data."""
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow([f"f{i}" for i in range(self.dim)] + ["label"])
            for i in range(len(self)):
                label = "" if self.labels is None else int(self.labels[i])
                writer.writerow([repr(float(v)) for v in self.features[i]] + [label])
        logger.info(f"Wrote {len(self)} samples of '{self.domain_tag}' to {path}")

    def __repr__(self):
        kind = "labeled" if self.labeled else "unlabeled"
        return f"Dataset('{self.domain_tag}', n={len(self)}, d={self.dim}, K={self.num_classes}, {kind})"


def transform_matrix(transform: AffineTransform, dim: int) -> Tuple[np.ndarray, np.ndarray]:
    """Linear part A = R . diag(scale) and translation t of an affine shift."""
    scale = np.ones(dim) if transform.scale is None else np.asarray(transform.scale, dtype=np.float64)
    translation = np.zeros(dim) if transform.translation is None else np.asarray(transform.translation,
                                                                                   dtype=np.float64)
    if scale.shape != (dim,) or translation.shape != (dim,):
        raise ConfigurationError(f"scale and translation need {dim} entries")
    if not (np.all(np.isfinite(scale)) and np.all(np.isfinite(translation))):
        raise ConfigurationError("transform entries must be finite")
    if np.any(scale == 0):
        raise ConfigurationError(f"degenerate transform: zero scale in {scale.tolist()}")
    if transform.permutation is not None and sorted(transform.permutation) != list(range(dim)):
        raise ConfigurationError(f"permutation {transform.permutation} is not a permutation of 0..{dim - 1}")
    theta = np.deg2rad(transform.rotation_deg)
    rotation = np.eye(dim)
    rotation[0, 0], rotation[0, 1] = np.cos(theta), -np.sin(theta)
    rotation[1, 0], rotation[1, 1] = np.sin(theta), np.cos(theta)
    return rotation @ np.diag(scale), translation


def apply_transform(transform: AffineTransform, x: np.ndarray) -> np.ndarray:
    """Map row vectors x through the affine shift and its column permutation."""
    linear, translation = transform_matrix(transform, x.shape[1])
    out = x @ linear.T + translation
    if transform.permutation is not None:
        out = out[:, transform.permutation]
    return out


def make_domain(spec: DomainSpec) -> Dataset:
    """Sample a labeled domain: class means plus scatter, shifted, plus noise.

    Random draws happen in a fixed order (labels, scatter, noise) and the
    transform consumes none, so two specs differing only in their transform
    share every random draw.
    """
    task = spec.base_task
    if spec.n_samples < task.num_classes:
        raise ConfigurationError(
            f"domain '{spec.name}' needs at least {task.num_classes} samples, got {spec.n_samples}")
    transform_matrix(spec.transform, task.dim)

    rng = np.random.default_rng(spec.seed)
    labels = rng.permutation(np.arange(spec.n_samples) % task.num_classes)
    base = task.class_means()[labels] + task.class_sigma * rng.standard_normal((spec.n_samples, task.dim))
    noise = spec.noise_sigma * rng.standard_normal((spec.n_samples, task.dim))
    features = apply_transform(spec.transform, base) + noise
    if spec.standardize:
        std = features.std(axis=0)
        features = (features - features.mean(axis=0)) / np.where(std > 0, std, 1.0)
    logger.debug(f"Generated domain '{spec.name}' with {spec.n_samples} samples")
    return Dataset(features, labels, spec.name, task.num_classes)


def split_domain(ds: Dataset, n_clients: int, rng: np.random.Generator) -> List[Dataset]:
    """Randomly partition a domain into n_clients shards whose sizes differ by at most one."""
    if n_clients < 1:
        raise InputError(f"n_clients must be >= 1, got {n_clients}")
    if n_clients > len(ds):
        raise InputError(f"cannot split {len(ds)} samples across {n_clients} clients")
    if n_clients == 1:
        return [ds.subset(np.arange(len(ds)))]
    order = rng.permutation(len(ds))
    return [ds.subset(np.sort(shard)) for shard in np.array_split(order, n_clients)]


def train_test_split(ds: Dataset, test_fraction: float,
                     rng: np.random.Generator) -> Tuple[Dataset, Dataset]:
    """Disjoint class-stratified split; returns (train, test)."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigurationError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n_test = int(np.floor(len(ds) * test_fraction + 0.5))
    if ds.labels is None:
        order = rng.permutation(len(ds))
        if n_test < 1 or n_test >= len(ds):
            raise ConfigurationError(f"test_fraction {test_fraction} leaves a split of '{ds.domain_tag}' empty")
        return ds.subset(np.sort(order[n_test:])), ds.subset(np.sort(order[:n_test]))

    counts = ds.class_counts()
    exact = counts * test_fraction
    quota = np.floor(exact).astype(np.int64)
    remainder = exact - quota
    # largest remainder first, smaller class index on ties
    for k in sorted(range(len(counts)), key=lambda c: (-remainder[c], c))[:max(0, n_test - quota.sum())]:
        quota[k] += 1
    present = counts > 0
    if np.any(quota[present] < 1) or np.any(quota[present] >= counts[present]):
        raise ConfigurationError(
            f"test_fraction {test_fraction} leaves a class of '{ds.domain_tag}' empty in one split")

    train_idx, test_idx = [], []
    for k in range(ds.num_classes):
        members = rng.permutation(np.flatnonzero(ds.labels == k))
        test_idx.append(members[:quota[k]])
        train_idx.append(members[quota[k]:])
    return ds.subset(np.sort(np.concatenate(train_idx))), ds.subset(np.sort(np.concatenate(test_idx)))


def _read_bytes(path: str) -> bytes:
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rb") as f:
        return f.read()


def _parse_idx(buf: bytes, path: str, ndim: Optional[int] = None) -> Tuple[Tuple[int, ...], np.ndarray]:
    """Parse an unsigned-byte IDX file; ndim pins the dimension count, None accepts any >= 1."""
    if len(buf) < 4:
        raise FormatError(f"{path}: file too short for an IDX header")
    found = struct.unpack_from(">I", buf, 0)[0]
    found_ndim = found & 0xFF
    if found >> 8 != IDX_UBYTE or found_ndim < 1 or (ndim is not None and found_ndim != ndim):
        wanted = f"0x{(IDX_UBYTE << 8) | ndim:08x}" if ndim is not None else "0x000008NN with NN >= 1"
        raise FormatError(f"{path}: bad magic number 0x{found:08x}, expected {wanted}")
    header = 4 + 4 * found_ndim
    if len(buf) < header:
        raise FormatError(f"{path}: truncated header, {len(buf)} bytes where {header} are needed")
    shape = struct.unpack_from(f">{found_ndim}I", buf, 4)
    expected = int(np.prod(shape, dtype=np.int64))
    payload = len(buf) - header
    if payload < expected:
        raise FormatError(f"{path}: truncated payload at byte offset {len(buf)}, expected "
                          f"{expected} bytes starting at offset {header}")
    return shape, np.frombuffer(buf, dtype=np.uint8, count=expected, offset=header)


def load_idx(images_path: str, labels_path: str, num_classes: Optional[int] = None,
             domain_tag: str = "idx") -> Dataset:
    """Read an unsigned-byte IDX image file and its label file (magic 0x801).

    Image files usually carry magic 0x803 (N, rows, cols), but any payload
    with one or more dimensions is accepted; images are flattened and scaled
    to [0, 1]. Paths ending in .gz are decompressed.
    """
    image_shape, pixels = _parse_idx(_read_bytes(images_path), images_path)
    label_shape, labels = _parse_idx(_read_bytes(labels_path), labels_path, ndim=1)
    if image_shape[0] != label_shape[0]:
        raise FormatError(f"{images_path} holds {image_shape[0]} images but {labels_path} "
                          f"holds {label_shape[0]} labels")
    count = image_shape[0]
    if count < 1:
        raise FormatError(f"{images_path}: no images")
    features = pixels.reshape(count, -1).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    logger.info(f"Loaded {count} images of shape {image_shape[1:]} from {images_path}")
    return Dataset(features, labels, domain_tag, num_classes)


def write_idx(ds: Dataset, images_path: str, labels_path: str,
              image_shape: Optional[Sequence[int]] = None) -> None:
    """Write features quantized to bytes (round(255 f)) and labels as IDX files."""
    if ds.labels is None:
        raise InputError("IDX label files need a labeled dataset")
    rows, cols = image_shape if image_shape is not None else (1, ds.dim)
    if rows * cols != ds.dim:
        raise InputError(f"image shape {rows}x{cols} does not hold {ds.dim} features")
    if ds.labels.max() > 255:
        raise InputError("IDX labels are single bytes")
    pixels = np.clip(np.round(ds.features * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, len(ds), rows, cols))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, len(ds)))
        f.write(ds.labels.astype(np.uint8).tobytes())
    logger.info(f"Wrote {len(ds)} samples to {images_path} and {labels_path}")
