"""Datasets, training configuration and minibatch sampling.

Covers the two-moons generator, IDX (MNIST format) reading and writing with
center cropping, CSV export, and a seeded sampler for minibatches.
"""

from __future__ import annotations

import csv
import gzip
import io
import os
import struct
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, IdxFormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """Input rows ``X`` (T x M) with optional integer labels."""

    X: np.ndarray
    labels: Optional[np.ndarray] = None
    name: str = "dataset"

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DimensionError(f"X must be a non-empty T x M matrix, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("dataset contains non-finite entries")
        X.setflags(write=False)
        object.__setattr__(self, "X", X)
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (X.shape[0],):
                raise DimensionError(
                    f"labels must have length {X.shape[0]}, got shape {labels.shape}"
                )
            labels = labels.astype(np.int64)
            if labels.size and labels.min() < 0:
                raise ValueError("labels must be non-negative")
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)

    @property
    def T(self):
        return self.X.shape[0]

    @property
    def M(self):
        return self.X.shape[1]

    def subset(self, indices, name=None):
        indices = np.asarray(indices)
        labels = None if self.labels is None else self.labels[indices]
        return Dataset(self.X[indices], labels, name or self.name)

    def to_csv(self, path_or_buf, header_comment=None):
        """Write ``x0,...,x{M-1},label`` rows (label column empty if unlabeled)."""
        own = isinstance(path_or_buf, (str, os.PathLike))
        fh = open(path_or_buf, "w", newline="", encoding="utf-8") if own else path_or_buf
        try:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x{j}" for j in range(self.M)] + ["label"])
            for t in range(self.T):
                label = "" if self.labels is None else int(self.labels[t])
                w.writerow([repr(float(v)) for v in self.X[t]] + [label])
        finally:
            if own:
                fh.close()


def load_csv_dataset(path, name=None) -> Dataset:
    """Read a CSV written by :meth:`Dataset.to_csv` (``#`` lines are skipped)."""
    with open(path, encoding="utf-8") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    header, body = rows[0], rows[1:]
    has_label = header[-1] == "label"
    width = len(header) - 1 if has_label else len(header)
    X = np.array([[float(v) for v in r[:width]] for r in body])
    labels = None
    if has_label and body and all(r[width] != "" for r in body):
        labels = np.array([int(r[width]) for r in body])
    return Dataset(X, labels, name or os.path.splitext(os.path.basename(path))[0])


@dataclass(frozen=True)
class Phase:
    """A stretch of training with constant learning rates."""

    iterations: int
    eta_w: float
    eta_q: float
    eta_l: float

    def __post_init__(self):
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ConfigError("every phase needs iterations >= 1", field="training.phases.iterations")
        for name in ("eta_w", "eta_q", "eta_l"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ConfigError("learning rates must be finite and non-negative", field=f"training.phases.{name}")
        if self.eta_w > self.eta_l or self.eta_q > self.eta_l:
            raise ConfigError(
                "two-timescale rule violated: need eta_l >= eta_w and eta_l >= eta_q "
                f"(got eta_w={self.eta_w}, eta_q={self.eta_q}, eta_l={self.eta_l})",
                field="training.phases",
            )


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters of one training run.

    ``log_every`` is the logging interval K. ``lam`` is the ridge term lambda
    added to the lateral matrix.
    """

    phases: Sequence[Phase]
    batch_size: int = 64
    lam: float = 0.001
    seed: int = 0
    q_floor: float = 1e-4
    log_every: int = 100

    def __post_init__(self):
        phases = tuple(p if isinstance(p, Phase) else Phase(*p) for p in self.phases)
        if not phases:
            raise ConfigError("at least one phase is required", field="training.phases")
        object.__setattr__(self, "phases", phases)
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ConfigError("batch_size must be a positive integer", field="training.batch_size")
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ConfigError("lambda must be non-negative", field="model.lambda")
        if not (0 <= int(self.seed) < 2**64) or int(self.seed) != self.seed:
            raise ConfigError("seed must be an unsigned 64-bit integer", field="seed")
        if not (self.q_floor > 0):
            raise ConfigError("q_floor must be positive", field="training.q_floor")
        if int(self.log_every) != self.log_every or self.log_every < 1:
            raise ConfigError("log_every must be a positive integer", field="training.log_every")

    @property
    def total_iterations(self):
        return sum(p.iterations for p in self.phases)


# ---------------------------------------------------------------------------
# half moons


def make_half_moons(count: int = 1600, noise_std: float = 0.1, seed: int = 0) -> Dataset:
    """Two interleaving half circles of radius 1.

    Upper moon (label 0): ``(cos t, sin t)``; lower moon (label 1):
    ``(1 - cos t, 0.5 - sin t)``; ``t`` runs over an even grid on [0, pi].
    With odd ``count`` the upper moon gets the extra point. Isotropic
    Gaussian noise of std ``noise_std`` is added to every coordinate.
    """
    if int(count) != count or count < 2:
        raise ValueError(f"count must be an integer >= 2, got {count!r}")
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    n_upper = (count + 1) // 2
    n_lower = count // 2
    t_up = np.linspace(0.0, np.pi, n_upper)
    t_lo = np.linspace(0.0, np.pi, n_lower)
    upper = np.column_stack([np.cos(t_up), np.sin(t_up)])
    lower = np.column_stack([1.0 - np.cos(t_lo), 0.5 - np.sin(t_lo)])
    X = np.vstack([upper, lower])
    labels = np.concatenate([np.zeros(n_upper, dtype=np.int64), np.ones(n_lower, dtype=np.int64)])
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        X = X + rng.normal(scale=noise_std, size=X.shape)
    return Dataset(X, labels, "half_moons")


# ---------------------------------------------------------------------------
# IDX files


def _read_bytes(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw, expected_magic, path):
    if len(raw) < 8:
        raise IdxFormatError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxFormatError(f"{path}: bad magic number 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"{path}: truncated header")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise IdxFormatError(f"{path}: truncated data ({len(raw) - header} of {size} bytes)")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx_images(images_path, labels_path=None, crop: int = 0, name="mnist") -> Dataset:
    """Load an IDX image file (optionally gzipped) as a Dataset.

    Each image is center-cropped by ``crop`` pixels on every side, flattened
    row-major and scaled to [0, 1].
    """
    if crop < 0:
        raise ValueError("crop must be non-negative")
    images = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, images_path)
    n, h, w = images.shape
    if h - 2 * crop <= 0 or w - 2 * crop <= 0:
        raise ValueError(f"crop={crop} leaves no pixels of a {h}x{w} image")
    images = images[:, crop : h - crop, crop : w - crop]
    X = images.reshape(n, -1).astype(np.float64) / 255.0
    labels = None
    if labels_path is not None:
        labels = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, labels_path)
        if labels.shape[0] != n:
            raise IdxFormatError(f"{n} images but {labels.shape[0]} labels")
    return Dataset(X, labels, name)


def write_idx_images(path, images):
    """Write uint8 images of shape (n, rows, cols) as an uncompressed IDX file."""
    images = np.asarray(images)
    if images.ndim != 3:
        raise DimensionError("images must have shape (n, rows, cols)")
    if images.dtype != np.uint8:
        if images.min() < 0 or images.max() > 255 or not np.all(images == np.round(images)):
            raise ValueError("pixel values must be integers in [0, 255]")
        images = images.astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(np.ascontiguousarray(images).tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def export_bundled_mnist(out_dir):
    """Write the 5000-digit MNIST subset shipped with ``mlxtend`` as IDX files.

    Returns the ``(images_path, labels_path)`` pair. Needs the optional
    ``mlxtend`` dependency; only its bundled CSV is read.
    """
    try:
        from importlib.resources import files

        source = files("mlxtend.data").joinpath("data", "mnist_5k.csv.gz")
        raw = source.read_bytes()
    except (ImportError, FileNotFoundError, ModuleNotFoundError) as exc:
        raise RuntimeError(
            "the bundled MNIST subset needs the optional 'mlxtend' package "
            "(pip install mlxtend)"
        ) from exc
    table = np.loadtxt(io.StringIO(gzip.decompress(raw).decode("ascii")), delimiter=",", dtype=np.int64)
    images = table[:, :-1].reshape(-1, 28, 28)
    labels = table[:, -1]
    os.makedirs(out_dir, exist_ok=True)
    img_path = os.path.join(out_dir, "mnist5k-images-idx3-ubyte")
    lbl_path = os.path.join(out_dir, "mnist5k-labels-idx1-ubyte")
    write_idx_images(img_path, images)
    write_idx_labels(lbl_path, labels)
    return img_path, lbl_path


def stratified_split(labels, n_first, seed=0):
    """Split indices into two groups, the first holding ``n_first`` items with
    classes in (as near as possible) equal proportion to the full set."""
    labels = np.asarray(labels)
    if not 0 <= n_first <= labels.size:
        raise ValueError(f"n_first must be in [0, {labels.size}], got {n_first}")
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    first: List[int] = []
    frac = n_first / labels.size
    for c in classes:
        idx = np.flatnonzero(labels == c)
        rng.shuffle(idx)
        first.extend(idx[: int(round(frac * idx.size))])
    first = np.array(first[:n_first], dtype=np.int64)
    if first.size < n_first:
        # rounding left us short: top up from the remaining indices
        rest = np.setdiff1d(np.arange(labels.size), first)
        first = np.concatenate([first, rng.choice(rest, n_first - first.size, replace=False)])
    first = np.sort(first)
    mask = np.ones(labels.size, bool)
    mask[first] = False
    return first, np.flatnonzero(mask)


# ---------------------------------------------------------------------------
# minibatches


@dataclass
class MinibatchSampler:
    """Draws row-index minibatches without replacement within each batch."""

    n_rows: int
    batch_size: int
    seed: int = 0
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.batch_size < 1 or self.batch_size > self.n_rows:
            raise ValueError(f"batch_size must be in [1, {self.n_rows}], got {self.batch_size}")
        self.rng = np.random.default_rng(self.seed)

    def next_indices(self):
        return self.rng.choice(self.n_rows, size=self.batch_size, replace=False)


def sample_minibatch(d: Dataset, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Return ``batch_size`` distinct rows of ``d.X`` chosen uniformly by ``rng``."""
    if batch_size < 1 or batch_size > d.T:
        raise ValueError(f"batch_size must be in [1, {d.T}], got {batch_size}")
    return d.X[rng.choice(d.T, size=batch_size, replace=False)]
