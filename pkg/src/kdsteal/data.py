"""Labeled datasets: synthetic generators, IDX ingestion, subsetting, storage."""

from dataclasses import dataclass, field, asdict
import json
import math
import struct

import numpy as np

from .errors import ConfigError, DomainError, FormatError
from .nn import derive_rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int
    split: str = "train"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.labels.ndim != 1:
            raise ConfigError("inputs must be (n, d) and labels (n,)")
        if len(self.labels) != len(self.inputs):
            raise ConfigError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")
        if len(self.labels) < 1:
            raise ConfigError("dataset is empty")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise ConfigError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self):
        return self.inputs.shape[1]

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.n_classes)

    def take(self, index):
        return LabeledDataset(self.inputs[index], self.labels[index], self.n_classes,
                              self.split, dict(self.provenance))


@dataclass
class SyntheticSpec:
    """Recipe for a synthetic classification problem.

    ``gaussian_blobs``: class means ``mu_c = separation * g_c / sqrt(d)`` with
    ``g_c ~ N(0, I_d)``; each class is a mixture of ``modes`` equal-weight
    components centred at ``mu_c + separation * h_cm / sqrt(d)`` (``h_cm ~
    N(0, I_d)``, only when ``modes > 1``). Samples add ``noise * N(0, I_d)``.

    ``two_spirals``: class ``c`` follows the arm ``r(t) = t``, angle
    ``t * separation + 2*pi*c/C`` for ``t ~ U(0.1, 1)``; the 2-D points get
    ``0.1 * noise`` Gaussian jitter and are rotated into ``d`` dimensions by a
    random orthogonal map, with ``noise``-scaled jitter on the extra axes.
    """

    generator: str = "gaussian_blobs"
    n_classes: int = 10
    dim: int = 16
    train_per_class: int = 500
    test_per_class: int = 200
    separation: float = 3.0
    noise: float = 1.0
    modes: int = 1
    seed: int = 0

    def validate(self):
        if self.generator not in ("gaussian_blobs", "two_spirals"):
            raise ConfigError(f"unknown generator {self.generator!r}")
        if self.n_classes < 2 or self.dim < 2:
            raise ConfigError("need at least 2 classes and 2 input dimensions")
        if self.train_per_class < 1 or self.test_per_class < 1 or self.modes < 1:
            raise ConfigError("per-class sample counts and modes must be >= 1")
        if not (self.separation > 0 and self.noise >= 0):
            raise ConfigError("separation must be > 0 and noise >= 0")
        return self


def _blob_centres(spec, rng):
    d = spec.dim
    means = spec.separation * rng.standard_normal((spec.n_classes, d)) / math.sqrt(d)
    if spec.modes == 1:
        return means[:, None, :]
    offsets = spec.separation * rng.standard_normal((spec.n_classes, spec.modes, d)) / math.sqrt(d)
    return means[:, None, :] + offsets


def _sample_blobs(spec, centres, per_class, rng):
    labels = np.repeat(np.arange(spec.n_classes), per_class)
    modes = rng.integers(0, spec.modes, size=labels.size)
    x = centres[labels, modes] + spec.noise * rng.standard_normal((labels.size, spec.dim))
    return x, labels


def _sample_spirals(spec, rotation, per_class, rng):
    labels = np.repeat(np.arange(spec.n_classes), per_class)
    t = rng.uniform(0.1, 1.0, size=labels.size)
    angle = t * spec.separation + 2 * np.pi * labels / spec.n_classes
    plane = np.stack([t * np.cos(angle), t * np.sin(angle)], axis=1)
    plane += 0.1 * spec.noise * rng.standard_normal(plane.shape)
    extra = spec.noise * 0.1 * rng.standard_normal((labels.size, spec.dim - 2))
    return np.hstack([plane, extra]) @ rotation, labels


def gen_dataset(spec):
    """Deterministic ``(train, test)`` pair for a :class:`SyntheticSpec`."""
    spec.validate()
    structure_rng = derive_rng(spec.seed, "structure")
    if spec.generator == "gaussian_blobs":
        sampler, shape = _sample_blobs, _blob_centres(spec, structure_rng)
    else:
        sampler = _sample_spirals
        shape, _ = np.linalg.qr(structure_rng.standard_normal((spec.dim, spec.dim)))
    provenance = {"source": "synthetic", **asdict(spec)}
    out = []
    for split, per_class in (("train", spec.train_per_class), ("test", spec.test_per_class)):
        x, y = sampler(spec, shape, per_class, derive_rng(spec.seed, split))
        out.append(LabeledDataset(x, y, spec.n_classes, split, dict(provenance)))
    return out[0], out[1]


def blob_centres(spec):
    """The class-component centres used by :func:`gen_dataset` (shape ``(C, modes, d)``)."""
    return _blob_centres(spec.validate(), derive_rng(spec.seed, "structure"))


def subset_data(data, fraction, seed):
    """Stratified subsample keeping ``ceil(fraction * n_c)`` items of each class.

    Kept items stay in their original order. ``fraction=1`` returns every item.
    """
    if not 0.0 < fraction <= 1.0:
        raise DomainError(f"fraction must lie in (0, 1], got {fraction}")
    if fraction == 1.0:
        return data.take(np.arange(len(data)))
    rng = derive_rng(seed, "subset")
    keep = []
    for c in range(data.n_classes):
        idx = np.flatnonzero(data.labels == c)
        n_keep = math.ceil(fraction * len(idx))
        keep.append(rng.permutation(idx)[:n_keep])
    subset = data.take(np.sort(np.concatenate(keep)))
    subset.provenance["fraction"] = fraction
    return subset


def _read_header(buf, path, magic, n_dims):
    if len(buf) < 4 + 4 * n_dims:
        raise FormatError(f"{path}: truncated header at byte offset {len(buf)}")
    found = struct.unpack(">I", buf[:4])[0]
    if found != magic:
        raise FormatError(f"{path}: bad magic 0x{found:08x} at byte offset 0 (expected 0x{magic:08x})")
    return struct.unpack(f">{n_dims}I", buf[4:4 + 4 * n_dims])


def load_idx(images_path, labels_path, n_classes=None):
    """Read an IDX image/label file pair (MNIST layout).

    Pixels are scaled to [0, 1] and each image is flattened row-major.
    """
    with open(images_path, "rb") as f:
        img = f.read()
    with open(labels_path, "rb") as f:
        lab = f.read()
    count, rows, cols = _read_header(img, images_path, IDX_IMAGES_MAGIC, 3)
    (n_labels,) = _read_header(lab, labels_path, IDX_LABELS_MAGIC, 1)
    need = 16 + count * rows * cols
    if len(img) < need:
        raise FormatError(f"{images_path}: truncated pixel data at byte offset {len(img)} (need {need})")
    if len(lab) < 8 + n_labels:
        raise FormatError(f"{labels_path}: truncated label data at byte offset {len(lab)} (need {8 + n_labels})")
    if count != n_labels:
        raise FormatError(f"{labels_path}: label count {n_labels} at byte offset 4 does not match image count {count}")
    pixels = np.frombuffer(img, dtype=np.uint8, count=count * rows * cols, offset=16)
    labels = np.frombuffer(lab, dtype=np.uint8, count=n_labels, offset=8).astype(np.int64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if n_labels else 1
    return LabeledDataset(pixels.reshape(count, rows * cols) / 255.0, labels, n_classes,
                          provenance={"source": "idx", "images": str(images_path),
                                      "labels": str(labels_path), "rows": rows, "cols": cols})


def save_dataset_pair(path, train, test):
    np.savez(path, train_x=train.inputs, train_y=train.labels, test_x=test.inputs,
             test_y=test.labels, n_classes=train.n_classes,
             provenance=json.dumps(train.provenance, sort_keys=True))


def load_dataset_pair(path):
    try:
        with np.load(path, allow_pickle=False) as z:
            prov = json.loads(str(z["provenance"]))
            c = int(z["n_classes"])
            return (LabeledDataset(z["train_x"], z["train_y"], c, "train", dict(prov)),
                    LabeledDataset(z["test_x"], z["test_y"], c, "test", dict(prov)))
    except (OSError, KeyError, ValueError) as exc:
        raise FormatError(f"{path}: not a dataset file ({exc})") from exc
