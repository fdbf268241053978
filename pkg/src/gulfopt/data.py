"""Dataset ingestion and synthesis.

Datasets hold float64 features and integer class indices. Synthetic
generators are fully seeded; label noise (applied to the training split
only) is the desk-scale mechanism that makes a flexible model overfit, so
pulled-back intermediate models can generalize better.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DatasetParseError, InvalidInputError, InvalidParameterError
from .numerics import RngStream


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    num_classes: int

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise InvalidInputError(f"inconsistent dataset shapes {X.shape} / {y.shape}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]


def hinge_labels(y: np.ndarray) -> np.ndarray:
    """Map binary class indices {0, 1} to the {-1, +1} margin encoding."""
    y = np.asarray(y, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() > 1):
        raise InvalidInputError("margin encoding needs binary class indices")
    return 2.0 * y - 1.0


def load_csv_dataset(path, label_column: str, standardize: bool = False) -> Dataset:
    """Load a headered CSV; labels become class indices by sorted distinct value.

    With standardize=True, features are shifted/scaled per column by this
    file's own statistics (std floored at 1e-12 for constant columns).
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetParseError(f"{path}: empty file") from None
        if label_column not in header:
            raise DatasetParseError(f"{path}: no column named {label_column!r}", column=label_column)
        label_idx = header.index(label_column)
        feature_cols = [i for i in range(len(header)) if i != label_idx]
        rows = []
        labels = []
        for rownum, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise DatasetParseError(f"{path}: row {rownum} has {len(rec)} cells, expected {len(header)}", row=rownum)
            vals = []
            for i in feature_cols:
                try:
                    vals.append(float(rec[i]))
                except ValueError:
                    raise DatasetParseError(
                        f"{path}: non-numeric cell at row {rownum}, column {header[i]!r}",
                        row=rownum,
                        column=header[i],
                    ) from None
            rows.append(vals)
            labels.append(rec[label_idx])
    if not rows:
        raise DatasetParseError(f"{path}: no data rows")
    X = np.asarray(rows, dtype=np.float64)
    distinct = sorted(set(labels), key=_label_sort_key(labels))
    mapping = {v: i for i, v in enumerate(distinct)}
    y = np.asarray([mapping[v] for v in labels], dtype=np.int64)
    ds = Dataset(X, y, num_classes=len(distinct))
    if standardize:
        ds, _ = standardize_features(ds)
    return ds


def _label_sort_key(labels):
    try:
        for v in labels:
            float(v)
        return lambda s: float(s)
    except ValueError:
        return lambda s: s


def standardize_features(train: Dataset, test: Dataset | None = None):
    """Per-column (x - mean) / std using the training split's statistics."""
    mean = train.X.mean(axis=0)
    std = np.maximum(train.X.std(axis=0), 1e-12)
    out_train = Dataset((train.X - mean) / std, train.y, train.num_classes)
    if test is None:
        return out_train, None
    return out_train, Dataset((test.X - mean) / std, test.y, test.num_classes)


GENERATORS = ("gaussian-blobs", "two-arcs")


@dataclass(frozen=True)
class SyntheticSpec:
    generator: str
    num_classes: int
    examples_per_class: int
    input_dim: int
    class_separation: float
    label_noise: float
    seed: int

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise InvalidParameterError(f"generator must be one of {GENERATORS}, got {self.generator!r}")
        if self.num_classes < 2 or self.examples_per_class < 1 or self.input_dim < 1:
            raise InvalidParameterError("num_classes >= 2, examples_per_class >= 1, input_dim >= 1 required")
        if not (0.0 <= self.label_noise < 0.5):
            raise InvalidParameterError(f"label_noise must lie in [0, 0.5), got {self.label_noise}")
        if self.generator == "two-arcs" and (self.num_classes != 2 or self.input_dim < 2):
            raise InvalidParameterError("two-arcs needs num_classes=2 and input_dim >= 2")

    def to_dict(self) -> dict:
        return {
            "generator": self.generator,
            "num_classes": self.num_classes,
            "examples_per_class": self.examples_per_class,
            "input_dim": self.input_dim,
            "class_separation": self.class_separation,
            "label_noise": self.label_noise,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "SyntheticSpec":
        return SyntheticSpec(
            generator=str(d["generator"]),
            num_classes=int(d["num_classes"]),
            examples_per_class=int(d["examples_per_class"]),
            input_dim=int(d["input_dim"]),
            class_separation=float(d["class_separation"]),
            label_noise=float(d["label_noise"]),
            seed=int(d["seed"]),
        )


def _blob_centers(spec: SyntheticSpec, stream: RngStream) -> np.ndarray:
    # Orthonormal directions scaled so pairwise center distance equals the
    # separation (when num_classes <= input_dim).
    g = stream.generator().standard_normal((spec.input_dim, spec.num_classes))
    if spec.num_classes <= spec.input_dim:
        q, _ = np.linalg.qr(g)
        dirs = q[:, : spec.num_classes].T
    else:
        dirs = g.T / np.linalg.norm(g.T, axis=1, keepdims=True)
    return dirs * (spec.class_separation / np.sqrt(2.0))


def _sample_split(spec: SyntheticSpec, stream: RngStream, centers: np.ndarray | None) -> Dataset:
    k, per, d = spec.num_classes, spec.examples_per_class, spec.input_dim
    if spec.generator == "gaussian-blobs":
        xs, ys = [], []
        for c in range(k):
            noise = stream.child(1 + c).generator().standard_normal((per, d))
            xs.append(centers[c] + noise)
            ys.append(np.full(per, c, dtype=np.int64))
        X = np.vstack(xs)
        y = np.concatenate(ys)
    else:  # two-arcs
        xs, ys = [], []
        for c in range(2):
            gen = stream.child(1 + c).generator()
            t = gen.uniform(0.0, np.pi, size=per)
            pts = np.zeros((per, d))
            if c == 0:
                pts[:, 0] = np.cos(t)
                pts[:, 1] = np.sin(t)
            else:
                pts[:, 0] = 1.0 - np.cos(t)
                pts[:, 1] = spec.class_separation - np.sin(t)
            pts[:, :2] += 0.15 * gen.standard_normal((per, 2))
            if d > 2:
                pts[:, 2:] = gen.standard_normal((per, d - 2))
            xs.append(pts)
            ys.append(np.full(per, c, dtype=np.int64))
        X = np.vstack(xs)
        y = np.concatenate(ys)
    perm = stream.child(100).generator().permutation(X.shape[0])
    return Dataset(X[perm], y[perm], num_classes=k)


def _flip_labels(ds: Dataset, noise: float, stream: RngStream) -> Dataset:
    if noise == 0.0:
        return ds
    gen = stream.generator()
    flip = gen.uniform(size=ds.n) < noise
    offsets = gen.integers(1, ds.num_classes, size=ds.n)
    y = ds.y.copy()
    y[flip] = (y[flip] + offsets[flip]) % ds.num_classes
    return Dataset(ds.X, y, ds.num_classes)


def gen_synthetic(spec: SyntheticSpec) -> tuple[Dataset, Dataset]:
    """Seeded (train, test) pair from one shared distribution (blob centers
    are drawn once); label noise only corrupts the training split."""
    root = RngStream(spec.seed)
    centers = _blob_centers(spec, root.child(3)) if spec.generator == "gaussian-blobs" else None
    train = _sample_split(spec, root.child(0), centers)
    test = _sample_split(spec, root.child(1), centers)
    train = _flip_labels(train, spec.label_noise, root.child(2))
    return train, test


def write_dataset_csv(ds: Dataset, path, label_column: str = "label") -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{i}" for i in range(ds.input_dim)] + [label_column])
        for row, label in zip(ds.X, ds.y):
            writer.writerow([format(v, ".17g") for v in row] + [int(label)])
