"""Feature-vector datasets: CSV ingestion, HAR filtering, normalization, synthetic blobs."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from sklearn.model_selection import train_test_split

from .numerics import ParameterError, Rng

log = logging.getLogger(__name__)

DATASET_KINDS = ("generic", "dsads", "pamap2", "hapt")

# users lacking some classes, and badly underrepresented classes
DATASET_FILTERS = {
    "pamap2": {"users": (3, 4, 9), "classes": (24,)},
    "hapt": {"users": (7, 28), "classes": (8,)},
}


class DataError(ValueError):
    """Input data is malformed or inconsistent."""


@dataclass(frozen=True)
class Schema:
    label_col: str = "label"
    user_col: str | None = None
    dataset_kind: str = "generic"

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        unknown = set(raw) - {"label_col", "user_col", "dataset_kind"}
        if unknown:
            raise DataError(f"unknown schema keys: {sorted(unknown)}")
        return cls(**raw)


@dataclass
class FeatureDataset:
    """Samples x features with dense labels and a train/test split.

    ``class_labels[k]`` is the original label of dense class ``k``; the dense
    ids follow the sorted order of the original labels.
    """

    features: np.ndarray
    labels: np.ndarray
    class_labels: np.ndarray
    user_ids: np.ndarray | None = None
    feature_names: list = field(default_factory=list)
    train_idx: np.ndarray | None = None
    test_idx: np.ndarray | None = None
    kind: str = "generic"

    @property
    def n_classes(self):
        return len(self.class_labels)

    @property
    def n_features(self):
        return self.features.shape[1]

    def train(self):
        return self.features[self.train_idx], self.labels[self.train_idx]

    def test(self):
        return self.features[self.test_idx], self.labels[self.test_idx]


def _parse_label(value):
    try:
        return int(value)
    except ValueError:
        try:
            f = float(value)
        except ValueError:
            return value
        return int(f) if f.is_integer() else f


def densify(raw_labels):
    """Map original labels to ``0..K-1`` preserving their sorted order."""
    classes = np.array(sorted(set(raw_labels.tolist())), dtype=raw_labels.dtype)
    dense = np.searchsorted(classes, raw_labels)
    return dense.astype(np.int64), classes


def load_csv(path, schema: Schema | None = None) -> FeatureDataset:
    """Read a header-row CSV; every column but the label/user columns is a feature."""
    schema = schema or Schema()
    if schema.dataset_kind not in DATASET_KINDS:
        raise ParameterError(f"unknown dataset kind {schema.dataset_kind!r}")
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        if schema.label_col not in header:
            raise DataError(f"{path}: label column {schema.label_col!r} not in header")
        if schema.user_col is not None and schema.user_col not in header:
            raise DataError(f"{path}: user column {schema.user_col!r} not in header")
        li = header.index(schema.label_col)
        ui = header.index(schema.user_col) if schema.user_col else None
        fcols = [i for i in range(len(header)) if i not in (li, ui)]
        if not fcols:
            raise DataError(f"{path}: no feature columns")
        feats, labels, users = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                vals = [float(row[i]) for i in fcols]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-numeric feature ({exc})") from None
            if not np.all(np.isfinite(vals)):
                raise DataError(f"{path}:{lineno}: NaN or Inf feature value")
            feats.append(vals)
            labels.append(_parse_label(row[li].strip()))
            if ui is not None:
                try:
                    users.append(int(float(row[ui])))
                except ValueError:
                    raise DataError(f"{path}:{lineno}: non-integer user id {row[ui]!r}") from None
    if not feats:
        raise DataError(f"{path}: no data rows")
    raw = np.array(labels)
    dense, classes = densify(raw)
    return FeatureDataset(
        features=np.array(feats, dtype=np.float64),
        labels=dense,
        class_labels=classes,
        user_ids=np.array(users, dtype=np.int64) if ui is not None else None,
        feature_names=[header[i] for i in fcols],
        kind=schema.dataset_kind,
    )


def save_csv(ds: FeatureDataset, path, label_col="label", user_col="user"):
    """Inverse of :func:`load_csv`; floats are written with round-trip precision."""
    names = ds.feature_names or [f"f{i}" for i in range(ds.n_features)]
    header = list(names) + [label_col] + ([user_col] if ds.user_ids is not None else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(ds.labels)):
            row = [repr(float(v)) for v in ds.features[i]]
            row.append(str(ds.class_labels[ds.labels[i]]))
            if ds.user_ids is not None:
                row.append(str(int(ds.user_ids[i])))
            w.writerow(row)


def subset(ds: FeatureDataset, keep) -> FeatureDataset:
    """Restrict to samples ``keep`` (bool mask or indices) and re-densify labels."""
    keep = np.asarray(keep)
    if keep.dtype == bool:
        keep = np.flatnonzero(keep)
    raw = ds.class_labels[ds.labels[keep]]
    dense, classes = densify(raw)
    return FeatureDataset(
        features=ds.features[keep],
        labels=dense,
        class_labels=classes,
        user_ids=None if ds.user_ids is None else ds.user_ids[keep],
        feature_names=list(ds.feature_names),
        kind=ds.kind,
    )


def apply_dataset_filters(ds: FeatureDataset, dataset_kind=None) -> FeatureDataset:
    """Drop the users and classes excluded for PAMAP2 and HAPT; other kinds pass through."""
    kind = (dataset_kind or ds.kind).lower()
    if kind not in DATASET_KINDS:
        raise ParameterError(f"unknown dataset kind {kind!r}")
    rule = DATASET_FILTERS.get(kind)
    if rule is None:
        return ds
    if ds.user_ids is None:
        raise DataError(f"{kind} filtering needs per-sample user ids")
    users = np.asarray(rule["users"])
    drop = {str(c) for c in rule["classes"]}
    names = [str(c) for c in ds.class_labels.tolist()]
    absent_users = sorted(set(users.tolist()) - set(ds.user_ids.tolist()))
    absent_classes = sorted(drop - set(names))
    if absent_users or absent_classes:
        log.warning("%s filter: users %s / classes %s already absent", kind, absent_users, absent_classes)
    class_keep = np.array([n not in drop for n in names], dtype=bool)
    keep = ~np.isin(ds.user_ids, users) & class_keep[ds.labels]
    out = subset(ds, keep)
    out.kind = kind
    return out


def split_train_test(ds: FeatureDataset, rng: Rng, test_size=0.2) -> FeatureDataset:
    """Stratified random split, seeded from ``rng``."""
    idx = np.arange(len(ds.labels))
    seed = int(rng.integers(0, 2**31 - 1))
    tr, te = train_test_split(idx, test_size=test_size, stratify=ds.labels, random_state=seed)
    return replace(ds, train_idx=np.sort(tr), test_idx=np.sort(te))


def normalize(ds: FeatureDataset) -> FeatureDataset:
    """Z-score every feature with train-split statistics; zero-variance features become 0."""
    if ds.train_idx is None or len(ds.train_idx) == 0:
        raise DataError("normalize needs a nonempty train split")
    train = ds.features[ds.train_idx]
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    live = std > 0
    out = np.zeros_like(ds.features)
    out[:, live] = (ds.features[:, live] - mean[live]) / std[live]
    return replace(ds, features=out)


def synth_blobs(classes, samples_per_class, dim, separation, rng: Rng, test_size=0.2) -> FeatureDataset:
    """Isotropic unit-variance Gaussian blobs.

    Class centers are random unit directions scaled by ``separation``, so
    ``separation`` is the center-to-origin distance in units of the blob
    standard deviation.
    """
    if classes < 2:
        raise ParameterError("synth_blobs needs at least 2 classes")
    dirs = rng.split("centers").gaussian(0.0, 1.0, (classes, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    centers = separation * dirs
    noise = rng.split("noise").gaussian(0.0, 1.0, (classes * samples_per_class, dim))
    labels = np.repeat(np.arange(classes), samples_per_class)
    ds = FeatureDataset(
        features=centers[labels] + noise,
        labels=labels,
        class_labels=np.arange(classes),
        feature_names=[f"f{i}" for i in range(dim)],
        kind="generic",
    )
    return split_train_test(ds, rng.split("split"), test_size)
