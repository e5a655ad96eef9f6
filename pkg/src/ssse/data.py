"""Dataset generators, CSV ingestion, and removal-split construction.

Synthetic generators are pure functions of their seed. Sample ids are
zero-padded strings so lexicographic id order equals generation order;
an optional prefix keeps id spaces disjoint when an experiment carries
separate train and test datasets.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputError, NumericError
from .models import Dataset, ModelParams, MultiAttrLinear, MultinomialLinear, predict_proba

_MARGIN_RESIDUAL_TOL = 1e-9


def make_ids(n: int, prefix: str = "") -> tuple[str, ...]:
    return tuple(f"{prefix}{i:06d}" for i in range(n))


# ---------------------------------------------------------------------------
# Synthetic generators
# ---------------------------------------------------------------------------

def make_blobs(
    seed: int,
    n_per_class: int,
    centers: Sequence[Sequence[float]],
    spread: float,
    id_prefix: str = "",
) -> Dataset:
    """Two-dimensional Gaussian clusters, one class per center, labels 1..c."""
    centers_arr = np.asarray(centers, dtype=np.float64)
    if centers_arr.ndim != 2 or centers_arr.shape[1] != 2:
        raise InputError("centers must be a sequence of 2-d points")
    if n_per_class < 1 or spread <= 0:
        raise InputError("need n_per_class >= 1 and spread > 0")
    c = centers_arr.shape[0]
    rng = np.random.default_rng(seed)
    features = np.vstack(
        [centers_arr[k] + spread * rng.standard_normal((n_per_class, 2)) for k in range(c)]
    )
    labels = np.repeat(np.arange(1, c + 1), n_per_class)
    return Dataset(features=features, labels=labels, ids=make_ids(c * n_per_class, id_prefix))


def make_gaussian_classes(
    seed: int,
    n_per_class: int,
    n_features: int,
    n_classes: int,
    center_scale: float = 3.0,
    spread: float = 1.0,
    id_prefix: str = "",
    center_seed: int | None = None,
) -> Dataset:
    """Gaussian class clusters in n_features dimensions with random centers.

    ``center_seed`` fixes the class centers independently of the sample
    noise. Two datasets drawn with different ``seed`` values but the same
    ``center_seed`` come from the same mixture; leaving it None keeps the
    single-stream draw where ``seed`` controls both. The center stream is
    keyed so it never replays the noise stream even when the seeds match.
    """
    if n_per_class < 1 or n_features < 1 or n_classes < 2:
        raise InputError("need n_per_class >= 1, n_features >= 1, n_classes >= 2")
    rng = np.random.default_rng(seed)
    center_rng = rng if center_seed is None else np.random.default_rng([center_seed, 1])
    centers = center_scale * center_rng.standard_normal((n_classes, n_features))
    features = np.vstack(
        [centers[k] + spread * rng.standard_normal((n_per_class, n_features)) for k in range(n_classes)]
    )
    labels = np.repeat(np.arange(1, n_classes + 1), n_per_class)
    return Dataset(
        features=features, labels=labels, ids=make_ids(n_classes * n_per_class, id_prefix)
    )


def make_attributes(
    seed: int,
    n: int,
    n_features: int,
    n_attrs: int,
    frequencies: Sequence[float],
    overlap: float = 0.3,
    id_prefix: str = "",
    direction_seed: int | None = None,
) -> Dataset:
    """Correlated binary attributes from thresholded linear scores.

    Each attribute j gets a direction that mixes a shared component
    (weight ``overlap``) with an independent one, and its threshold is the
    empirical quantile that makes a fraction ``frequencies[j]`` of the
    samples positive. The shared component correlates attributes, so
    removing the positives of one attribute visibly shifts the others.

    ``direction_seed`` fixes the attribute directions independently of the
    feature noise, so datasets drawn with different ``seed`` values but the
    same ``direction_seed`` label points by the same rules (thresholds are
    still each sample's own quantiles). The direction stream is keyed so it
    never replays the feature stream even when the seeds match.
    """
    if n < 2 or n_features < 1 or n_attrs < 1:
        raise InputError("need n >= 2, n_features >= 1, n_attrs >= 1")
    freqs = np.asarray(frequencies, dtype=np.float64)
    if freqs.shape != (n_attrs,) or np.any(freqs <= 0) or np.any(freqs >= 1):
        raise InputError("frequencies must hold n_attrs values strictly inside (0, 1)")
    if not 0 <= overlap < 1:
        raise InputError("overlap must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    features = rng.standard_normal((n, n_features))
    dir_rng = rng if direction_seed is None else np.random.default_rng([direction_seed, 1])
    shared = dir_rng.standard_normal(n_features)
    shared /= np.linalg.norm(shared)
    labels = np.zeros((n, n_attrs), dtype=np.uint8)
    for j in range(n_attrs):
        own = dir_rng.standard_normal(n_features)
        own /= np.linalg.norm(own)
        direction = overlap * shared + (1.0 - overlap) * own
        direction /= np.linalg.norm(direction)
        scores = features @ direction
        threshold = np.quantile(scores, 1.0 - freqs[j])
        labels[:, j] = scores > threshold
    return Dataset(features=features, labels=labels, ids=make_ids(n, id_prefix))


def _rank_c_matrix(rng: np.random.Generator, c: int, m: int) -> np.ndarray:
    for _ in range(8):
        w = rng.standard_normal((c, m))
        sv = np.linalg.svd(w, compute_uv=False)
        if sv[-1] > 1e-8 * sv[0]:
            return w
    raise NumericError("could not draw a full-rank weight matrix")


def make_separable_subspace(
    c: int,
    m: int,
    eps_margin: float,
    n_per_class: int,
    seed: int,
    id_prefix: str = "",
) -> tuple[Dataset, ModelParams]:
    """Softmax dataset where every sample has the same classification margin.

    Returns a rank-c weight matrix theta and samples placed on the affine
    subspaces where the logits hit the exact target pattern: the true
    class gets probability 1 - (c-1) eps and every other class eps. Data
    within a class therefore varies only along the (m - c)-dimensional
    null space of theta.
    """
    if c < 2 or m <= c or n_per_class < 1:
        raise InputError("need c >= 2, m > c, n_per_class >= 1")
    if eps_margin <= 0 or 1.0 - (c - 1) * eps_margin <= 0:
        raise InputError("eps_margin must satisfy 0 < eps and 1 - (c-1) eps > 0")
    rng = np.random.default_rng(seed)
    theta = _rank_c_matrix(rng, c, m)
    _, _, vt = np.linalg.svd(theta, full_matrices=True)
    null_basis = vt[c:].T
    pinv = np.linalg.pinv(theta)

    rows = []
    labels = []
    for cls in range(c):
        pattern = np.full(c, eps_margin)
        pattern[cls] = 1.0 - (c - 1) * eps_margin
        x0 = pinv @ np.log(pattern)
        offsets = rng.standard_normal((n_per_class, m - c))
        rows.append(x0 + offsets @ null_basis.T)
        labels.extend([cls + 1] * n_per_class)
    features = np.vstack(rows)
    dataset = Dataset(
        features=features,
        labels=np.asarray(labels, dtype=np.int64),
        ids=make_ids(c * n_per_class, id_prefix),
    )
    params = ModelParams(
        values=theta.reshape(-1), shape=MultinomialLinear(n_classes=c, n_features=m)
    )
    probs = predict_proba(params, dataset.features)
    wrong = 1.0 - probs[np.arange(dataset.n), dataset.labels - 1]
    residual = float(np.abs(wrong / (c - 1) - eps_margin).max())
    if residual > _MARGIN_RESIDUAL_TOL:
        raise NumericError(f"margin construction residual {residual:.3e} exceeds tolerance")
    return dataset, params


def make_parallel_planes_binary(
    m: int,
    eps_margin: float,
    n_per_class: int,
    seed: int,
    id_prefix: str = "",
) -> tuple[Dataset, ModelParams]:
    """Single sigmoid head with |p - y| = eps on every sample.

    Positive and negative samples sit on two parallel hyperplanes where
    the logit equals +/- log((1 - eps) / eps), varying freely along the
    (m - 1)-dimensional orthogonal complement of the weight vector.
    """
    if m < 2 or n_per_class < 1:
        raise InputError("need m >= 2 and n_per_class >= 1")
    if not 0 < eps_margin < 0.5:
        raise InputError("eps_margin must lie in (0, 0.5)")
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(m)
    w /= np.linalg.norm(w)
    logit = math.log((1.0 - eps_margin) / eps_margin)
    _, _, vt = np.linalg.svd(w[None, :], full_matrices=True)
    null_basis = vt[1:].T

    rows = []
    labels = []
    for y, sign in ((1, 1.0), (0, -1.0)):
        base = sign * logit * w
        offsets = rng.standard_normal((n_per_class, m - 1))
        rows.append(base + offsets @ null_basis.T)
        labels.extend([y] * n_per_class)
    features = np.vstack(rows)
    dataset = Dataset(
        features=features,
        labels=np.asarray(labels, dtype=np.uint8).reshape(-1, 1),
        ids=make_ids(2 * n_per_class, id_prefix),
    )
    params = ModelParams(values=w.copy(), shape=MultiAttrLinear(n_attrs=1, n_features=m))
    probs = predict_proba(params, dataset.features)[:, 0]
    residual = float(np.abs(np.abs(probs - dataset.labels[:, 0]) - eps_margin).max())
    if residual > _MARGIN_RESIDUAL_TOL:
        raise NumericError(f"margin construction residual {residual:.3e} exceeds tolerance")
    return dataset, params


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def _read_rows(path: str) -> tuple[list[list[str]], int]:
    """Rows plus the 1-based line number of the first data row."""
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh)]
    rows = [row for row in rows if row]
    if not rows:
        raise InputError(f"{path}: no data rows")
    start = 1
    try:
        [float(cell) for cell in rows[0]]
    except ValueError:
        rows = rows[1:]
        start = 2
        if not rows:
            raise InputError(f"{path}: header but no data rows")
    return rows, start


def _parse_float_table(path: str) -> np.ndarray:
    rows, start = _read_rows(path)
    width = len(rows[0])
    out = np.empty((len(rows), width), dtype=np.float64)
    for i, row in enumerate(rows):
        if len(row) != width:
            raise InputError(f"{path}: row {start + i} has {len(row)} cells, expected {width}")
        for j, cell in enumerate(row):
            try:
                out[i, j] = float(cell)
            except ValueError:
                raise InputError(
                    f"{path}: row {start + i} column {j + 1}: not a number: {cell!r}"
                ) from None
    return out


def load_csv(features_path: str, labels_path: str, kind: str, id_prefix: str = "") -> Dataset:
    """Load a dataset from a features CSV and a labels CSV.

    ``kind`` is ``"binary"`` (one 0/1 column per attribute) or
    ``"multinomial"`` (a single integer class column with values 1..c).
    An optional header line is skipped in both files. Row ids are the
    zero-padded data-row positions.
    """
    if kind not in ("binary", "multinomial"):
        raise InputError(f"unknown dataset kind: {kind!r}")
    features = _parse_float_table(features_path)
    raw_labels = _parse_float_table(labels_path)
    if raw_labels.shape[0] != features.shape[0]:
        raise InputError(
            f"{labels_path}: {raw_labels.shape[0]} label rows for "
            f"{features.shape[0]} feature rows"
        )
    if kind == "binary":
        labels: np.ndarray = raw_labels
    else:
        if raw_labels.shape[1] != 1:
            raise InputError(f"{labels_path}: multinomial labels must be a single column")
        labels = raw_labels[:, 0]
    return Dataset(features=features, labels=labels, ids=make_ids(features.shape[0], id_prefix))


def save_csv(dataset: Dataset, features_path: str, labels_path: str) -> None:
    """Write a dataset back out; floats use shortest round-trip formatting."""
    with open(features_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in dataset.features:
            writer.writerow([repr(float(v)) for v in row])
    with open(labels_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if dataset.kind == "binary":
            for row in dataset.labels:
                writer.writerow([str(int(v)) for v in row])
        else:
            for v in dataset.labels:
                writer.writerow([str(int(v))])


# ---------------------------------------------------------------------------
# Removal splits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RemovalSpec:
    """What to erase: a class or an attribute, a fraction, and a sampling seed.

    ``index`` is 1-based for both kinds: class labels are 1..c and
    attribute heads are numbered 1..n_attrs.
    """

    kind: str
    index: int
    fraction: float
    seed: int

    def __post_init__(self) -> None:
        if self.kind not in ("class", "attribute"):
            raise InputError(f"removal kind must be 'class' or 'attribute', got {self.kind!r}")
        if self.index < 1:
            raise InputError("removal index is 1-based and must be >= 1")
        if not 0 < self.fraction <= 1:
            raise InputError("removal fraction must lie in (0, 1]")


@dataclass(frozen=True)
class SplitSet:
    """Id sets for the four evaluation splits.

    ``removed`` are the erased training samples, ``lko_train`` the
    retained ones; ``removed_test`` holds every test sample matching the
    removal target and ``lko_test`` the rest. The four sets are pairwise
    disjoint, which requires train and test id spaces not to collide.
    """

    removed: tuple[str, ...]
    lko_train: tuple[str, ...]
    removed_test: tuple[str, ...]
    lko_test: tuple[str, ...]

    def __post_init__(self) -> None:
        groups = [self.removed, self.lko_train, self.removed_test, self.lko_test]
        total = sum(len(g) for g in groups)
        if len(set().union(*groups)) != total:
            raise InputError("split id sets must be pairwise disjoint")
        if not self.removed:
            raise InputError("removed set must be nonempty")


def _matching_rows(dataset: Dataset, spec: RemovalSpec) -> np.ndarray:
    if spec.kind == "class":
        if dataset.kind != "multinomial":
            raise InputError("class removal requires a multinomial dataset")
        return np.flatnonzero(dataset.labels == spec.index)
    if dataset.kind != "binary":
        raise InputError("attribute removal requires a binary attribute dataset")
    if spec.index > dataset.n_attrs:
        raise InputError(f"attribute index {spec.index} exceeds n_attrs {dataset.n_attrs}")
    return np.flatnonzero(dataset.labels[:, spec.index - 1] == 1)


def build_splits(train: Dataset, test: Dataset, spec: RemovalSpec) -> SplitSet:
    """Draw the removed set and derive the four disjoint splits.

    The removed set is a uniform sample without replacement of
    ``ceil(fraction * n_matching)`` target-matching training samples,
    drawn with ``numpy.random.default_rng(spec.seed)``. All matching test
    samples form ``removed_test``.
    """
    matching = _matching_rows(train, spec)
    if matching.size == 0:
        raise InputError("no training samples match the removal target")
    k = math.ceil(spec.fraction * matching.size)
    rng = np.random.default_rng(spec.seed)
    chosen = matching[rng.permutation(matching.size)[:k]]
    chosen_set = {train.ids[i] for i in chosen}

    test_matching = _matching_rows(test, spec)
    removed_test = {test.ids[i] for i in test_matching}

    return SplitSet(
        removed=tuple(s for s in train.ids if s in chosen_set),
        lko_train=tuple(s for s in train.ids if s not in chosen_set),
        removed_test=tuple(s for s in test.ids if s in removed_test),
        lko_test=tuple(s for s in test.ids if s not in removed_test),
    )
