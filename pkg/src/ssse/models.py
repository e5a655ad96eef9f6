"""Model families, datasets, and the loss/gradient/Hessian surface.

Three bias-free families are supported:

* ``MultiAttrLinear``: one independent sigmoid head per binary attribute.
* ``MultinomialLinear``: a single softmax layer over ``c`` classes.
* ``MLP``: one tanh hidden layer followed by a softmax output layer.

Parameters are always carried as a flat float64 vector whose layout is
row-major per weight matrix (output row by output row, layer by layer for
the MLP). Every per-sample loss includes the full L2 term, so the mean
training loss is ``mean_i nll_i + (l2_coeff / 2) * ||theta||^2`` and each
per-sample gradient carries ``l2_coeff * theta``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

from .errors import InputError, NumericError

# Probabilities this close to 0 or 1 are clamped before logs are taken.
PROB_FLOOR = 1e-12

# Dense Hessians above this parameter count are refused.
DENSE_HESSIAN_CAP = 4096


# ---------------------------------------------------------------------------
# Shapes and parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MultiAttrLinear:
    """Independent binary heads: weight matrix (n_attrs, n_features)."""

    n_attrs: int
    n_features: int

    @property
    def n_params(self) -> int:
        return self.n_attrs * self.n_features

    def validate(self) -> None:
        if self.n_attrs < 1 or self.n_features < 1:
            raise InputError("MultiAttrLinear needs n_attrs >= 1 and n_features >= 1")


@dataclass(frozen=True)
class MultinomialLinear:
    """Softmax layer: weight matrix (n_classes, n_features)."""

    n_classes: int
    n_features: int

    @property
    def n_params(self) -> int:
        return self.n_classes * self.n_features

    def validate(self) -> None:
        if self.n_classes < 2 or self.n_features < 1:
            raise InputError("MultinomialLinear needs n_classes >= 2 and n_features >= 1")


@dataclass(frozen=True)
class MLP:
    """One hidden tanh layer: (n_hidden, n_features) then (n_classes, n_hidden)."""

    n_features: int
    n_hidden: int
    n_classes: int

    @property
    def n_params(self) -> int:
        return self.n_hidden * self.n_features + self.n_classes * self.n_hidden

    def validate(self) -> None:
        if self.n_features < 1 or self.n_hidden < 1 or self.n_classes < 2:
            raise InputError("MLP needs n_features, n_hidden >= 1 and n_classes >= 2")


Shape = Union[MultiAttrLinear, MultinomialLinear, MLP]

_SHAPE_KIND_CODES = {MultiAttrLinear: 1, MultinomialLinear: 2, MLP: 3}


def shape_kind_code(shape: Shape) -> int:
    """Stable integer tag for serialization (1, 2, 3 in the order above)."""
    try:
        return _SHAPE_KIND_CODES[type(shape)]
    except KeyError:
        raise InputError(f"unknown shape type: {type(shape).__name__}") from None


def shape_from_kind_code(code: int, dims: tuple[int, int, int]) -> Shape:
    if code == 1:
        return MultiAttrLinear(n_attrs=dims[0], n_features=dims[1])
    if code == 2:
        return MultinomialLinear(n_classes=dims[0], n_features=dims[1])
    if code == 3:
        return MLP(n_features=dims[0], n_hidden=dims[1], n_classes=dims[2])
    raise InputError(f"unknown shape kind code {code}")


def shape_dims(shape: Shape) -> tuple[int, int, int]:
    """Three u64-serializable dims; unused slots are zero."""
    if isinstance(shape, MultiAttrLinear):
        return (shape.n_attrs, shape.n_features, 0)
    if isinstance(shape, MultinomialLinear):
        return (shape.n_classes, shape.n_features, 0)
    if isinstance(shape, MLP):
        return (shape.n_features, shape.n_hidden, shape.n_classes)
    raise InputError(f"unknown shape type: {type(shape).__name__}")


@dataclass(frozen=True)
class ModelParams:
    """Immutable flat parameter vector plus its shape and origin seed."""

    values: np.ndarray
    shape: Shape
    seed: int = 0

    def __post_init__(self) -> None:
        self.shape.validate()
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise InputError("parameter values must be a flat vector")
        if values.shape[0] != self.shape.n_params:
            raise InputError(
                f"parameter length {values.shape[0]} does not match "
                f"shape n_params {self.shape.n_params}"
            )
        if not np.all(np.isfinite(values)):
            raise InputError("parameter values must be finite")
        if values is self.values:
            values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def with_values(self, values: np.ndarray) -> "ModelParams":
        return ModelParams(values=values, shape=self.shape, seed=self.seed)


@dataclass(frozen=True)
class LossConfig:
    """L2 penalty strength for the regularized mean loss."""

    l2_coeff: float = 0.0

    def __post_init__(self) -> None:
        if not np.isfinite(self.l2_coeff) or self.l2_coeff < 0:
            raise InputError("l2_coeff must be finite and >= 0")


def params_digest(params: ModelParams) -> bytes:
    """SHA-256 over the shape descriptor and raw parameter bytes.

    Used to tie an inverse-Fisher file to the exact parameter vector it
    was built at.
    """
    h = hashlib.sha256()
    h.update(bytes([shape_kind_code(params.shape)]))
    for dim in shape_dims(params.shape):
        h.update(int(dim).to_bytes(8, "little"))
    h.update(params.values.tobytes())
    return h.digest()


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    """Feature matrix, labels, and unique string sample ids.

    Labels are either a binary attribute matrix (n, n_attrs) with 0/1
    entries, or a class vector (n,) with integer entries in 1..c.
    Arrays are copied and frozen at construction.
    """

    features: np.ndarray
    labels: np.ndarray
    ids: tuple[str, ...]

    def __post_init__(self) -> None:
        features = np.ascontiguousarray(self.features, dtype=np.float64)
        if features.ndim != 2:
            raise InputError("features must be a 2-d array")
        if not np.all(np.isfinite(features)):
            raise InputError("features must be finite")
        n = features.shape[0]

        labels = np.asarray(self.labels)
        if labels.ndim == 2:
            if labels.shape[0] != n:
                raise InputError("labels row count does not match features")
            arr = np.ascontiguousarray(labels)
            if not np.isin(arr, (0, 1)).all():
                raise InputError("binary attribute labels must be 0 or 1")
            labels = arr.astype(np.uint8)
        elif labels.ndim == 1:
            if labels.shape[0] != n:
                raise InputError("labels length does not match features")
            arr = np.ascontiguousarray(labels, dtype=np.int64)
            if not np.array_equal(arr, np.asarray(labels, dtype=np.float64)):
                raise InputError("class labels must be integers")
            if n and arr.min() < 1:
                raise InputError("class labels must be >= 1")
            labels = arr
        else:
            raise InputError("labels must be a vector or a 2-d attribute matrix")

        ids = tuple(str(i) for i in self.ids)
        if len(ids) != n:
            raise InputError("id count does not match features")
        if len(set(ids)) != n:
            raise InputError("sample ids must be unique")

        features = features.copy() if features is self.features else features
        features.setflags(write=False)
        labels = labels.copy() if labels is self.labels else labels
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "ids", ids)

    # -- basic views --------------------------------------------------------

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def kind(self) -> str:
        return "binary" if self.labels.ndim == 2 else "multinomial"

    @property
    def n_attrs(self) -> int:
        if self.kind != "binary":
            raise InputError("n_attrs is only defined for binary attribute datasets")
        return self.labels.shape[1]

    # -- subsetting ---------------------------------------------------------

    def index_of(self, ids: Iterable[str]) -> np.ndarray:
        lookup = {s: i for i, s in enumerate(self.ids)}
        rows = []
        for s in ids:
            if s not in lookup:
                raise InputError(f"unknown sample id: {s}")
            rows.append(lookup[s])
        return np.asarray(rows, dtype=np.int64)

    def subset(self, ids: Iterable[str]) -> "Dataset":
        """Rows with the given ids, kept in this dataset's own row order."""
        keep = set(ids)
        missing = keep.difference(self.ids)
        if missing:
            raise InputError(f"unknown sample ids: {sorted(missing)[:3]}")
        rows = [i for i, s in enumerate(self.ids) if s in keep]
        idx = np.asarray(rows, dtype=np.int64)
        return Dataset(
            features=self.features[idx],
            labels=self.labels[idx],
            ids=tuple(self.ids[i] for i in rows),
        )

    def without(self, ids: Iterable[str]) -> "Dataset":
        drop = set(ids)
        missing = drop.difference(self.ids)
        if missing:
            raise InputError(f"unknown sample ids: {sorted(missing)[:3]}")
        rows = [i for i, s in enumerate(self.ids) if s not in drop]
        idx = np.asarray(rows, dtype=np.int64)
        return Dataset(
            features=self.features[idx],
            labels=self.labels[idx],
            ids=tuple(self.ids[i] for i in rows),
        )

    def sorted_by_id(self) -> "Dataset":
        order = np.argsort(np.asarray(self.ids, dtype=object))
        return Dataset(
            features=self.features[order],
            labels=self.labels[order],
            ids=tuple(self.ids[i] for i in order),
        )


def onehot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    """Class vector with entries in 1..c to a float (n, c) indicator matrix."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 1 or labels.max() > n_classes):
        raise InputError("class label out of range for the model shape")
    out = np.zeros((labels.shape[0], n_classes), dtype=np.float64)
    out[np.arange(labels.shape[0]), labels - 1] = 1.0
    return out


def _check_task_match(params: ModelParams, dataset: Dataset) -> None:
    shape = params.shape
    if dataset.n_features != _shape_n_features(shape):
        raise InputError(
            f"dataset has {dataset.n_features} features, shape expects "
            f"{_shape_n_features(shape)}"
        )
    if isinstance(shape, MultiAttrLinear):
        if dataset.kind != "binary":
            raise InputError("MultiAttrLinear requires binary attribute labels")
        if dataset.n_attrs != shape.n_attrs:
            raise InputError(
                f"dataset has {dataset.n_attrs} attributes, shape expects {shape.n_attrs}"
            )
    else:
        if dataset.kind != "multinomial":
            raise InputError("softmax shapes require a class-label vector")
        n_classes = shape.n_classes
        if dataset.n and dataset.labels.max() > n_classes:
            raise InputError("class label out of range for the model shape")


def _shape_n_features(shape: Shape) -> int:
    return shape.n_features


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------

def _weights(params: ModelParams) -> tuple[np.ndarray, ...]:
    shape = params.shape
    v = params.values
    if isinstance(shape, MultiAttrLinear):
        return (v.reshape(shape.n_attrs, shape.n_features),)
    if isinstance(shape, MultinomialLinear):
        return (v.reshape(shape.n_classes, shape.n_features),)
    cut = shape.n_hidden * shape.n_features
    w1 = v[:cut].reshape(shape.n_hidden, shape.n_features)
    w2 = v[cut:].reshape(shape.n_classes, shape.n_hidden)
    return (w1, w2)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(z: np.ndarray) -> np.ndarray:
    # Shift by the row max so exp stays bounded, then clamp and renormalize
    # so every entry is strictly inside (0, 1) and rows still sum to one.
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    p = np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
    return p / p.sum(axis=1, keepdims=True)


def _mlp_forward(params: ModelParams, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w1, w2 = _weights(params)
    hidden = np.tanh(features @ w1.T)
    return hidden, _softmax(hidden @ w2.T)


def predict_proba(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Per-sample probabilities.

    Returns (n, n_attrs) independent sigmoid probabilities for the
    multi-attribute family and (n, n_classes) softmax rows otherwise.
    """
    features = np.ascontiguousarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != params.shape.n_features:
        raise InputError("feature matrix does not match the model shape")
    shape = params.shape
    if isinstance(shape, MultiAttrLinear):
        (w,) = _weights(params)
        p = _sigmoid(features @ w.T)
        return np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
    if isinstance(shape, MultinomialLinear):
        (w,) = _weights(params)
        return _softmax(features @ w.T)
    return _mlp_forward(params, features)[1]


def predict_labels(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Hard predictions: argmax class in 1..c, or 0/1 per attribute.

    Argmax ties resolve to the lowest class index.
    """
    p = predict_proba(params, features)
    if isinstance(params.shape, MultiAttrLinear):
        return (p > 0.5).astype(np.uint8)
    return np.argmax(p, axis=1).astype(np.int64) + 1


# ---------------------------------------------------------------------------
# Loss and gradients
# ---------------------------------------------------------------------------

def loss(params: ModelParams, dataset: Dataset, cfg: LossConfig) -> float:
    """Mean regularized loss over the dataset."""
    _check_task_match(params, dataset)
    if dataset.n == 0:
        raise InputError("loss is undefined on an empty dataset")
    p = predict_proba(params, dataset.features)
    if dataset.kind == "binary":
        y = dataset.labels.astype(np.float64)
        nll = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).sum(axis=1)
    else:
        rows = np.arange(dataset.n)
        nll = -np.log(p[rows, dataset.labels - 1])
    value = float(nll.mean() + 0.5 * cfg.l2_coeff * float(params.values @ params.values))
    if not np.isfinite(value):
        raise NumericError("loss is not finite")
    return value


def grad_matrix(
    params: ModelParams,
    features: np.ndarray,
    labels: np.ndarray,
    cfg: LossConfig,
) -> np.ndarray:
    """Per-sample gradients of the regularized per-sample loss, one row each.

    Row i is the gradient of ``nll_i + (l2_coeff / 2) * ||theta||^2``, so
    the mean over rows equals the full-batch gradient of :func:`loss`.
    """
    shape = params.shape
    features = np.ascontiguousarray(features, dtype=np.float64)
    n = features.shape[0]
    if isinstance(shape, MultiAttrLinear):
        p = predict_proba(params, features)
        resid = p - np.asarray(labels, dtype=np.float64)
        g = np.einsum("na,nm->nam", resid, features).reshape(n, shape.n_params)
    elif isinstance(shape, MultinomialLinear):
        p = predict_proba(params, features)
        resid = p - onehot(np.asarray(labels), shape.n_classes)
        g = np.einsum("nc,nm->ncm", resid, features).reshape(n, shape.n_params)
    else:
        hidden, p = _mlp_forward(params, features)
        _, w2 = _weights(params)
        d2 = p - onehot(np.asarray(labels), shape.n_classes)
        g2 = np.einsum("nc,nh->nch", d2, hidden)
        d1 = (d2 @ w2) * (1.0 - hidden * hidden)
        g1 = np.einsum("nh,nm->nhm", d1, features)
        cut = shape.n_hidden * shape.n_features
        g = np.empty((n, shape.n_params), dtype=np.float64)
        g[:, :cut] = g1.reshape(n, cut)
        g[:, cut:] = g2.reshape(n, shape.n_params - cut)
    if cfg.l2_coeff:
        g += cfg.l2_coeff * params.values
    return g


def grad(params: ModelParams, x: np.ndarray, y, cfg: LossConfig) -> np.ndarray:
    """Gradient of one sample's regularized loss."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if isinstance(params.shape, MultiAttrLinear):
        labels = np.atleast_2d(np.asarray(y))
    else:
        labels = np.asarray([y], dtype=np.int64)
    return grad_matrix(params, x, labels, cfg)[0]


def grad_mean(params: ModelParams, dataset: Dataset, cfg: LossConfig) -> np.ndarray:
    """Full gradient of the mean regularized loss."""
    _check_task_match(params, dataset)
    if dataset.n == 0:
        raise InputError("gradient is undefined on an empty dataset")
    return grad_matrix(params, dataset.features, dataset.labels, cfg).mean(axis=0)


def grad_sum(params: ModelParams, dataset: Dataset, ids: Iterable[str], cfg: LossConfig) -> np.ndarray:
    """Sum of per-sample gradients over the given sample ids."""
    sub = dataset.subset(ids)
    if sub.n == 0:
        raise InputError("gradient sum over an empty id set")
    return grad_matrix(params, sub.features, sub.labels, cfg).sum(axis=0)


# ---------------------------------------------------------------------------
# Dense Hessian (linear families only)
# ---------------------------------------------------------------------------

def hessian_dense(params: ModelParams, dataset: Dataset, cfg: LossConfig) -> np.ndarray:
    """Dense Hessian of the mean regularized loss.

    Only the linear families admit the closed form used here; the
    multinomial data term is ``mean_i kron(diag(p_i) - p_i p_i^T, x_i x_i^T)``
    and the multi-attribute data term is block-diagonal with blocks
    ``mean_i p_ij (1 - p_ij) x_i x_i^T``. Refused for the MLP and for
    parameter counts above ``DENSE_HESSIAN_CAP``.
    """
    shape = params.shape
    if isinstance(shape, MLP):
        raise InputError("dense Hessian is not available for the MLP family")
    _check_task_match(params, dataset)
    if dataset.n == 0:
        raise InputError("Hessian is undefined on an empty dataset")
    d = shape.n_params
    if d > DENSE_HESSIAN_CAP:
        raise InputError(f"dense Hessian refused for d={d} > {DENSE_HESSIAN_CAP}")
    features = dataset.features
    p = predict_proba(params, features)
    if isinstance(shape, MultinomialLinear):
        c = shape.n_classes
        factors = np.einsum("ni,ij->nij", p, np.eye(c)) - np.einsum("ni,nj->nij", p, p)
        h = np.einsum("nij,na,nb->iajb", factors, features, features, optimize=True)
        h = h.reshape(d, d) / dataset.n
    else:
        m = shape.n_features
        h = np.zeros((d, d), dtype=np.float64)
        w = p * (1.0 - p)
        for j in range(shape.n_attrs):
            block = np.einsum("n,na,nb->ab", w[:, j], features, features) / dataset.n
            h[j * m : (j + 1) * m, j * m : (j + 1) * m] = block
    h += cfg.l2_coeff * np.eye(d)
    if not np.all(np.isfinite(h)):
        raise NumericError("Hessian has non-finite entries")
    return h


# ---------------------------------------------------------------------------
# Hessian / empirical-Fisher proportionality check
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RatioCheck:
    """Outcome of the Hessian vs scaled-Fisher comparison.

    ``predicted_multiple`` is the scalar rho such that the data-term
    Hessian should match ``rho * gradient-outer-product`` on the dominant
    entries; deviations are relative to the predicted entries.
    """

    mean_rel_dev: float
    max_rel_dev: float
    predicted_multiple: float
    margin_mean: float
    margin_spread: float
    warning: str | None = None


_MARGIN_UNIFORMITY_TOL = 1e-6


def fisher_hessian_ratio_check(params: ModelParams, dataset: Dataset) -> RatioCheck:
    """Compare per-sample Hessian factors against the scaled gradient outer product.

    Requires a linear shape and a dataset whose samples share a common
    classification margin: for softmax models every wrong class gets
    probability eps and the true class 1 - (c-1) eps, for a single binary
    head |p - y| = eps. Under that margin the data-term Hessian equals a
    scalar multiple of the per-sample gradient outer product on the
    entries where the outer product carries its mass; the multiple is
    1 / (eps (c-1)) for softmax and (1 - eps) / eps for the binary head.

    The comparison is entrywise on the per-sample class factors (the
    feature outer product cancels) restricted to entries of magnitude at
    least max / c, which drops the rank-deficient residual the rank-one
    outer product cannot represent. Non-uniform margins produce a warning
    string, not an error.
    """
    shape = params.shape
    if isinstance(shape, MLP):
        raise InputError("ratio check requires a linear shape")
    _check_task_match(params, dataset)
    if dataset.n == 0:
        raise InputError("ratio check needs at least one sample")

    p = predict_proba(params, dataset.features)
    if isinstance(shape, MultiAttrLinear):
        if shape.n_attrs != 1:
            raise InputError("binary ratio check requires a single attribute head")
        y = dataset.labels[:, 0].astype(np.float64)
        q = np.abs(p[:, 0] - y)
        margin = float(q.mean())
        rho = (1.0 - margin) / margin
        hess_fac = p[:, 0] * (1.0 - p[:, 0])
        outer_fac = q * q
        devs = np.abs(hess_fac - rho * outer_fac) / np.abs(rho * outer_fac)
        mean_dev = float(devs.mean())
        max_dev = float(devs.max())
        spread = float(np.abs(q - margin).max() / margin)
    else:
        c = shape.n_classes
        y_idx = dataset.labels - 1
        rows = np.arange(dataset.n)
        eps_i = (1.0 - p[rows, y_idx]) / (c - 1)
        margin = float(eps_i.mean())
        rho = 1.0 / (margin * (c - 1))
        devs_all = []
        for i in range(dataset.n):
            pi = p[i]
            a = np.diag(pi) - np.outer(pi, pi)
            r = pi.copy()
            r[y_idx[i]] -= 1.0
            g = np.outer(r, r)
            keep = np.abs(g) >= np.abs(g).max() / c
            pred = rho * g[keep]
            devs_all.append(np.abs(a[keep] - pred) / np.abs(pred))
        devs = np.concatenate(devs_all)
        mean_dev = float(devs.mean())
        max_dev = float(devs.max())
        spread = float(np.abs(eps_i - margin).max() / margin)

    warning = None
    if spread > _MARGIN_UNIFORMITY_TOL:
        warning = f"non-uniform margins: relative spread {spread:.3e}"
    return RatioCheck(
        mean_rel_dev=mean_dev,
        max_rel_dev=max_dev,
        predicted_multiple=rho,
        margin_mean=margin,
        margin_spread=spread,
        warning=warning,
    )
