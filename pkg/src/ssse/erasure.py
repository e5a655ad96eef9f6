"""Closed-form removal of training samples from a trained model.

The central update shifts the trained parameters along the inverse
empirical Fisher applied to the summed gradients of the samples being
erased:

    theta_new = theta + (epsilon / (n - k)) * F_inv @ sum_{i in S} grad_i

where n is the training-set size, k = |S|, and epsilon scales the step.
Two influence-function variants replace the scaled inverse Fisher with
an exact dense Hessian inverse (built on the full data or on the
retained data), and two cheaper baselines take a plain gradient-ascent
step or use only the diagonal of the Fisher estimate plus optional
Gaussian noise. All updates are pure: inputs are never mutated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InputError, NumericError, StaleFisherError
from .fisher import InverseFisher, apply_inverse
from .models import (
    Dataset,
    LossConfig,
    ModelParams,
    grad_sum,
    hessian_dense,
    params_digest,
)

_METHODS = ("ssse", "influence_full", "influence_lko", "gradient_ascent", "diag_scrub")
_GRAD_SOURCES = ("removed", "remaining")


@dataclass(frozen=True)
class ErasureRequest:
    """Which samples to erase and how.

    ``epsilon`` scales the Fisher-based updates; 0 is allowed and leaves
    the parameters untouched. ``grad_source`` selects whose gradients
    feed the update: the removed samples themselves (default) or the
    negated gradient sum of the retained samples, which agrees with the
    default at an exact optimum where all per-sample gradients cancel.
    """

    removed_ids: tuple[str, ...]
    epsilon: float = 1.0
    method: str = "ssse"
    lr: float | None = None
    noise_sigma: float = 0.0
    noise_seed: int = 0
    grad_source: str = "removed"

    def __post_init__(self) -> None:
        ids = tuple(str(s) for s in self.removed_ids)
        if not ids:
            raise InputError("removed_ids must be nonempty")
        if len(set(ids)) != len(ids):
            raise InputError("removed_ids must be unique")
        object.__setattr__(self, "removed_ids", ids)
        if not np.isfinite(self.epsilon) or self.epsilon < 0:
            raise InputError("epsilon must be finite and >= 0")
        if self.method not in _METHODS:
            raise InputError(f"unknown erasure method: {self.method!r}")
        if self.method == "gradient_ascent":
            if self.lr is None or not np.isfinite(self.lr) or self.lr < 0:
                raise InputError("gradient_ascent requires a finite lr >= 0")
        if not np.isfinite(self.noise_sigma) or self.noise_sigma < 0:
            raise InputError("noise_sigma must be finite and >= 0")
        if self.grad_source not in _GRAD_SOURCES:
            raise InputError(f"unknown grad_source: {self.grad_source!r}")


def _check_removal(dataset: Dataset, removed_ids: tuple[str, ...]) -> int:
    k = len(removed_ids)
    missing = set(removed_ids).difference(dataset.ids)
    if missing:
        raise InputError(f"removed ids not in the dataset: {sorted(missing)[:3]}")
    if k >= dataset.n:
        raise InputError("cannot erase every training sample")
    return k


def _erasure_direction(
    theta_star: ModelParams, dataset: Dataset, req: ErasureRequest, cfg: LossConfig
) -> np.ndarray:
    """Summed gradients driving the update, honoring grad_source."""
    if req.grad_source == "removed":
        return grad_sum(theta_star, dataset, req.removed_ids, cfg)
    remaining = dataset.without(req.removed_ids)
    g = grad_sum(theta_star, remaining, remaining.ids, cfg)
    return -g


def _finite_params(theta: ModelParams, values: np.ndarray, what: str) -> ModelParams:
    if not np.all(np.isfinite(values)):
        raise NumericError(f"{what} produced non-finite parameters")
    return theta.with_values(values)


def ssse_update(
    theta_star: ModelParams,
    finv: InverseFisher,
    dataset: Dataset,
    req: ErasureRequest,
    cfg: LossConfig,
) -> ModelParams:
    """Single-step erasure through the inverse Fisher estimate.

    Refuses an inverse Fisher whose stored digest does not match
    ``theta_star``: the estimate is only valid at the exact parameters it
    was built at.
    """
    if finv.built_at_digest != params_digest(theta_star):
        raise StaleFisherError(
            "inverse Fisher was built at different parameters than supplied"
        )
    if finv.n_params != theta_star.shape.n_params:
        raise InputError("inverse Fisher size does not match the parameter vector")
    k = _check_removal(dataset, req.removed_ids)
    scale = req.epsilon / (dataset.n - k)
    if scale == 0.0:
        return theta_star.with_values(theta_star.values)
    g = _erasure_direction(theta_star, dataset, req, cfg)
    values = theta_star.values + scale * apply_inverse(finv, g)
    return _finite_params(theta_star, values, "ssse update")


def influence_update(
    theta_star: ModelParams,
    dataset: Dataset,
    req: ErasureRequest,
    cfg: LossConfig,
    hessian_source: str = "full",
) -> ModelParams:
    """Influence-function step using an exact dense Hessian inverse.

    ``hessian_source`` picks where the Hessian is evaluated: "full" uses
    the whole training set, "lko" the retained samples only. The solve
    goes through a symmetric positive-definite factorization, so a
    strictly positive l2_coeff is required.
    """
    if hessian_source not in ("full", "lko"):
        raise InputError(f"unknown hessian_source: {hessian_source!r}")
    if cfg.l2_coeff <= 0:
        raise InputError("influence updates require l2_coeff > 0")
    k = _check_removal(dataset, req.removed_ids)
    base = dataset if hessian_source == "full" else dataset.without(req.removed_ids)
    h = hessian_dense(theta_star, base, cfg)
    g = grad_sum(theta_star, dataset, req.removed_ids, cfg)
    try:
        factor = scipy.linalg.cho_factor(h, check_finite=False)
        step = scipy.linalg.cho_solve(factor, g, check_finite=False)
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"Hessian solve failed: {exc}") from exc
    values = theta_star.values + step / (dataset.n - k)
    return _finite_params(theta_star, values, "influence update")


def gradient_ascent_step(
    theta_star: ModelParams,
    dataset: Dataset,
    removed_ids,
    lr: float,
    cfg: LossConfig,
) -> ModelParams:
    """One ascent step on the mean loss of the removed samples."""
    ids = tuple(str(s) for s in removed_ids)
    if not ids:
        raise InputError("removed ids must be nonempty")
    if not np.isfinite(lr) or lr < 0:
        raise InputError("lr must be finite and >= 0")
    k = _check_removal(dataset, ids)
    if lr == 0.0:
        return theta_star.with_values(theta_star.values)
    g = grad_sum(theta_star, dataset, ids, cfg)
    values = theta_star.values + lr * (g / k)
    return _finite_params(theta_star, values, "gradient ascent step")


def diag_scrub_update(
    theta_star: ModelParams,
    diag_finv: np.ndarray,
    dataset: Dataset,
    req: ErasureRequest,
    cfg: LossConfig,
) -> ModelParams:
    """Diagonal-Fisher erasure with optional Gaussian smoothing noise.

    The deterministic part mirrors :func:`ssse_update` with the inverse
    Fisher replaced by its diagonal estimate; noise adds one draw per
    coordinate with standard deviation noise_sigma * sqrt(diag_finv_j),
    seeded by ``noise_seed`` so reruns are reproducible.
    """
    diag_finv = np.asarray(diag_finv, dtype=np.float64)
    if diag_finv.shape != (theta_star.shape.n_params,):
        raise InputError("diagonal inverse Fisher length does not match parameters")
    if np.any(diag_finv <= 0) or not np.all(np.isfinite(diag_finv)):
        raise InputError("diagonal inverse Fisher entries must be finite and > 0")
    k = _check_removal(dataset, req.removed_ids)
    scale = req.epsilon / (dataset.n - k)
    if scale == 0.0 and req.noise_sigma == 0.0:
        return theta_star.with_values(theta_star.values)
    values = theta_star.values.copy()
    if scale != 0.0:
        g = _erasure_direction(theta_star, dataset, req, cfg)
        values = values + scale * (diag_finv * g)
    if req.noise_sigma > 0.0:
        rng = np.random.default_rng(req.noise_seed)
        values = values + req.noise_sigma * np.sqrt(diag_finv) * rng.standard_normal(values.shape)
    return _finite_params(theta_star, values, "diagonal scrub update")
