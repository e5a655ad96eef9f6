"""Shared oracles and dataset builders for the test suite.

The finite-difference routines here are the independent ground truth for
every analytic gradient and Hessian in the package: they know nothing
about the model families beyond "loss is a function of a flat vector".
"""

import numpy as np

from ssse import (
    Dataset,
    LossConfig,
    MLP,
    ModelParams,
    MultiAttrLinear,
    MultinomialLinear,
    loss,
    make_ids,
)


def fd_grad(f, x0, h=1e-6):
    """Central-difference gradient of a scalar function of a flat vector."""
    x0 = np.asarray(x0, dtype=np.float64)
    g = np.zeros_like(x0)
    for i in range(x0.size):
        step = np.zeros_like(x0)
        step[i] = h
        g[i] = (f(x0 + step) - f(x0 - step)) / (2.0 * h)
    return g


def fd_hessian(f, x0, h=1e-5):
    """Central-difference Hessian; only sensible for small vectors."""
    x0 = np.asarray(x0, dtype=np.float64)
    d = x0.size
    H = np.zeros((d, d))
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h
        for j in range(i, d):
            ej = np.zeros(d)
            ej[j] = h
            val = (
                f(x0 + ei + ej) - f(x0 + ei - ej) - f(x0 - ei + ej) + f(x0 - ei - ej)
            ) / (4.0 * h * h)
            H[i, j] = val
            H[j, i] = val
    return H


def loss_of_values(shape, dataset, cfg):
    """Loss as a plain function of the flat parameter vector."""

    def f(values):
        return loss(ModelParams(values=values, shape=shape, seed=0), dataset, cfg)

    return f


def random_params(shape, seed, scale=0.5):
    rng = np.random.default_rng(seed)
    values = scale * rng.standard_normal(shape.n_params)
    return ModelParams(values=values, shape=shape, seed=seed)


def multinomial_dataset(seed, n, m, c, prefix="s"):
    """Random features, labels covering all classes when n >= c."""
    rng = np.random.default_rng(seed)
    features = rng.standard_normal((n, m))
    labels = rng.integers(1, c + 1, size=n)
    if n >= c:
        labels[:c] = np.arange(1, c + 1)
    return Dataset(features=features, labels=labels.astype(np.int64), ids=make_ids(n, prefix))


def binary_dataset(seed, n, m, a, prefix="s"):
    """Random features with Bernoulli attribute labels, no all-constant column."""
    rng = np.random.default_rng(seed)
    features = rng.standard_normal((n, m))
    labels = (rng.random((n, a)) < 0.5).astype(np.uint8)
    if n >= 2:
        labels[0] = 0
        labels[1] = 1
    return Dataset(features=features, labels=labels, ids=make_ids(n, prefix))


def random_shape(rng):
    """One of the three model families with small random dimensions."""
    pick = rng.integers(0, 3)
    m = int(rng.integers(2, 5))
    if pick == 0:
        return MultiAttrLinear(n_attrs=int(rng.integers(1, 4)), n_features=m)
    if pick == 1:
        return MultinomialLinear(n_classes=int(rng.integers(2, 5)), n_features=m)
    return MLP(n_features=m, n_hidden=int(rng.integers(2, 4)), n_classes=int(rng.integers(2, 4)))


def dataset_for_shape(shape, seed, n):
    if isinstance(shape, MultiAttrLinear):
        return binary_dataset(seed, n, shape.n_features, shape.n_attrs)
    return multinomial_dataset(seed, n, shape.n_features, shape.n_classes)


def dense_fisher(params, dataset, cfg, dampening):
    """Dampened empirical Fisher built the direct way: lam*I + mean(g g^T)."""
    from ssse import grad_matrix

    g = grad_matrix(params, dataset.features, dataset.labels, cfg)
    d = params.shape.n_params
    return dampening * np.eye(d) + (g.T @ g) / dataset.n


def dense_fisher_inverse(params, dataset, cfg, dampening):
    return np.linalg.inv(dense_fisher(params, dataset, cfg, dampening))


__all__ = [
    "binary_dataset",
    "dataset_for_shape",
    "dense_fisher",
    "dense_fisher_inverse",
    "fd_grad",
    "fd_hessian",
    "loss_of_values",
    "multinomial_dataset",
    "random_params",
    "random_shape",
]
