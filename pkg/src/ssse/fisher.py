"""Inverse empirical Fisher information via rank-one updates.

The empirical Fisher of a model at theta is the mean outer product of
per-sample loss gradients plus a dampening ridge:

    F = dampening * I + (1/count) * sum_j g_j g_j^T

Instead of forming F and inverting it, the inverse is maintained
directly: starting from (1/dampening) * I, each gradient applies one
Sherman-Morrison update, so the cost is one matrix-vector product per
gradient per block. Blocks are contiguous parameter intervals that
follow the model's natural units (attribute rows, class rows, layers),
split further when a unit exceeds the configured maximum block size;
everything outside the block diagonal is treated as zero.

With a batch size b > 1, gradients are averaged over consecutive batches
of b samples (in id order, last batch possibly smaller) and each batch
mean counts as a single rank-one term, with ``count`` equal to the
number of batches. Block builds are independent of each other, so they
could run in parallel; this implementation processes them in sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _container as cont
from .errors import ContainerError, InputError, NumericError
from .models import (
    Dataset,
    LossConfig,
    MLP,
    ModelParams,
    MultiAttrLinear,
    MultinomialLinear,
    Shape,
    grad_matrix,
    params_digest,
)

DEFAULT_MAX_BLOCK = 4096

_SYMMETRY_TOL = 1e-8


# ---------------------------------------------------------------------------
# Block layout
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlockSpec:
    """Disjoint, ascending, contiguous index intervals covering 0..d."""

    ranges: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        if not self.ranges:
            raise InputError("block spec needs at least one interval")
        cursor = 0
        for lo, hi in self.ranges:
            if lo != cursor or hi <= lo:
                raise InputError("block intervals must be contiguous, ascending, nonempty")
            cursor = hi
        object.__setattr__(self, "ranges", tuple((int(a), int(b)) for a, b in self.ranges))

    @property
    def n_params(self) -> int:
        return self.ranges[-1][1]

    @staticmethod
    def single(n_params: int) -> "BlockSpec":
        return BlockSpec(ranges=((0, n_params),))

    @staticmethod
    def from_shape(shape: Shape, max_block: int = DEFAULT_MAX_BLOCK) -> "BlockSpec":
        """Natural per-unit intervals, each split to at most max_block entries."""
        if max_block < 1:
            raise InputError("max_block must be >= 1")
        if isinstance(shape, MultiAttrLinear):
            units = [shape.n_features] * shape.n_attrs
        elif isinstance(shape, MultinomialLinear):
            units = [shape.n_features] * shape.n_classes
        elif isinstance(shape, MLP):
            units = [shape.n_hidden * shape.n_features, shape.n_classes * shape.n_hidden]
        else:
            raise InputError(f"unknown shape type: {type(shape).__name__}")
        ranges = []
        cursor = 0
        for size in units:
            done = 0
            while done < size:
                step = min(max_block, size - done)
                ranges.append((cursor + done, cursor + done + step))
                done += step
            cursor += size
        return BlockSpec(ranges=tuple(ranges))


# ---------------------------------------------------------------------------
# Inverse Fisher container
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InverseFisher:
    """Block-diagonal inverse empirical Fisher tied to a parameter digest."""

    blocks: tuple[np.ndarray, ...]
    spec: BlockSpec
    dampening: float
    n_samples: int
    batch_size: int
    built_at_digest: bytes

    def __post_init__(self) -> None:
        if len(self.blocks) != len(self.spec.ranges):
            raise InputError("block count does not match the block spec")
        if self.dampening <= 0 or not np.isfinite(self.dampening):
            raise InputError("dampening must be finite and > 0")
        if self.n_samples < 1 or self.batch_size < 1:
            raise InputError("n_samples and batch_size must be >= 1")
        if len(self.built_at_digest) != 32:
            raise InputError("parameter digest must be 32 bytes")
        frozen = []
        for block, (lo, hi) in zip(self.blocks, self.spec.ranges):
            arr = np.ascontiguousarray(block, dtype=np.float64)
            if arr.shape != (hi - lo, hi - lo):
                raise InputError("block shape does not match its index interval")
            if not np.all(np.isfinite(arr)):
                raise NumericError("inverse Fisher block has non-finite entries")
            scale = max(float(np.abs(arr).max()), 1.0)
            if float(np.abs(arr - arr.T).max()) > _SYMMETRY_TOL * scale:
                raise NumericError("inverse Fisher block is not symmetric")
            try:
                np.linalg.cholesky(arr)
            except np.linalg.LinAlgError:
                raise NumericError("inverse Fisher block is not positive definite") from None
            arr = arr.copy() if arr is block else arr
            arr.setflags(write=False)
            frozen.append(arr)
        object.__setattr__(self, "blocks", tuple(frozen))

    @property
    def n_params(self) -> int:
        return self.spec.n_params

    @property
    def rank_one_count(self) -> int:
        """Denominator count used during the build: the number of batches."""
        return math.ceil(self.n_samples / self.batch_size)


# ---------------------------------------------------------------------------
# Core operations
# ---------------------------------------------------------------------------

def sherman_morrison_step(inv_block: np.ndarray, g: np.ndarray, count: int) -> np.ndarray:
    """Fold one rank-one term (1/count) g g^T into a maintained inverse.

    Given ``inv_block`` = A^{-1}, returns the exact inverse of
    ``A + (1/count) g g^T``:

        A^{-1} - (A^{-1} g g^T A^{-1}) / (count + g^T A^{-1} g)

    The result is re-symmetrized by averaging with its transpose so
    rounding cannot drift the blocks away from symmetry over long runs.
    """
    if count < 1:
        raise InputError("count must be >= 1")
    g = np.asarray(g, dtype=np.float64)
    u = inv_block @ g
    denom = float(count + g @ u)
    if not np.isfinite(denom) or denom <= 0:
        raise NumericError(f"Sherman-Morrison denominator is {denom}")
    out = inv_block - np.outer(u, u) / denom
    return (out + out.T) / 2.0


def _batch_gradients(
    params: ModelParams, dataset: Dataset, cfg: LossConfig, batch_size: int
):
    """Yield (batch_mean_gradient,) over consecutive id-ordered batches."""
    ordered = dataset.sorted_by_id()
    n = ordered.n
    chunk = batch_size * max(1, 512 // batch_size)
    for chunk_start in range(0, n, chunk):
        chunk_stop = min(chunk_start + chunk, n)
        g = grad_matrix(
            params,
            ordered.features[chunk_start:chunk_stop],
            ordered.labels[chunk_start:chunk_stop],
            cfg,
        )
        bad = np.flatnonzero(~np.isfinite(g).all(axis=1))
        if bad.size:
            sample_id = ordered.ids[chunk_start + int(bad[0])]
            raise NumericError(f"non-finite gradient for sample {sample_id}")
        for lo in range(0, chunk_stop - chunk_start, batch_size):
            hi = min(lo + batch_size, chunk_stop - chunk_start)
            yield g[lo:hi].mean(axis=0)


def build_inverse_fisher(
    params: ModelParams,
    dataset: Dataset,
    cfg: LossConfig,
    dampening: float,
    spec: BlockSpec | None = None,
    batch_size: int = 1,
) -> InverseFisher:
    """Build the block-diagonal inverse empirical Fisher at ``params``.

    For ``batch_size`` 1 and a single full block the result equals the
    dense inverse of ``dampening * I + (1/n) sum_i g_i g_i^T``; larger
    batches fold batch-mean gradients with the batch count as the
    denominator count. Samples are processed in lexicographic id order.
    """
    if dampening <= 0 or not np.isfinite(dampening):
        raise InputError("dampening must be finite and > 0")
    if batch_size < 1:
        raise InputError("batch_size must be >= 1")
    if dataset.n == 0:
        raise InputError("cannot build a Fisher estimate from an empty dataset")
    if spec is None:
        spec = BlockSpec.from_shape(params.shape)
    if spec.n_params != params.shape.n_params:
        raise InputError("block spec does not cover the parameter vector")

    count = math.ceil(dataset.n / batch_size)
    blocks = [np.eye(hi - lo) / dampening for lo, hi in spec.ranges]
    for g in _batch_gradients(params, dataset, cfg, batch_size):
        for i, (lo, hi) in enumerate(spec.ranges):
            blocks[i] = sherman_morrison_step(blocks[i], g[lo:hi], count)
    return InverseFisher(
        blocks=tuple(blocks),
        spec=spec,
        dampening=dampening,
        n_samples=dataset.n,
        batch_size=batch_size,
        built_at_digest=params_digest(params),
    )


def apply_inverse(finv: InverseFisher, v: np.ndarray) -> np.ndarray:
    """Blockwise matrix-vector product with the inverse Fisher estimate."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (finv.n_params,):
        raise InputError(f"vector length {v.shape} does not match d={finv.n_params}")
    out = np.empty_like(v)
    for block, (lo, hi) in zip(finv.blocks, finv.spec.ranges):
        out[lo:hi] = block @ v[lo:hi]
    return out


def diagonal_inverse_fisher(
    params: ModelParams, dataset: Dataset, cfg: LossConfig, dampening: float
) -> np.ndarray:
    """Elementwise reciprocal of ``dampening + mean_i g_i^2``."""
    if dampening <= 0 or not np.isfinite(dampening):
        raise InputError("dampening must be finite and > 0")
    if dataset.n == 0:
        raise InputError("cannot build a Fisher estimate from an empty dataset")
    ordered = dataset.sorted_by_id()
    acc = np.zeros(params.shape.n_params, dtype=np.float64)
    for start in range(0, ordered.n, 512):
        stop = min(start + 512, ordered.n)
        g = grad_matrix(params, ordered.features[start:stop], ordered.labels[start:stop], cfg)
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient while accumulating the diagonal")
        acc += np.square(g).sum(axis=0)
    return 1.0 / (dampening + acc / ordered.n)


# ---------------------------------------------------------------------------
# File format
# ---------------------------------------------------------------------------

def save_inverse_fisher(finv: InverseFisher, path: str) -> None:
    """Serialize to the inverse-Fisher container (layout in the README)."""
    w = cont.ByteWriter()
    w.magic(cont.FISHER_MAGIC)
    w.u8(cont.CONTAINER_VERSION)
    w.f64(finv.dampening)
    w.u64(finv.n_samples)
    w.u64(finv.batch_size)
    w.raw(finv.built_at_digest)
    w.u64(len(finv.blocks))
    for block in finv.blocks:
        w.u64(block.shape[0])
        w.f64_array(block.reshape(-1))
    cont.write_atomic(path, w.getvalue())


def load_inverse_fisher(path: str) -> InverseFisher:
    r = cont.ByteReader(cont.read_file(path), path)
    r.magic(cont.FISHER_MAGIC)
    version = r.u8("version")
    if version != cont.CONTAINER_VERSION:
        raise ContainerError(f"{path}: unsupported container version {version} at byte 8")
    dampening = r.f64("dampening")
    n_samples = r.u64("n_samples")
    batch_size = r.u64("batch_size")
    digest = r.raw(32, "parameter digest")
    n_blocks = r.u64("block count")
    blocks = []
    ranges = []
    cursor = 0
    for i in range(n_blocks):
        dim = r.u64(f"block {i} dim")
        if dim == 0 or dim > 10**9:
            raise ContainerError(f"{path}: implausible block dim {dim} at byte {r.offset - 8}")
        blocks.append(r.f64_array(dim * dim, f"block {i} payload").reshape(dim, dim))
        ranges.append((cursor, cursor + dim))
        cursor += dim
    r.expect_end()
    return InverseFisher(
        blocks=tuple(blocks),
        spec=BlockSpec(ranges=tuple(ranges)),
        dampening=dampening,
        n_samples=n_samples,
        batch_size=batch_size,
        built_at_digest=digest,
    )
