"""Dense tensor contractions and tensor spectral-norm estimation.

Tensors are plain float64 ``numpy`` arrays (row-major).  A "vector tuple"
is any sequence of 1-D arrays, one per tensor axis.

The spectral norm of an order-k tensor is the supremum of
``|<A, v1 x ... x vk>|`` over unit vectors.  Computing it is NP-hard in
general, so everything here produces lower estimates backed by an explicit
unit tuple; exactness is only claimed for order <= 2.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

ORACLE_MAX_DIM = 8
MAX_ORDER = 8


class DimensionError(ValueError):
    """Shapes of the operands do not line up."""


class OracleRegimeError(ValueError):
    """Input too large for the brute-force oracle."""


def _as_tensor(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim < 1:
        raise DimensionError("tensor must have order >= 1")
    if a.ndim > MAX_ORDER:
        raise DimensionError(f"tensor order {a.ndim} exceeds {MAX_ORDER}")
    if not np.all(np.isfinite(a)):
        raise ValueError("tensor has non-finite entries")
    return a


def _check_tuple(a: np.ndarray, vecs: Sequence[np.ndarray]) -> list[np.ndarray]:
    if len(vecs) != a.ndim:
        raise DimensionError(f"expected {a.ndim} vectors, got {len(vecs)}")
    out = []
    for i, v in enumerate(vecs):
        v = np.asarray(v, dtype=np.float64).ravel()
        if v.shape[0] != a.shape[i]:
            raise DimensionError(
                f"vector {i} has length {v.shape[0]}, axis has {a.shape[i]}")
        out.append(v)
    return out


def _contract_except(a: np.ndarray, vecs: Sequence[np.ndarray], skip: int | None) -> np.ndarray:
    out = a
    # Walk axes from the back so earlier axis positions stay valid.
    for ax in reversed(range(a.ndim)):
        if ax == skip:
            continue
        out = np.tensordot(out, vecs[ax], axes=([ax], [0]))
    return out


def tuple_contract(a, vecs: Sequence[np.ndarray]) -> float:
    """Return sum A[i1..ik] v1[i1] ... vk[ik]."""
    a = _as_tensor(a)
    vecs = _check_tuple(a, vecs)
    return float(_contract_except(a, vecs, None))


def tuple_partial(a, vecs: Sequence[np.ndarray], slot: int) -> np.ndarray:
    """Contract every axis except ``slot``; the result is the linear
    functional on that slot with the other vectors held fixed."""
    a = _as_tensor(a)
    vecs = _check_tuple(a, vecs)
    return _contract_except(a, vecs, slot)


class MultilinearOperator(Protocol):
    """Implicit multilinear form.

    ``shapes[i]`` is the flat length of slot ``i``.  ``partial(i, vecs)``
    returns the gradient of the form with respect to slot ``i`` (all other
    slots fixed), as a flat array of length ``shapes[i]``.
    """

    shapes: tuple[int, ...]

    def partial(self, i: int, vecs: Sequence[np.ndarray]) -> np.ndarray: ...


class TensorOperator:
    """Dense tensor exposed through the implicit-operator interface."""

    def __init__(self, a):
        self.a = _as_tensor(a)
        self.shapes = tuple(self.a.shape)

    def partial(self, i, vecs):
        return _contract_except(self.a, vecs, i)


@dataclass
class NormEstimate:
    value: float
    vectors: list[np.ndarray] = field(repr=False)
    converged: bool
    iterations: int

    def __float__(self):
        return self.value


def _alternate(op, vecs, tol, max_iters):
    value = 0.0
    k = len(vecs)
    for it in range(1, max_iters + 1):
        prev = value
        for i in range(k):
            g = np.asarray(op.partial(i, vecs), dtype=np.float64).ravel()
            n = float(np.linalg.norm(g))
            if n > 0.0:
                vecs[i] = g / n
            # n == 0: keep the previous unit vector
            value = n
        if k == 1 or abs(value - prev) <= tol * max(abs(value), np.finfo(float).tiny):
            return value, vecs, True, it
    return value, vecs, False, max_iters


def spectral_norm_power(op: MultilinearOperator, tol: float = 1e-8, max_iters: int = 1000,
                        restarts: int = 32, seed: int = 0) -> NormEstimate:
    """Alternating rank-one power iteration on an implicit multilinear form.

    Each slot update sets ``v_i <- partial_i / |partial_i|``; after the update
    the form evaluates to ``|partial_i|``, so the returned value is always
    attained by the returned unit tuple (a certified lower bound).
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    children = np.random.SeedSequence(seed).spawn(restarts)
    best = None
    for child in children:
        rng = np.random.default_rng(child)
        vecs = []
        for n in op.shapes:
            v = rng.standard_normal(n)
            vecs.append(v / np.linalg.norm(v))
        value, vecs, ok, its = _alternate(op, vecs, tol, max_iters)
        if best is None or value > best.value:
            best = NormEstimate(value, [v.copy() for v in vecs], ok, its)
    return best


def spectral_norm_bruteforce(a, restarts: int = 32, iters: int = 2000, seed: int = 0) -> float:
    """Tensor spectral norm of a small dense tensor (every dim <= 8)."""
    a = _as_tensor(a)
    if max(a.shape) > ORACLE_MAX_DIM:
        raise OracleRegimeError(
            f"dimension {max(a.shape)} exceeds oracle limit {ORACLE_MAX_DIM}")
    if a.ndim == 1:
        return float(np.linalg.norm(a))
    if not np.any(a):
        return 0.0
    est = spectral_norm_power(TensorOperator(a), tol=1e-15, max_iters=iters,
                              restarts=restarts, seed=seed)
    return est.value


def compact_block(t: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Restrict ``t`` to ``mask`` and drop every all-empty slice, moving the
    block's entries into a dense upper-left corner."""
    block = np.where(mask, t, 0.0)
    index = []
    for ax in range(t.ndim):
        other = tuple(i for i in range(t.ndim) if i != ax)
        keep = np.flatnonzero(mask.any(axis=other)) if other else np.flatnonzero(mask)
        index.append(keep)
    return block[np.ix_(*index)]


def block_subadditivity_check(t, partition: Sequence[np.ndarray], restarts: int = 32,
                              seed: int = 0) -> tuple[float, float]:
    """Return ``(|t|, sum_k |block_k|)`` for a partition of ``t`` into masked
    sub-tensors.  The first should never exceed the second."""
    t = _as_tensor(t)
    masks = [np.asarray(m, dtype=bool) for m in partition]
    if not masks:
        raise ValueError("empty partition")
    cover = np.zeros(t.shape, dtype=np.int64)
    for m in masks:
        if m.shape != t.shape:
            raise DimensionError(f"mask shape {m.shape} != tensor shape {t.shape}")
        cover += m
    if np.any(cover > 1):
        raise ValueError("partition masks overlap")
    if np.any((cover == 0) & (t != 0)):
        raise ValueError("partition does not cover the support of the tensor")
    lhs = spectral_norm_bruteforce(t, restarts=restarts, seed=seed)
    rhs = 0.0
    for m in masks:
        if m.any():
            rhs += spectral_norm_bruteforce(compact_block(t, m), restarts=restarts, seed=seed)
    return lhs, rhs
