"""Exact derivative structure of identity-activation bottleneck networks.

The network is linear in every single weight matrix, so along a line
``W0 + t*Delta`` it is a polynomial of degree ``P`` (the number of slots), and
its t^k coefficient is the sum, over all k-subsets S of slots, of the network
evaluated with the slots in S replaced by the matching Delta matrices.

All expansions below group that subset sum layer by layer: the vector
entering a layer is carried as a polynomial in t (one row per degree), and a
layer maps row k to ``W h_k + Delta h_{k-1}``.  This visits the same subsets
as the 2^P enumeration in :func:`poly_expand_subsets` at O(P^2) cost.

Derivative machinery assumes scalar output (output width 1).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np

from .network import (Direction, NetworkSpec, Slot, UnsupportedSpecError, WeightSet, _owned,
                      as_input, forward_scalar, layer_scale, sample_direction)
from .tensor import NormEstimate, spectral_norm_power


def _require_linear(spec: NetworkSpec):
    if spec.activation != "identity":
        raise UnsupportedSpecError("derivative machinery requires the identity activation")
    if spec.output_dim != 1:
        raise UnsupportedSpecError("derivative machinery requires output width 1")


def _require_bottleneck4(spec: NetworkSpec):
    _require_linear(spec)
    if spec.depths != (2, 2):
        raise UnsupportedSpecError("needs the 4-layer one-bottleneck network (depths (2, 2))")


def _deltas(delta: WeightSet | None, spec: NetworkSpec) -> list[np.ndarray | None]:
    if delta is None:
        return [None] * spec.P
    out = []
    for a in delta.matrices:
        out.append(a if np.any(a) else None)
    return out


def _step_right(R: np.ndarray, A: np.ndarray, D: np.ndarray | None) -> np.ndarray:
    s = layer_scale(A)
    out = (R @ A.T) * s
    if D is not None and R.shape[0] > 1:
        out[1:] += (R[:-1] @ D.T) * s
    return out


def _step_left(L: np.ndarray, A: np.ndarray, D: np.ndarray | None) -> np.ndarray:
    s = layer_scale(A)
    out = (L @ A) * s
    if D is not None and L.shape[0] > 1:
        out[1:] += (L[:-1] @ D) * s
    return out


def _right_polys(mats, deltas, x, upto: int, degree: int) -> np.ndarray:
    R = np.zeros((degree + 1, x.shape[0]))
    R[0] = x
    for l in range(upto):
        R = _step_right(R, mats[l], deltas[l])
    return R


def _left_polys(mats, deltas, frm: int, degree: int) -> np.ndarray:
    L = np.zeros((degree + 1, mats[-1].shape[0]))
    L[0] = 1.0
    for l in range(len(mats) - 1, frm, -1):
        L = _step_left(L, mats[l], deltas[l])
    return L


def _slot_gradient(L: np.ndarray, R: np.ndarray, scale: float, k: int) -> np.ndarray:
    """scale * sum_{a+b=k} outer(L[a], R[b])."""
    a = np.array([a for a in range(k + 1) if a < L.shape[0] and k - a < R.shape[0]], dtype=int)
    if a.size == 0:
        return np.zeros((L.shape[1], R.shape[1]))
    G = L[a].T @ R[k - a]
    G *= scale
    return G


def _line_coefficients(w0: WeightSet, delta: WeightSet | None, x: np.ndarray, degree: int,
                       per_block_cap: int | None = None) -> np.ndarray:
    """Coefficients c_0..c_degree of t -> g(w0 + t*delta; x).

    With ``per_block_cap`` set, only subsets using at most that many slots
    of any single block are counted.
    """
    spec = w0.spec
    deltas = _deltas(delta, spec)
    K = degree
    J = 1 if per_block_cap is None else per_block_cap + 1
    S = np.zeros((K + 1, J, x.shape[0]))
    S[0, 0] = x
    ends = set(spec.block_ends())
    for l, (A, D) in enumerate(zip(w0.matrices, deltas)):
        s = layer_scale(A)
        flat = S.reshape(-1, S.shape[-1])
        new = ((flat @ A.T) * s).reshape(K + 1, J, A.shape[0])
        if D is not None and K > 0:
            DS = ((flat @ D.T) * s).reshape(K + 1, J, A.shape[0])
            if per_block_cap is None:
                new[1:] += DS[:-1]
            elif J > 1:
                new[1:, 1:] += DS[:-1, :-1]
        S = new
        if per_block_cap is not None and l in ends:
            collapsed = np.zeros_like(S)
            collapsed[:, 0] = S.sum(axis=1)
            S = collapsed
    return S[:, 0, 0].copy()


# -- polynomial curves ----------------------------------------------------------


@dataclass
class PolyCurve:
    """t -> g(base + t*direction; x) as an exact polynomial."""

    coeffs: np.ndarray
    direction: WeightSet = field(repr=False)
    base: WeightSet = field(repr=False)
    x: np.ndarray = field(repr=False)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def __call__(self, t):
        return np.polynomial.polynomial.polyval(t, self.coeffs)


def poly_expand(w0: WeightSet, delta: WeightSet, x) -> PolyCurve:
    """Exact Taylor coefficients of the network along ``delta``."""
    _require_linear(w0.spec)
    w0._check(delta)
    x = as_input(x, w0.spec.widths[0])
    coeffs = _line_coefficients(w0, delta, x, w0.spec.P)
    return PolyCurve(coeffs, delta, w0, x)


def poly_expand_subsets(w0: WeightSet, delta: WeightSet, x) -> np.ndarray:
    """Reference expansion by explicit enumeration of all 2^P slot subsets."""
    _require_linear(w0.spec)
    x = as_input(x, w0.spec.widths[0])
    slots = w0.spec.slots
    coeffs = np.zeros(len(slots) + 1)
    for k in range(len(slots) + 1):
        for S in combinations(slots, k):
            coeffs[k] += forward_scalar(w0.replace({s: delta[s] for s in S}), x)
    return coeffs


def jet_eval(curve: PolyCurve, t: float, degree: int) -> float:
    """Degree-``degree`` jet along the curve, evaluated at t."""
    if not 0 <= degree <= curve.degree:
        raise ValueError(f"jet degree must lie in [0, {curve.degree}]")
    return float(np.polynomial.polynomial.polyval(t, curve.coeffs[:degree + 1]))


def remainder(curve: PolyCurve, t: float, degree: int) -> float:
    """Network value at ``base + t*direction`` minus the jet of given degree."""
    value = forward_scalar(curve.base.add(curve.direction, t), curve.x)
    return value - jet_eval(curve, t, degree)


# -- gradients -------------------------------------------------------------------


def gradient_by_substitution(w0: WeightSet, x, slot: Slot) -> np.ndarray:
    """Matrix G with <G, V> = g(w0 with ``slot`` replaced by V; x)."""
    _require_linear(w0.spec)
    x = as_input(x, w0.spec.widths[0])
    i = w0.spec.slot_index(slot)
    mats = w0.matrices
    R = _right_polys(mats, [None] * len(mats), x, i, 0)
    L = _left_polys(mats, [None] * len(mats), i, 0)
    return _slot_gradient(L, R, layer_scale(mats[i]), 0)


def coefficient_gradient(w0: WeightSet, delta: WeightSet, x, slot: Slot, k: int) -> np.ndarray:
    """Gradient with respect to one slot of the t^k coefficient along
    ``delta``, counting only subsets that avoid that slot."""
    _require_linear(w0.spec)
    x = as_input(x, w0.spec.widths[0])
    i = w0.spec.slot_index(slot)
    mats, deltas = w0.matrices, _deltas(delta, w0.spec)
    R = _right_polys(mats, deltas, x, i, k)
    L = _left_polys(mats, deltas, i, k)
    return _slot_gradient(L, R, layer_scale(mats[i]), k)


def gradient_exact(w0: WeightSet, x) -> tuple[np.ndarray, ...]:
    """Closed-form gradient of the 4-layer one-bottleneck network.

    With slots A=W_1^(1), Bm=W_1^(2), C=W_2^(1), D=W_2^(2) and
    c = 1/(m sqrt(r d)):

        dA = c (D C Bm)^T x^T      dBm = c (D C)^T (A x)^T
        dC = c D^T (Bm A x)^T      dD  = c (C Bm A x)^T
    """
    spec = w0.spec
    _require_bottleneck4(spec)
    x = as_input(x, spec.widths[0])
    A, Bm, C, D = w0.matrices
    d, r = spec.widths[0], spec.widths[1]
    c = 1.0 / (spec.m * np.sqrt(r * d))
    Ax = A @ x
    return (c * np.outer(D @ C @ Bm, x),
            c * np.outer(D @ C, Ax),
            c * np.outer(D, Bm @ Ax),
            c * (C @ (Bm @ Ax))[None, :])


# -- second derivatives ------------------------------------------------------------


def _block_slots(spec: NetworkSpec, b: int) -> list[Slot]:
    return [s for s in spec.slots if s[0] == b]


def _tangent_direction(spec: NetworkSpec, block: int, tangent: Sequence[np.ndarray]) -> Direction:
    slots = _block_slots(spec, block)
    if len(tangent) != len(slots):
        raise ValueError(f"block {block} tangent needs {len(slots)} matrices")
    mats = [np.zeros(spec.shape(s)) for s in spec.slots]
    for s, v in zip(slots, tangent):
        mats[spec.slot_index(s)] = np.asarray(v, dtype=np.float64).reshape(spec.shape(s))
    return Direction(spec, mats)


def _cross_apply(w0: WeightSet, x, tangent, src: int, dst: int) -> tuple[np.ndarray, ...]:
    spec = w0.spec
    if spec.B != 2:
        raise UnsupportedSpecError("cross-Hessian is defined for two-block networks")
    _require_linear(spec)
    delta = _tangent_direction(spec, src, tangent)
    return tuple(coefficient_gradient(w0, delta, x, s, 1) for s in _block_slots(spec, dst))


def cross_hessian_apply(w0: WeightSet, x, v2: Sequence[np.ndarray]) -> tuple[np.ndarray, ...]:
    """H v2: block-2 tangent -> block-1 tangent, H = d^2 g / dW_1 dW_2."""
    return _cross_apply(w0, x, v2, 1, 0)


def cross_hessian_adjoint(w0: WeightSet, x, u1: Sequence[np.ndarray]) -> tuple[np.ndarray, ...]:
    """H^T u1: block-1 tangent -> block-2 tangent."""
    return _cross_apply(w0, x, u1, 0, 1)


def _flatten(mats) -> np.ndarray:
    return np.concatenate([np.ravel(a) for a in mats])


def _unflatten(v: np.ndarray, shapes) -> list[np.ndarray]:
    out, i = [], 0
    for sh in shapes:
        n = sh[0] * sh[1]
        out.append(v[i:i + n].reshape(sh))
        i += n
    return out


class CrossHessianOperator:
    """Bilinear form (u1, v2) -> <u1, H v2> on flattened block tangents."""

    def __init__(self, w0: WeightSet, x):
        self.w0, self.x = w0, as_input(x, w0.spec.widths[0])
        spec = w0.spec
        self.block_shapes = [[spec.shape(s) for s in _block_slots(spec, b)] for b in (0, 1)]
        self.shapes = tuple(sum(a * b for a, b in sh) for sh in self.block_shapes)

    def partial(self, i, vecs):
        if i == 0:
            return _flatten(cross_hessian_apply(self.w0, self.x, _unflatten(vecs[1], self.block_shapes[1])))
        return _flatten(cross_hessian_adjoint(self.w0, self.x, _unflatten(vecs[0], self.block_shapes[0])))


def cross_hessian_norm(w0: WeightSet, x, restarts: int = 4, tol: float = 1e-10,
                       max_iters: int = 500, seed: int = 0) -> NormEstimate:
    return spectral_norm_power(CrossHessianOperator(w0, x), tol=tol, max_iters=max_iters,
                               restarts=restarts, seed=seed)


class SubstitutionOperator:
    """Multilinear form (V_1..V_p) -> g(w0 with slots[i] <- V_i; x)."""

    def __init__(self, w0: WeightSet, x, slots: Sequence[Slot]):
        _require_linear(w0.spec)
        if len(set(slots)) != len(slots):
            raise ValueError("slots must be distinct")
        self.w0, self.x, self.slots = w0, as_input(x, w0.spec.widths[0]), list(slots)
        self._shapes = [w0.spec.shape(s) for s in self.slots]
        self.shapes = tuple(a * b for a, b in self._shapes)

    def _substituted(self, vecs, skip=None) -> WeightSet:
        # read-only views skip the defensive copy in WeightSet
        return self.w0.replace({s: _owned(np.reshape(v, sh)) for n, (s, v, sh)
                                in enumerate(zip(self.slots, vecs, self._shapes)) if n != skip})

    def partial(self, i, vecs):
        return gradient_by_substitution(self._substituted(vecs, skip=i), self.x, self.slots[i]).ravel()

    def contract(self, vecs) -> float:
        return forward_scalar(self._substituted(vecs), self.x)


def _chain_opnorm(mats: Sequence[np.ndarray]) -> float:
    """Operator norm of mats[-1] @ ... @ mats[0], factored through the
    narrowest intermediate dimension."""
    if not mats:
        return 1.0
    dims = [mats[0].shape[1]] + [a.shape[0] for a in mats]
    k = int(np.argmin(dims))
    n = dims[k]
    right = np.eye(n)            # (dims[0] x n) after transposed products
    for a in reversed(mats[:k]):
        right = a.T @ right
    left = np.eye(n)             # (dims[-1] x n)
    for a in mats[k:]:
        left = a @ left
    _, rl = np.linalg.qr(left)
    _, rr = np.linalg.qr(right)
    return float(np.linalg.norm(rl @ rr.T, 2))


def hessian_pair_closed_form(w0: WeightSet, x, slot_i: Slot, slot_j: Slot) -> float:
    """Spectral norm of (V_i, V_j) -> g(i <- V_i, j <- V_j) in closed form:
    scales * |rows after| * |product between|_op * |input to first|."""
    spec = w0.spec
    _require_linear(spec)
    x = as_input(x, spec.widths[0])
    i, j = sorted((spec.slot_index(slot_i), spec.slot_index(slot_j)))
    mats = w0.matrices
    none = [None] * len(mats)
    right = _right_polys(mats, none, x, i, 0)[0]
    left = _left_polys(mats, none, j, 0)[0]
    between = [layer_scale(a) * a for a in mats[i + 1:j]]
    scale = layer_scale(mats[i]) * layer_scale(mats[j])
    return scale * float(np.linalg.norm(left)) * _chain_opnorm(between) * float(np.linalg.norm(right))


@dataclass
class BlockNorm:
    value: float
    closed_form: float | None
    same_slot: bool
    converged: bool


def hessian_block_norm(w0: WeightSet, x, slot_i: Slot, slot_j: Slot, restarts: int = 4,
                       tol: float = 1e-10, max_iters: int = 500, seed: int = 0) -> BlockNorm:
    """Spectral norm of the (slot_i, slot_j) block of the Hessian at w0."""
    _require_linear(w0.spec)
    if slot_i == slot_j:
        # linear in each slot: the diagonal block vanishes identically
        return BlockNorm(0.0, 0.0, True, True)
    op = SubstitutionOperator(w0, x, [slot_i, slot_j])
    est = spectral_norm_power(op, tol=tol, max_iters=max_iters, restarts=restarts, seed=seed)
    return BlockNorm(est.value, hessian_pair_closed_form(w0, x, slot_i, slot_j), False, est.converged)


# -- surrogate ---------------------------------------------------------------------


@dataclass
class SurrogateModel:
    """Multilinear surrogate: subset sums with at most one slot per block.

    For two blocks this is g(W0) + g0^T Delta + Delta_1^T H Delta_2.
    """

    degree: int
    constant: float
    linear_part: tuple[np.ndarray, ...] = field(repr=False)
    base: WeightSet = field(repr=False)
    x: np.ndarray = field(repr=False)

    @property
    def cross_part(self):
        """Handle to the cross-Hessian operator (two-block networks)."""
        return CrossHessianOperator(self.base, self.x)

    def curve(self, delta: WeightSet) -> np.ndarray:
        """Coefficients (degree <= B) of t -> q(base + t*delta)."""
        return _line_coefficients(self.base, delta, self.x, self.degree, per_block_cap=1)

    def __call__(self, w: WeightSet) -> float:
        return surrogate_eval(self, w, self.x)


def build_surrogate(w0: WeightSet, x, degree: int) -> SurrogateModel:
    spec = w0.spec
    _require_linear(spec)
    if degree != spec.B:
        raise ValueError(f"surrogate degree must equal the block count B={spec.B}")
    x = as_input(x, spec.widths[0])
    linear = tuple(gradient_by_substitution(w0, x, s) for s in spec.slots)
    return SurrogateModel(degree, forward_scalar(w0, x), linear, w0, x)


def surrogate_eval(s: SurrogateModel, w: WeightSet, x) -> float:
    s.base._check(w)
    x = as_input(x, s.base.spec.widths[0])
    if not np.array_equal(x, s.x):
        raise ValueError("surrogate was built for a different input")
    delta = WeightSet(w.spec, [a - b for a, b in zip(w.matrices, s.base.matrices)])
    # the stored constant keeps q(W_init) bit-exact
    return float(s.constant + np.sum(s.curve(delta)[1:]))


def surrogate_coefficients(curve: PolyCurve) -> np.ndarray:
    """Multilinear restriction of a curve's coefficients (degree <= B)."""
    return _line_coefficients(curve.base, curve.direction, curve.x, curve.base.spec.B,
                              per_block_cap=1)


# -- extremal directions -------------------------------------------------------------


def ascent_direction(w0: WeightSet, x, degree: int, seed: int, per_matrix_norm: float = 1.0,
                     sweeps: int = 3, start: WeightSet | None = None) -> Direction:
    """Direction on the per-matrix sphere of radius ``per_matrix_norm`` that
    locally maximizes |c_degree|, the t^degree coefficient along it.

    Block-coordinate ascent: with the other slots fixed, c_degree is affine in
    one slot, ``alpha + <G, Delta_slot>``, so the best slot value is
    ``sign(alpha) * R * G / |G|``.  Starts from a Gaussian direction.
    """
    spec = w0.spec
    _require_linear(spec)
    if not 1 <= degree <= spec.P:
        raise ValueError(f"degree must lie in [1, {spec.P}]")
    x = as_input(x, spec.widths[0])
    if start is None:
        start = sample_direction(spec, seed, per_matrix_norm)
    D = [np.array(a) for a in start.matrices]
    mats = w0.matrices
    P = spec.P
    for _ in range(sweeps):
        lefts = [None] * P
        L = np.zeros((degree + 1, 1))
        L[0] = 1.0
        for l in range(P - 1, -1, -1):
            lefts[l] = L
            L = _step_left(L, mats[l], D[l])
        R = np.zeros((degree + 1, x.shape[0]))
        R[0] = x
        for l in range(P):
            s = layer_scale(mats[l])
            Lk = lefts[l]
            WR = (R @ mats[l].T) * s
            # alpha: subsets of size `degree` that avoid this slot
            alpha = float(sum(Lk[a] @ WR[degree - a] for a in range(degree + 1)))
            G = _slot_gradient(Lk, R, s, degree - 1)
            n = float(np.linalg.norm(G))
            if n > 0.0:
                G *= (1.0 if alpha >= 0 else -1.0) * per_matrix_norm / n
                D[l] = G
            WR[1:] += (R[:-1] @ D[l].T) * s
            R = WR
    return Direction(spec, [_owned(a) for a in D])
