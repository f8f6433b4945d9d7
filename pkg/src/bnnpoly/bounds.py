"""Closed-form bounds, witness constructions and tail-bound Monte Carlo.

All logarithms are natural.  Every bound is linear in ``xnorm``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .deriv import _require_bottleneck4, _require_linear, cross_hessian_apply
from .network import (Direction, UnsupportedSpecError, WeightSet, as_input, forward_scalar,
                      layer_scale)


def _positive(**kw):
    for k, v in kw.items():
        if v <= 0:
            raise ValueError(f"{k} must be positive, got {v}")


# -- formulas --------------------------------------------------------------------


def bound_R3(m, r, d, R, xnorm) -> float:
    """Third-order Taylor remainder of the one-bottleneck network in the ball."""
    _positive(m=m, r=r, d=d)
    return (8 * math.sqrt(m) + 2 * math.sqrt(r) + math.sqrt(d) + 1 + 4 * R) * xnorm * R**3 \
        / (m * math.sqrt(r * d))


def bound_hessian_offdiag(m, d, xnorm) -> float:
    """Within-block Hessian norm at initialization: 2(sqrt6+sqrt d)|x| log m / sqrt(m d)."""
    _positive(m=m, d=d)
    return 2 * (math.sqrt(6) + math.sqrt(d)) * xnorm * math.log(m) / math.sqrt(m * d)


def bound_H_lower(r, d, xnorm) -> float:
    """Lower bound on the cross-block Hessian norm."""
    _positive(r=r, d=d)
    return xnorm / (24 * math.sqrt(r * d))


def bound_deriv_Bplus1(m, R, B, d_list: Sequence[int], xnorm) -> float:
    """Upper bound on the (B+1)-th derivative norm in the ball.

    ``d_list`` holds the bottleneck widths d_1..d_{B-1} (empty for B=1).
    """
    _positive(m=m, B=B)
    if len(d_list) != B - 1:
        raise ValueError(f"need {B - 1} bottleneck widths, got {len(d_list)}")
    prod = float(np.prod(d_list)) if len(d_list) else 1.0
    return (3 + R / math.sqrt(m)) ** B * xnorm / (math.sqrt(prod) * math.sqrt(m))


def bound_deriv_B_lower(B, L_list: Sequence[int], d_list: Sequence[int], xnorm) -> float:
    """Lower bound on the B-th derivative norm at initialization.

    ``d_list`` holds d_0..d_{B-1}.
    """
    if len(L_list) != B or len(d_list) != B:
        raise ValueError("need B depths and B input widths d_0..d_{B-1}")
    out = 2.0 * xnorm
    for L, d in zip(L_list, d_list):
        _positive(d=d)
        out /= 2 ** (L / 2) * math.sqrt(d)
    return out


def bound_wnn_output(L, m, R, c, d, xnorm) -> float:
    """Output norm of an L-layer wide block anywhere in the ball."""
    _positive(m=m, c=c, d=d)
    return (math.sqrt(6) / 2 + R / math.sqrt(m)) ** L * math.log(m) * math.sqrt(c) * xnorm \
        / math.sqrt(d)


def bound_p_derivative(L, p, m, R, d, xnorm) -> float:
    """p-th partial derivative norm of an L-layer wide block, 0 < p <= L."""
    _positive(m=m, d=d)
    if not 0 < p <= L:
        raise ValueError("need 0 < p <= L")
    return (3 * math.sqrt(m) + R) ** (L - p) * xnorm / (m ** ((L - 1) / 2) * math.sqrt(d))


def bound_u_b_lower(m, L_b, d_prev) -> float:
    """Lower bound on the norm of the hidden vector u_b built from e_1."""
    _positive(m=m, d_prev=d_prev)
    if L_b == 0:
        warnings.warn("L_b = 0 is degenerate; returning sqrt(m / d_prev)", stacklevel=2)
    return math.sqrt(m) / (2 ** (L_b / 2) * math.sqrt(d_prev))


# -- reports -----------------------------------------------------------------------

UPPER, LOWER = "upper", "lower"


@dataclass
class BoundReport:
    bound_name: str
    params: dict
    theoretical: float
    empirical: float
    seed: int
    kind: str = UPPER
    satisfied: bool = field(init=False)

    def __post_init__(self):
        if self.kind == UPPER:
            self.satisfied = bool(self.empirical <= self.theoretical)
        elif self.kind == LOWER:
            self.satisfied = bool(self.empirical >= self.theoretical)
        else:
            raise ValueError(f"unknown bound kind {self.kind!r}")

    def to_json(self) -> dict:
        d = asdict(self)
        d["theoretical"] = float(self.theoretical)
        d["empirical"] = float(self.empirical)
        return d


# -- witnesses -----------------------------------------------------------------------


def _aligned_with_e1(x: np.ndarray) -> bool:
    return bool(x[0] > 0 and not np.any(x[1:]))


@dataclass
class BilinearWitness:
    u1: tuple[np.ndarray, ...]
    v2: tuple[np.ndarray, ...]
    value: float          # <u1, H v2> through the operator
    closed_form: float    # c * x_1 * n1^2 n2^2 / (n1^2 + n2^2)
    aligned: bool         # closed form is exact only for x = |x| e_1


def witness_vector_theorem1(w0: WeightSet, x) -> BilinearWitness:
    """Unit tangent certifying a lower bound on the cross-Hessian norm.

    The block-1 part sits in row 0 of W_1^(2) as (W_1^(1) e_1)^T, the block-2
    part is W_2^(2) <- (W_2^(1) e_1)^T; both are scaled by one common factor
    so the stacked vector has unit norm.
    """
    spec = w0.spec
    _require_bottleneck4(spec)
    x = as_input(x, spec.widths[0])
    A, Bm, C, D = w0.matrices
    a = A[:, 0]
    c = C[:, 0]
    n1, n2 = float(a @ a), float(c @ c)
    s = math.sqrt(n1 + n2)
    U = np.zeros(Bm.shape)
    U[0] = a / s
    V = (c / s)[None, :]
    u1 = (np.zeros(A.shape), U)
    v2 = (np.zeros(C.shape), V)
    Hv = cross_hessian_apply(w0, x, v2)
    value = float(sum(np.sum(p * q) for p, q in zip(u1, Hv)))
    d, r = spec.widths[0], spec.widths[1]
    closed = x[0] * n1 * n2 / (n1 + n2) / (spec.m * math.sqrt(r * d))
    return BilinearWitness(u1, v2, value, float(closed), _aligned_with_e1(x))


@dataclass
class DerivativeWitness:
    directions: tuple[Direction, ...]
    u_norms: np.ndarray
    value: float          # substitution contraction
    closed_form: float    # x_1 m^{-B/2} prod |u_b|
    aligned: bool


def hidden_u(w0: WeightSet, b: int) -> np.ndarray:
    """u_b: the first L_b - 1 scaled layers of block b applied to e_1."""
    spec = w0.spec
    block = w0.blocks[b]
    if len(block) < 2:
        raise UnsupportedSpecError("witness needs every block to have >= 2 layers")
    h = np.zeros(spec.widths[b])
    h[0] = 1.0
    for W in block[:-1]:
        h = layer_scale(W) * (W @ h)
    return h


def witness_direction_theoremB(w0: WeightSet, x) -> DerivativeWitness:
    """B unit directions, one per block, each supported on row 0 of the
    block's last matrix and aligned with u_b."""
    spec = w0.spec
    _require_linear(spec)
    x = as_input(x, spec.widths[0])
    us = [hidden_u(w0, b) for b in range(spec.B)]
    norms = np.array([np.linalg.norm(u) for u in us])
    dirs, subs = [], {}
    for b, u in enumerate(us):
        slot = (b, spec.depths[b] - 1)
        V = np.zeros(spec.shape(slot))
        if norms[b] > 0:
            V[0] = u / norms[b]
        subs[slot] = V
        mats = [np.zeros(spec.shape(s)) for s in spec.slots]
        mats[spec.slot_index(slot)] = V
        dirs.append(Direction(spec, mats))
    value = forward_scalar(w0.replace(subs), x)
    closed = x[0] * spec.m ** (-spec.B / 2) * float(np.prod(norms))
    return DerivativeWitness(tuple(dirs), norms, value, float(closed), _aligned_with_e1(x))


# -- tail bounds ------------------------------------------------------------------------


@dataclass
class TailCheck:
    kind: str
    params: dict
    trials: int
    empirical: float
    bound: float
    stderr: float
    satisfied: bool


def _tail_result(kind, params, hits, trials, bound):
    rate = hits / trials
    p = min(max(bound, 0.0), 1.0)
    se = math.sqrt(p * (1 - p) / trials)
    return TailCheck(kind, params, trials, rate, bound, se, bool(rate <= bound + 3 * se))


def tail_bound_check(kind: str, params: dict, trials: int, seed: int = 0,
                     chunk: int = 500) -> TailCheck:
    """Monte Carlo frequency of a tail event against its exponential bound.

    kinds and params:
      gaussian  {sigma, t}       P(|z| >= t) <= 2 exp(-t^2 / (2 sigma^2))
      chi2      {m, t}           P(|z/m - 1| >= t) <= 2 exp(-m t^2 / 8)
      matrix    {N, n, t}        P(|A|_op > sqrt(n) + sqrt(N) + t) <= 2 exp(-t^2 / 2)
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    if kind == "gaussian":
        sigma, t = params["sigma"], params["t"]
        z = rng.normal(0.0, sigma, trials)
        return _tail_result(kind, params, int(np.sum(np.abs(z) >= t)), trials,
                            2 * math.exp(-t * t / (2 * sigma * sigma)))
    if kind == "chi2":
        m, t = params["m"], params["t"]
        z = rng.chisquare(m, trials)
        return _tail_result(kind, params, int(np.sum(np.abs(z / m - 1) >= t)), trials,
                            2 * math.exp(-m * t * t / 8))
    if kind == "matrix":
        N, n, t = params["N"], params["n"], params["t"]
        level = math.sqrt(n) + math.sqrt(N) + t
        hits, done = 0, 0
        while done < trials:
            k = min(chunk, trials - done)
            s = np.linalg.svd(rng.standard_normal((k, N, n)), compute_uv=False)[:, 0]
            hits += int(np.sum(s > level))
            done += k
        return _tail_result(kind, params, hits, trials, 2 * math.exp(-t * t / 2))
    raise ValueError(f"unknown tail kind {kind!r}")
