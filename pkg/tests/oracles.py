"""Independent reference computations used only by the tests.

None of these share code with the library beyond the public forward pass.
"""
import itertools

import numpy as np

from bnnpoly.network import WeightSet, forward_scalar


def triple_loop_contract(a, u, v, w):
    total = 0.0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            for k in range(a.shape[2]):
                total += a[i, j, k] * u[i] * v[j] * w[k]
    return total


def _sphere(theta, phi):
    return np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], -1)


def grid_search_norm3(a, coarse=24, final_step=1e-2):
    """Spectral norm of a 3x3x3 tensor by grid search over two unit spheres.

    The third vector is optimal in closed form, so the search is over
    (v1, v2) only: a coarse angular grid, then repeated local grids with a
    shrinking step until the step is below ``final_step``.
    """
    assert a.shape == (3, 3, 3)
    th = np.linspace(0, np.pi, coarse + 1)
    ph = np.linspace(0, 2 * np.pi, 2 * coarse, endpoint=False)
    T, Ph = np.meshgrid(th, ph, indexing="ij")
    G = _sphere(T.ravel(), Ph.ravel())
    M = np.einsum("ijk,ai->ajk", a, G)
    vals = np.linalg.norm(np.einsum("ajk,bj->abk", M, G), axis=-1)
    ia, ib = np.unravel_index(np.argmax(vals), vals.shape)
    best = np.array([T.ravel()[ia], Ph.ravel()[ia], T.ravel()[ib], Ph.ravel()[ib]])
    value = vals[ia, ib]
    step = np.pi / coarse
    offsets = np.array(list(itertools.product([-2, -1, 0, 1, 2], repeat=4)), float)
    while step > final_step / 10:
        cand = best + offsets * step / 2
        v1 = _sphere(cand[:, 0], cand[:, 1])
        v2 = _sphere(cand[:, 2], cand[:, 3])
        vals = np.linalg.norm(np.einsum("ijk,ni,nj->nk", a, v1, v2), axis=-1)
        k = int(np.argmax(vals))
        if vals[k] > value:
            value, best = vals[k], cand[k]
        step /= 2
    return float(value)


def vandermonde_coefficients(w0: WeightSet, delta: WeightSet, x, degree):
    """Interpolate t -> g(w0 + t delta) at integer nodes symmetric about 0."""
    half = (degree + 1) // 2 + 1
    nodes = np.arange(-half, half + 1, dtype=float)[: degree + 1]
    values = np.array([forward_scalar(w0.add(delta, t), x) for t in nodes])
    V = np.vander(nodes, degree + 1, increasing=True)
    q, r = np.linalg.qr(V)
    return np.linalg.solve(r, q.T @ values)


def fd_gradient(w0: WeightSet, x, slot, h=1e-5):
    """Central finite differences of the scalar output in one slot."""
    i = w0.spec.slot_index(slot)
    base = w0.matrices[i]
    grad = np.zeros(base.shape)
    for idx in np.ndindex(base.shape):
        e = np.zeros(base.shape)
        e[idx] = h
        plus = forward_scalar(w0.replace({slot: base + e}), x)
        minus = forward_scalar(w0.replace({slot: base - e}), x)
        grad[idx] = (plus - minus) / (2 * h)
    return grad


def fd_mixed(w0: WeightSet, x, u: dict, v: dict, h=1e-3):
    """Second-order central difference of <u, d^2 g v> along two directions."""
    def g(a, b):
        subs = {s: w0[s] + a * u.get(s, 0) + b * v.get(s, 0) for s in set(u) | set(v)}
        return forward_scalar(w0.replace(subs), x)
    return (g(h, h) - g(h, -h) - g(-h, h) + g(-h, -h)) / (4 * h * h)


def explicit_product(matrices, x):
    """Scaled product of the matrices applied to x, built as one dense matrix."""
    M = np.eye(matrices[0].shape[1])
    for w in matrices:
        M = (w / np.sqrt(w.shape[1])) @ M
    return M @ x
