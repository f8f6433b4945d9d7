"""Bottleneck linear networks: architecture, initialization, forward pass.

A network is a cascade of ``B`` wide blocks.  Block ``b`` (0-based here)
maps ``R^{d_b} -> R^{d_{b+1}}`` through ``L_b`` weight matrices

    W_b^(0): m x d_b,   W_b^(l): m x m,   W_b^(L_b - 1): d_{b+1} x m

and every matrix is applied with the fan-in scaling ``1/sqrt(ncols)``.
A *slot* is one weight matrix, addressed as ``(b, l)``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .tensor import DimensionError

ACTIVATIONS = ("identity", "tanh")
MAX_SLOTS = 16

Slot = tuple[int, int]


class UnsupportedSpecError(ValueError):
    """Operation is not defined for this architecture or activation."""


@dataclass(frozen=True)
class NetworkSpec:
    depths: tuple[int, ...]
    widths: tuple[int, ...]
    m: int
    activation: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "depths", tuple(int(v) for v in self.depths))
        object.__setattr__(self, "widths", tuple(int(v) for v in self.widths))
        if len(self.depths) < 1:
            raise ValueError("need at least one block")
        if len(self.widths) != len(self.depths) + 1:
            raise ValueError("widths must list d_0..d_B (one more than depths)")
        if min(self.depths) < 1 or min(self.widths) < 1 or self.m < 1:
            raise ValueError("all depths, widths and m must be positive")
        if sum(self.depths) > MAX_SLOTS:
            raise ValueError(f"total layer count exceeds {MAX_SLOTS}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")

    @property
    def B(self) -> int:
        return len(self.depths)

    @property
    def P(self) -> int:
        return sum(self.depths)

    @property
    def output_dim(self) -> int:
        return self.widths[-1]

    @property
    def slots(self) -> list[Slot]:
        return [(b, l) for b, L in enumerate(self.depths) for l in range(L)]

    def shape(self, slot: Slot) -> tuple[int, int]:
        b, l = slot
        L = self.depths[b]
        rows = self.widths[b + 1] if l == L - 1 else self.m
        cols = self.widths[b] if l == 0 else self.m
        return rows, cols

    def slot_index(self, slot: Slot) -> int:
        b, l = slot
        if not (0 <= b < self.B and 0 <= l < self.depths[b]):
            raise KeyError(f"no slot {slot}")
        return sum(self.depths[:b]) + l

    def block_ends(self) -> list[int]:
        """Flat index of the last slot of every block."""
        return list(np.cumsum(self.depths) - 1)

    def with_activation(self, activation: str) -> "NetworkSpec":
        return NetworkSpec(self.depths, self.widths, self.m, activation)

    def to_dict(self) -> dict:
        return {"B": self.B, "depths": list(self.depths), "widths": list(self.widths),
                "m": self.m, "activation": self.activation}


def bottleneck_spec(m: int, d: int = 1, r: int = 1, k: int = 1,
                    activation: str = "identity") -> NetworkSpec:
    """The 4-layer, one-bottleneck network: input d, bottleneck r, output k."""
    return NetworkSpec((2, 2), (d, r, k), m, activation)


def _freeze(a: np.ndarray) -> np.ndarray:
    # Already-frozen arrays are shared; anything writable is copied first.
    if a.flags.writeable or not a.flags.c_contiguous or a.dtype != np.float64:
        a = np.array(a, dtype=np.float64, order="C")
    a.setflags(write=False)
    return a


def _owned(a: np.ndarray) -> np.ndarray:
    """Hand a freshly built array to a WeightSet without a defensive copy."""
    a.setflags(write=False)
    return a


def _checked(spec: NetworkSpec, slot: Slot, w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != spec.shape(slot):
        raise DimensionError(f"slot {slot}: shape {w.shape}, expected {spec.shape(slot)}")
    if not np.all(np.isfinite(w)):
        raise ValueError(f"slot {slot} has non-finite entries")
    return _freeze(w)


class WeightSet:
    """One matrix per slot, grouped by block.  Immutable."""

    def __init__(self, spec: NetworkSpec, matrices: Sequence[np.ndarray]):
        if len(matrices) != spec.P:
            raise DimensionError(f"expected {spec.P} matrices, got {len(matrices)}")
        self.spec = spec
        self.matrices: tuple[np.ndarray, ...] = tuple(
            _checked(spec, slot, w) for slot, w in zip(spec.slots, matrices))

    @classmethod
    def _trusted(cls, spec: NetworkSpec, matrices: Sequence[np.ndarray]) -> "WeightSet":
        # frozen, already-validated matrices only
        obj = cls.__new__(cls)
        obj.spec, obj.matrices = spec, tuple(matrices)
        return obj

    @property
    def blocks(self) -> tuple[tuple[np.ndarray, ...], ...]:
        out, i = [], 0
        for L in self.spec.depths:
            out.append(self.matrices[i:i + L])
            i += L
        return tuple(out)

    def __getitem__(self, slot: Slot) -> np.ndarray:
        return self.matrices[self.spec.slot_index(slot)]

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self.matrices)

    def __len__(self):
        return len(self.matrices)

    def _check(self, other: "WeightSet"):
        if other.spec.depths != self.spec.depths or other.spec.widths != self.spec.widths \
                or other.spec.m != self.spec.m:
            raise DimensionError("weight sets belong to different architectures")

    def replace(self, subs: Mapping[Slot, np.ndarray]) -> "WeightSet":
        """Copy with some slots swapped for other matrices."""
        mats = list(self.matrices)
        for slot, v in subs.items():
            mats[self.spec.slot_index(slot)] = _checked(self.spec, slot, v)
        return WeightSet._trusted(self.spec, mats)

    def with_spec(self, spec: NetworkSpec) -> "WeightSet":
        return WeightSet(spec, self.matrices)

    def add(self, other: "WeightSet", t: float = 1.0) -> "WeightSet":
        self._check(other)
        return WeightSet(self.spec, [_owned(a + t * b) for a, b in zip(self.matrices, other.matrices)])

    def scale(self, c: float) -> "WeightSet":
        return WeightSet(self.spec, [_owned(c * a) for a in self.matrices])

    def frob_norms(self) -> np.ndarray:
        return np.array([np.linalg.norm(a) for a in self.matrices])

    def total_norm(self) -> float:
        return float(np.sqrt(np.sum(self.frob_norms() ** 2)))

    def equals(self, other: "WeightSet") -> bool:
        return self.spec == other.spec and all(
            np.array_equal(a, b) for a, b in zip(self.matrices, other.matrices))


class Direction(WeightSet):
    """A tangent vector in weight space, with cached per-matrix norms."""

    @cached_property
    def norms(self) -> np.ndarray:
        return self.frob_norms()

    @classmethod
    def from_weights(cls, w: WeightSet) -> "Direction":
        return cls(w.spec, w.matrices)

    @classmethod
    def zeros(cls, spec: NetworkSpec) -> "Direction":
        return cls(spec, [np.zeros(spec.shape(s)) for s in spec.slots])

    def restrict(self, slots) -> "Direction":
        """Zero every slot not in ``slots``."""
        keep = {self.spec.slot_index(s) for s in slots}
        return Direction(self.spec, [a if i in keep else np.zeros_like(a)
                                     for i, a in enumerate(self.matrices)])

    def restrict_blocks(self, blocks) -> "Direction":
        return self.restrict([s for s in self.spec.slots if s[0] in set(blocks)])


def slot_rng(seed: int, slot: Slot) -> np.random.Generator:
    """Independent stream for one matrix, keyed by (seed, b, l)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), slot[0], slot[1]]))


def init_weights(spec: NetworkSpec, seed: int) -> WeightSet:
    """I.i.d. N(0, 1) entries, one substream per matrix."""
    return WeightSet(spec, [_owned(slot_rng(seed, s).standard_normal(spec.shape(s)))
                            for s in spec.slots])


def sample_direction(spec: NetworkSpec, seed: int, per_matrix_norm: float = 1.0) -> Direction:
    """Gaussian direction with every matrix rescaled to the given Frobenius norm.

    Adding it to a weight set lands on the boundary of the per-matrix ball of
    radius ``per_matrix_norm``.
    """
    if per_matrix_norm < 0:
        raise ValueError("per_matrix_norm must be >= 0")
    # Offset the key so directions never reuse a weight-initialization stream.
    mats = []
    for s in spec.slots:
        z = slot_rng(seed, (s[0] + 1_000_003, s[1])).standard_normal(spec.shape(s))
        z *= per_matrix_norm / np.linalg.norm(z)
        mats.append(_owned(z))
    return Direction(spec, mats)


def ball_contains(center: WeightSet, w: WeightSet, radius: float) -> bool:
    center._check(w)
    return all(np.linalg.norm(a - c) <= radius for a, c in zip(w.matrices, center.matrices))


def layer_scale(w: np.ndarray) -> float:
    return 1.0 / np.sqrt(w.shape[1])


def as_input(x, d: int) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.ndim != 1 or x.shape[0] != d:
        raise DimensionError(f"input must be a vector of length {d}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input has non-finite entries")
    return x


def forward_wnn(matrices: Sequence[np.ndarray], x, activation: str = "identity") -> np.ndarray:
    """Evaluate one wide block; tanh (if requested) follows every hidden layer."""
    h = np.asarray(x, dtype=np.float64)
    L = len(matrices)
    for l, w in enumerate(matrices):
        if w.shape[1] != h.shape[0]:
            raise DimensionError(f"layer {l}: matrix {w.shape} cannot act on length {h.shape[0]}")
        h = layer_scale(w) * (w @ h)
        if activation == "tanh" and l < L - 1:
            h = np.tanh(h)
    return h


def forward_bnn(w: WeightSet, x) -> np.ndarray:
    """Network output: the blocks applied in sequence."""
    h = as_input(x, w.spec.widths[0])
    for block in w.blocks:
        h = forward_wnn(block, h, w.spec.activation)
    return h


def forward_along(w: WeightSet, delta: WeightSet, x, ts) -> np.ndarray:
    """Outputs g(w + t*delta; x) for every t, without forming w + t*delta.

    Returns shape (len(ts), output_dim).
    """
    w._check(delta)
    ts = np.asarray(ts, dtype=np.float64).ravel()
    H = np.repeat(as_input(x, w.spec.widths[0])[:, None], ts.size, axis=1)
    for block, dblock in zip(w.blocks, delta.blocks):
        L = len(block)
        for l, (W, D) in enumerate(zip(block, dblock)):
            H = layer_scale(W) * (W @ H + (D @ H) * ts)
            if w.spec.activation == "tanh" and l < L - 1:
                H = np.tanh(H)
    return H.T


def forward_scalar(w: WeightSet, x) -> float:
    out = forward_bnn(w, x)
    if out.shape != (1,):
        raise UnsupportedSpecError("scalar output requires output width 1")
    return float(out[0])


# -- serialization -----------------------------------------------------------

_MAGIC = b"BNNW"
_VERSION = 1


def save_weights(w: WeightSet, path, seed: int | None = None) -> tuple[Path, Path]:
    """Binary container plus JSON sidecar.

    Layout: magic, then little-endian int32 fields (version, B, depths...,
    widths..., m, activation code), then every matrix as float64 LE row-major
    in slot order.
    """
    path = Path(path)
    spec = w.spec
    ints = [_VERSION, spec.B, *spec.depths, *spec.widths, spec.m, ACTIVATIONS.index(spec.activation)]
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack(f"<{len(ints)}i", *ints))
        for a in w.matrices:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    side = path.with_suffix(".json")
    meta = {"format": "bnnpoly-weights", "version": _VERSION, "seed": seed,
            "slots": [list(s) for s in spec.slots], **spec.to_dict()}
    side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path, side


def load_weights(path) -> WeightSet:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError("not a weight container")
    off = 4
    version, B = struct.unpack_from("<2i", raw, off)
    off += 8
    if version != _VERSION:
        raise ValueError(f"unsupported container version {version}")
    n = 2 * B + 3
    fields = struct.unpack_from(f"<{n}i", raw, off)
    off += 4 * n
    depths, widths = fields[:B], fields[B:2 * B + 1]
    m, act = fields[2 * B + 1], fields[2 * B + 2]
    spec = NetworkSpec(depths, widths, m, ACTIVATIONS[act])
    mats = []
    for s in spec.slots:
        shape = spec.shape(s)
        count = shape[0] * shape[1]
        mats.append(np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape))
        off += 8 * count
    if off != len(raw):
        raise ValueError("trailing bytes in weight container")
    return WeightSet(spec, mats)
