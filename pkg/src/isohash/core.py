"""Core types and pure functions: quantized hashing, the sigmoid surrogate,
pair distances, and constant-memory secant-stream indexing.

Everything here is stateless and safe to call from multiple threads. Solver
arithmetic is float64 throughout; binary codes are bit-packed and compared
with XOR + popcount.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np
from scipy.special import expit

__all__ = [
    "Dataset",
    "SecantRef",
    "SecantBatch",
    "BinaryCodes",
    "HashModel",
    "hash_codes",
    "hash_matrix",
    "sigmoid",
    "sigmoid_prime",
    "sigmoid_embed",
    "relaxed_pair_dist",
    "relaxed_pair_dists",
    "hamming_pair_dist",
    "hamming_pairs",
    "enumerate_secants",
    "secant_count",
    "pair_linear_index",
    "decode_pair_indices",
    "pair_distances",
    "sample_pair_indices",
    "random_projection_matrix",
]


# ---------------------------------------------------------------------------
# domain types


@dataclass
class Dataset:
    """Q x N point matrix plus the preprocessing metadata it was built with.

    ``mean`` is the vector that was subtracted (zeros if none); ``normalized``
    records whether every row was scaled to unit l2 norm.
    """

    points: np.ndarray
    mean: Optional[np.ndarray] = None
    normalized: bool = False

    def __post_init__(self):
        self.points = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        if self.points.ndim != 2:
            raise ValueError(f"points must be 2-D, got shape {self.points.shape}")
        q, n = self.points.shape
        if q < 2 or n < 1:
            raise ValueError(f"need at least 2 points and 1 dimension, got {q}x{n}")
        if self.mean is None:
            self.mean = np.zeros(n, dtype=np.float64)
        else:
            self.mean = np.asarray(self.mean, dtype=np.float64)
            if self.mean.shape != (n,):
                raise ValueError(
                    f"mean has shape {self.mean.shape}, expected ({n},)"
                )
        if self.normalized:
            norms = np.linalg.norm(self.points, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-9):
                bad = int(np.argmax(np.abs(norms - 1.0)))
                raise ValueError(
                    f"normalized=True but row {bad} has norm {norms[bad]!r}"
                )

    @property
    def q(self) -> int:
        return self.points.shape[0]

    @property
    def n(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class SecantRef:
    """One pair (i, j), i > j, with its target ambient distance c.

    c is the l2 distance between points i and j unless deliberately
    overridden (e.g. the BRE-style zero targets for the closest pairs).
    """

    i: int
    j: int
    c: float

    def __post_init__(self):
        if not (self.i > self.j >= 0):
            raise ValueError(f"need i > j >= 0, got ({self.i}, {self.j})")
        if self.c < 0:
            raise ValueError(f"target distance must be >= 0, got {self.c}")


class SecantBatch:
    """Columnar batch of secants: index arrays i, j and target distances c."""

    __slots__ = ("i", "j", "c")

    def __init__(self, i, j, c):
        self.i = np.ascontiguousarray(np.asarray(i, dtype=np.int64))
        self.j = np.ascontiguousarray(np.asarray(j, dtype=np.int64))
        self.c = np.ascontiguousarray(np.asarray(c, dtype=np.float64))
        if not (self.i.shape == self.j.shape == self.c.shape) or self.i.ndim != 1:
            raise ValueError("i, j, c must be 1-D arrays of equal length")
        if self.i.size and not np.all(self.i > self.j):
            raise ValueError("every secant needs i > j")
        if self.i.size and (self.j.min() < 0):
            raise ValueError("negative point index in secant batch")
        if self.c.size and self.c.min() < 0:
            raise ValueError("negative target distance in secant batch")

    def __len__(self) -> int:
        return self.i.size

    def __getitem__(self, k) -> SecantRef:
        return SecantRef(int(self.i[k]), int(self.j[k]), float(self.c[k]))

    def keys(self) -> np.ndarray:
        """Linear pair index i*(i-1)/2 + j; unique per unordered pair."""
        return pair_linear_index(self.i, self.j)

    def subset(self, mask_or_idx) -> "SecantBatch":
        return SecantBatch(self.i[mask_or_idx], self.j[mask_or_idx], self.c[mask_or_idx])

    @classmethod
    def from_pairs(cls, points: np.ndarray, i, j) -> "SecantBatch":
        """Build a batch with true ambient distances as targets."""
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        return cls(i, j, pair_distances(points, i, j))


@dataclass
class HashModel:
    """Trained hashing artifact: embedding matrix W (M x N), the distance
    scale lambda, the final sigmoid rate, and the preprocessing stats needed
    to hash unseen data consistently."""

    w: np.ndarray
    lam: float
    alpha: float
    mean: np.ndarray
    normalized: bool

    def __post_init__(self):
        self.w = np.ascontiguousarray(np.asarray(self.w, dtype=np.float64))
        if self.w.ndim != 2 or self.w.shape[0] < 1:
            raise ValueError(f"W must be an M x N matrix with M >= 1, got {self.w.shape}")
        if not (self.lam > 0):
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if not (self.alpha > 0):
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        self.mean = np.asarray(self.mean, dtype=np.float64)
        if self.mean.shape != (self.w.shape[1],):
            raise ValueError(
                f"mean has shape {self.mean.shape}, expected ({self.w.shape[1]},)"
            )

    @property
    def m(self) -> int:
        return self.w.shape[0]

    @property
    def n(self) -> int:
        return self.w.shape[1]


class BinaryCodes:
    """Q x M codes over {0,1}, stored bit-packed (uint8 words, big-endian
    bit order within each byte)."""

    __slots__ = ("packed", "n_bits")

    def __init__(self, packed: np.ndarray, n_bits: int):
        packed = np.ascontiguousarray(np.asarray(packed, dtype=np.uint8))
        if packed.ndim != 2 or packed.shape[1] != (n_bits + 7) // 8:
            raise ValueError(
                f"packed shape {packed.shape} inconsistent with {n_bits} bits"
            )
        self.packed = packed
        self.n_bits = int(n_bits)

    @classmethod
    def from_bits(cls, bits: np.ndarray) -> "BinaryCodes":
        bits = np.asarray(bits)
        if bits.ndim != 2:
            raise ValueError(f"bits must be Q x M, got shape {bits.shape}")
        if bits.size and not np.isin(bits, (0, 1)).all():
            raise ValueError("code entries must be 0 or 1")
        return cls(np.packbits(bits.astype(np.uint8), axis=1), bits.shape[1])

    def unpack(self) -> np.ndarray:
        return np.unpackbits(self.packed, axis=1, count=self.n_bits)

    @property
    def q(self) -> int:
        return self.packed.shape[0]

    def __len__(self) -> int:
        return self.packed.shape[0]


# ---------------------------------------------------------------------------
# hashing and the sigmoid surrogate


def sigmoid(t, alpha: float = 1.0):
    """Rate-alpha logistic function (1 + exp(-alpha * t))**-1."""
    return expit(alpha * np.asarray(t, dtype=np.float64))


def sigmoid_prime(t, alpha: float = 1.0):
    """Derivative of :func:`sigmoid` with respect to t."""
    s = sigmoid(t, alpha)
    return alpha * s * (1.0 - s)


def hash_matrix(w: np.ndarray, points: np.ndarray) -> BinaryCodes:
    """Quantize points through W: bit (q, m) = (1 + sgn(w_m . x_q)) / 2.

    sgn(0) counts as +1, so a zero projection yields bit 1.
    """
    w = np.asarray(w, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64)
    if points.shape[1] != w.shape[1]:
        raise ValueError(
            f"dimension mismatch: points are {points.shape}, W is {w.shape}"
        )
    bits = (points @ w.T >= 0.0).astype(np.uint8)
    return BinaryCodes(np.packbits(bits, axis=1), w.shape[0])


def hash_codes(model: HashModel, data: Dataset) -> BinaryCodes:
    """Binary codes for a dataset already preprocessed with the model's stats."""
    if data.n != model.n:
        raise ValueError(
            f"dimension mismatch: data is {data.points.shape}, "
            f"model W is {model.w.shape}"
        )
    return hash_matrix(model.w, data.points)


def sigmoid_embed(w: np.ndarray, x: np.ndarray, alpha: float) -> np.ndarray:
    """Smooth embedding sigma_alpha(W x); every entry lies in (0, 1)."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"dimension mismatch: x is {x.shape}, W is {w.shape}")
    return sigmoid(w @ x, alpha)


def relaxed_pair_dist(w, x_i, x_j, alpha: float) -> float:
    """Squared l2 distance between the sigmoid embeddings of two points.

    This is the smooth surrogate for the Hamming distance of the quantized
    codes; it lies in [0, M].
    """
    d = sigmoid_embed(w, x_i, alpha) - sigmoid_embed(w, x_j, alpha)
    return float(d @ d)


def relaxed_pair_dists(w, points, i_idx, j_idx, alpha: float) -> np.ndarray:
    """Batched :func:`relaxed_pair_dist` over secant index arrays."""
    s = sigmoid(np.asarray(points, dtype=np.float64) @ np.asarray(w).T, alpha)
    d = s[i_idx] - s[j_idx]
    return np.einsum("ij,ij->i", d, d)


# ---------------------------------------------------------------------------
# Hamming distances on packed codes


def hamming_pair_dist(codes: BinaryCodes, i: int, j: int) -> int:
    """Popcount of the XOR of two packed rows; equals the squared l2
    distance of the unpacked codes."""
    q = codes.q
    if not (0 <= i < q and 0 <= j < q):
        raise IndexError(f"pair ({i}, {j}) out of range for {q} codes")
    return int(np.bitwise_count(codes.packed[i] ^ codes.packed[j]).sum())


def hamming_pairs(codes: BinaryCodes, i_idx, j_idx) -> np.ndarray:
    """Vectorized Hamming distances for index arrays (i_idx, j_idx)."""
    x = codes.packed[i_idx] ^ codes.packed[j_idx]
    return np.bitwise_count(x).sum(axis=1, dtype=np.int64)


def hamming_to_all(codes: BinaryCodes, i: int) -> np.ndarray:
    """Hamming distance from row i to every row (including itself)."""
    x = codes.packed ^ codes.packed[i]
    return np.bitwise_count(x).sum(axis=1, dtype=np.int64)


# ---------------------------------------------------------------------------
# secant streams


def secant_count(q: int) -> int:
    """|S(X)| = Q(Q-1)/2, exact (Python int, no overflow)."""
    if q < 2:
        raise ValueError(f"need Q >= 2, got {q}")
    return q * (q - 1) // 2


def enumerate_secants(q: int) -> Iterator[tuple[int, int]]:
    """Yield every pair (i, j) with i > j in lexicographic order,
    constant memory per step."""
    if q < 2:
        raise ValueError(f"need Q >= 2, got {q}")
    for i in range(1, q):
        for j in range(i):
            yield (i, j)


def pair_linear_index(i, j):
    """Position of pair (i, j), i > j, in the lexicographic stream."""
    i = np.asarray(i, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    return i * (i - 1) // 2 + j


def decode_pair_indices(t) -> tuple[np.ndarray, np.ndarray]:
    """Invert :func:`pair_linear_index`, vectorized.

    Float sqrt gives i up to rounding; two integer fix-up passes make it exact
    for any pair count that fits in int64.
    """
    t = np.asarray(t, dtype=np.int64)
    i = ((1.0 + np.sqrt(1.0 + 8.0 * t.astype(np.float64))) / 2.0).astype(np.int64)
    # correct downward then upward so that i(i-1)/2 <= t < i(i+1)/2
    i = np.where(i * (i - 1) // 2 > t, i - 1, i)
    i = np.where((i + 1) * i // 2 <= t, i + 1, i)
    j = t - i * (i - 1) // 2
    return i, j


def pair_distances(points: np.ndarray, i_idx, j_idx) -> np.ndarray:
    """Ambient l2 distances for the given pairs (gathered, not Q x Q)."""
    points = np.asarray(points, dtype=np.float64)
    d = points[i_idx] - points[j_idx]
    return np.sqrt(np.einsum("ij,ij->i", d, d))


def sample_pair_indices(total: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """k distinct linear pair indices drawn uniformly from [0, total).

    Rejection-based so memory stays O(k) even when total is huge; returns the
    chosen indices in ascending order.
    """
    if k >= total:
        return np.arange(total, dtype=np.int64)
    pool = np.empty(0, dtype=np.int64)
    while pool.size < k:
        need = k - pool.size
        draw = rng.integers(0, total, size=int(need * 1.3) + 16, dtype=np.int64)
        pool = np.unique(np.concatenate([pool, draw]))
    if pool.size > k:
        keep = rng.permutation(pool.size)[:k]
        pool = np.sort(pool[keep])
    return pool


def random_projection_matrix(m: int, n: int, seed: int) -> np.ndarray:
    """M x N matrix of i.i.d. standard normal entries under a fixed seed.

    Used both as the LSH projection and as the solver's W initialization, so
    the two start from identical random directions for a given seed.
    """
    if m < 1 or n < 1:
        raise ValueError(f"need M, N >= 1, got ({m}, {n})")
    rng = np.random.default_rng(seed)
    return rng.standard_normal((m, n))
