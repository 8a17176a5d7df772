"""Arithmetic over a prime field F_q and the (N, U) Vandermonde MDS code.

Field elements are plain Python ints in ``[0, q)``; field vectors are
``numpy.uint64`` arrays.  Because ``q < 2**32`` every product of two reduced
elements fits in 64 bits, so vector arithmetic reduces after each multiply
and never overflows.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, DuplicateIndex, InvalidParams, ZeroInverse

# Largest prime below 2**32.
DEFAULT_Q = 2**32 - 5

DTYPE = np.uint64


@lru_cache(maxsize=64)
def is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return False
        f += 2
    return True


@dataclass(frozen=True)
class PrimeField:
    """The field of integers modulo a prime ``q < 2**32``."""

    q: int = DEFAULT_Q

    def __post_init__(self):
        if not 2 <= self.q < 2**32:
            raise InvalidParams(f"q must lie in [2, 2**32), got {self.q}")
        if not is_prime(self.q):
            raise InvalidParams(f"q={self.q} is not prime")

    # -- scalars ---------------------------------------------------------

    def element(self, x: int) -> int:
        return int(x) % self.q

    def add(self, a: int, b: int) -> int:
        return (a + b) % self.q

    def sub(self, a: int, b: int) -> int:
        return (a - b) % self.q

    def neg(self, a: int) -> int:
        return (-a) % self.q

    def mul(self, a: int, b: int) -> int:
        return (a * b) % self.q

    def inv(self, a: int) -> int:
        a %= self.q
        if a == 0:
            raise ZeroInverse("0 has no inverse")
        return pow(a, self.q - 2, self.q)

    # -- vectors ---------------------------------------------------------

    def vector(self, values) -> np.ndarray:
        """Reduce integers (possibly negative, possibly Python bigints) into a field vector."""
        arr = np.asarray(values)
        if arr.dtype == object or arr.dtype.kind == "i":
            arr = np.mod(arr, self.q)
        elif arr.dtype.kind == "u":
            arr = arr % np.uint64(self.q) if arr.size and arr.max() >= self.q else arr
        else:
            raise TypeError(f"cannot build a field vector from dtype {arr.dtype}")
        return arr.astype(DTYPE)

    def zeros(self, shape) -> np.ndarray:
        return np.zeros(shape, dtype=DTYPE)

    def random(self, rng: np.random.Generator, shape) -> np.ndarray:
        return rng.integers(0, self.q, size=shape, dtype=DTYPE)

    def vadd(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return (a + b) % DTYPE(self.q)

    def vsub(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        q = DTYPE(self.q)
        return (a + (q - b)) % q

    def scale(self, v: np.ndarray, w: int) -> np.ndarray:
        return (v * DTYPE(w % self.q)) % DTYPE(self.q)

    def weighted_sum(self, vectors: Sequence[np.ndarray], weights: Sequence[int]) -> np.ndarray:
        """Return sum_i weights[i] * vectors[i], accumulated in list order."""
        if len(vectors) != len(weights):
            raise DimensionMismatch(f"{len(vectors)} vectors but {len(weights)} weights")
        if not vectors:
            raise DimensionMismatch("weighted_sum of an empty sequence")
        acc = self.zeros(np.shape(vectors[0]))
        for v, w in zip(vectors, weights):
            if np.shape(v) != acc.shape:
                raise DimensionMismatch(f"shape {np.shape(v)} != {acc.shape}")
            acc = self.vadd(acc, self.scale(v, w))
        return acc

    # -- MDS code ----------------------------------------------------------

    def vandermonde(self, U: int, N: int) -> np.ndarray:
        """U x N matrix with entry (r, j-1) = j**r mod q for j in 1..N."""
        if N >= self.q:
            raise InvalidParams(f"need N < q for distinct nonzero points (N={N}, q={self.q})")
        j = np.arange(1, N + 1, dtype=object)
        rows = [np.mod(j**r, self.q) for r in range(U)]
        return np.array(rows, dtype=DTYPE).reshape(U, N)

    def mds_encode(self, partitions, j: int) -> np.ndarray:
        """Evaluate the partition polynomial at point ``j``: sum_r partitions[r] * j**r."""
        parts = _stack(partitions)
        if not 1 <= j < self.q:
            raise InvalidParams(f"evaluation point {j} must be a nonzero field element")
        q = DTYPE(self.q)
        jj = DTYPE(j)
        acc = np.zeros(parts.shape[1:], dtype=DTYPE)
        for r in range(parts.shape[0] - 1, -1, -1):
            acc = (acc * jj + parts[r]) % q
        return acc

    def mds_encode_all(self, partitions, N: int) -> np.ndarray:
        """Shares for users 1..N as an array of shape (N, *partition_shape)."""
        parts = _stack(partitions)
        if N >= self.q:
            raise InvalidParams(f"need N < q for distinct nonzero points (N={N}, q={self.q})")
        q = DTYPE(self.q)
        tail = (1,) * (parts.ndim - 1)
        jj = np.arange(1, N + 1, dtype=DTYPE).reshape((N,) + tail)
        acc = np.zeros((N,) + parts.shape[1:], dtype=DTYPE)
        for r in range(parts.shape[0] - 1, -1, -1):
            acc = (acc * jj + parts[r]) % q
        return acc

    def mds_decode(self, shares: Iterable[tuple[int, np.ndarray]]) -> np.ndarray:
        """Recover the U partitions from U shares ``(j, vector)``.

        Returns an array of shape (U, L).  Solves the Vandermonde system by
        Gauss-Jordan elimination over F_q.
        """
        shares = list(shares)
        if not shares:
            raise DimensionMismatch("no shares to decode")
        points = [int(j) for j, _ in shares]
        if len(set(points)) != len(points):
            raise DuplicateIndex(f"duplicate evaluation points in {points}")
        for j in points:
            if not 1 <= j < self.q:
                raise InvalidParams(f"evaluation point {j} must be a nonzero field element")
        rhs = _stack([v for _, v in shares])
        U = len(points)
        q = self.q
        A = np.array([[pow(j, r, q) for r in range(U)] for j in points], dtype=DTYPE)
        flat = rhs.reshape(U, -1)
        return self._solve(A, flat).reshape(rhs.shape)

    def _solve(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        q = DTYPE(self.q)
        n = A.shape[0]
        M = np.concatenate([A, B], axis=1).astype(DTYPE) % q
        for col in range(n):
            nz = np.nonzero(M[col:, col])[0]
            if nz.size == 0:
                raise ZeroInverse("singular system")
            p = col + int(nz[0])
            if p != col:
                M[[col, p]] = M[[p, col]]
            M[col] = (M[col] * DTYPE(self.inv(int(M[col, col])))) % q
            f = M[:, col].copy()
            f[col] = 0
            M = (M + ((q - f)[:, None] * M[col][None, :]) % q) % q
        return M[:, n:]


def _stack(partitions) -> np.ndarray:
    if isinstance(partitions, np.ndarray):
        return partitions.astype(DTYPE, copy=False)
    parts = [np.asarray(p) for p in partitions]
    if not parts:
        raise DimensionMismatch("no partitions")
    shape = parts[0].shape
    for p in parts:
        if p.shape != shape:
            raise DimensionMismatch(f"partition shapes differ: {p.shape} vs {shape}")
    return np.stack(parts).astype(DTYPE, copy=False)


def split_blocks(v: np.ndarray, n_blocks: int) -> np.ndarray:
    """Reshape a vector whose length is a multiple of ``n_blocks`` into (n_blocks, len/n_blocks)."""
    if v.shape[0] % n_blocks:
        raise DimensionMismatch(f"length {v.shape[0]} not divisible by {n_blocks}")
    return v.reshape(n_blocks, -1)
