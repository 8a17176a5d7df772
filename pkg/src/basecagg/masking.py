"""Mask generation, T-private share encoding, and one-shot aggregate-mask recovery.

A user who downloads the model at round ``t_i`` draws a uniform mask ``z``,
splits it into ``U - T`` sub-masks, appends ``T`` uniform noise blocks and
evaluates the resulting polynomial at every user's point ``j``.  When the
server later needs ``sum_i w_i z_i`` for a buffer whose members downloaded in
different rounds, each surviving user combines the shares it holds *for the
matching rounds* and the server decodes the combination once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, DuplicateIndex, InsufficientResponses, InvalidParams, MissingShare
from .field import DTYPE, PrimeField


def check_code_params(N: int, U: int, T: int, D: int = 0) -> None:
    if min(N, U) < 1 or min(T, D) < 0:
        raise InvalidParams(f"invalid sizes N={N}, U={U}, T={T}, D={D}")
    if U > N - D:
        raise InvalidParams(f"need U <= N - D, got U={U}, N={N}, D={D}")
    if T >= U:
        # U == T would leave no room for the mask itself.
        raise InvalidParams(f"need T < U, got T={T}, U={U}")


def padded_length(d: int, U: int, T: int) -> int:
    k = U - T
    return k * math.ceil(d / k)


@dataclass(frozen=True)
class MaskPackage:
    """A user's mask for one download round together with its encoded shares.

    ``shares[j]`` is the share destined for user ``j`` (evaluation point ``j + 1``).
    """

    owner: int
    round: int
    d: int
    z: np.ndarray
    partitions: np.ndarray
    shares: np.ndarray
    T: int

    @property
    def U(self) -> int:
        return self.partitions.shape[0]

    @property
    def N(self) -> int:
        return self.shares.shape[0]

    @property
    def mask(self) -> np.ndarray:
        """The first ``d`` coordinates of ``z``, i.e. what is added to the update."""
        return self.z[: self.d]

    def share_for(self, j: int) -> np.ndarray:
        return self.shares[j]


def build_mask_package(
    owner: int,
    round: int,
    d: int,
    z: np.ndarray,
    noise: np.ndarray,
    N: int,
    U: int,
    T: int,
    field: PrimeField,
) -> MaskPackage:
    """Assemble a package from an explicit padded mask and noise blocks."""
    check_code_params(N, U, T)
    d_pad = padded_length(d, U, T)
    z = np.asarray(z, dtype=DTYPE)
    if z.shape != (d_pad,):
        raise DimensionMismatch(f"mask has shape {z.shape}, expected ({d_pad},)")
    block = d_pad // (U - T)
    noise = np.asarray(noise, dtype=DTYPE).reshape(T, block if T == 0 else -1)
    if noise.shape[1] != block:
        raise DimensionMismatch(f"noise blocks have length {noise.shape[1]}, expected {block}")
    partitions = np.concatenate([z.reshape(U - T, block), noise.reshape(T, block)])
    shares = field.mds_encode_all(partitions, N)
    return MaskPackage(owner, round, d, z, partitions, shares, T)


def generate_mask_package(
    owner: int,
    round: int,
    d: int,
    N: int,
    U: int,
    T: int,
    field: PrimeField,
    rng: np.random.Generator,
    D: int = 0,
) -> MaskPackage:
    """Draw a fresh uniform mask (padding coordinates included) and encode it."""
    check_code_params(N, U, T, D)
    if d < 1:
        raise InvalidParams(f"model dimension must be positive, got {d}")
    d_pad = padded_length(d, U, T)
    z = field.random(rng, d_pad)
    noise = field.random(rng, (T, d_pad // (U - T)))
    return build_mask_package(owner, round, d, z, noise, N, U, T, field)


class ShareStore:
    """Encoded shares held by one user, keyed by ``(owner, round)``."""

    def __init__(self, holder: int):
        self.holder = holder
        self._shares: dict[tuple[int, int], np.ndarray] = {}

    def put(self, owner: int, round: int, share: np.ndarray) -> None:
        key = (owner, round)
        if key in self._shares:
            raise DuplicateIndex(f"user {self.holder} already holds a share for {key}")
        self._shares[key] = share

    def get(self, owner: int, round: int) -> np.ndarray:
        try:
            return self._shares[(owner, round)]
        except KeyError:
            raise MissingShare(owner, round) from None

    def __contains__(self, key) -> bool:
        return key in self._shares

    def __len__(self) -> int:
        return len(self._shares)

    def evict_before(self, round: int) -> int:
        """Drop shares generated before ``round``; returns how many were dropped."""
        stale = [k for k in self._shares if k[1] < round]
        for k in stale:
            del self._shares[k]
        return len(stale)


@dataclass(frozen=True)
class RecoveryRequest:
    """What the server broadcasts when the buffer is full.

    ``members`` lists ``(owner, t_i)`` in buffer order and ``weights`` the
    quantized staleness weight the server drew for each member.
    """

    round: int
    members: tuple[tuple[int, int], ...]
    weights: tuple[int, ...]
    c_g: int

    @property
    def staleness(self) -> tuple[int, ...]:
        return tuple(self.round - t_i for _, t_i in self.members)


def aggregate_encoded_shares(store: ShareStore, req: RecoveryRequest, field: PrimeField) -> np.ndarray:
    """Weighted sum of this user's shares for every buffered ``(owner, t_i)``."""
    vectors = [store.get(owner, t_i) for owner, t_i in req.members]
    return field.weighted_sum(vectors, list(req.weights))


def recover_aggregate_mask(
    responses: Iterable[tuple[int, np.ndarray]],
    U: int,
    T: int,
    d: int,
    field: PrimeField,
) -> np.ndarray:
    """Decode ``sum_i w_i z_i`` from the first ``U`` responses ``(user_id, vector)``.

    ``user_id`` is zero-based; it is evaluated at ``user_id + 1``.
    """
    chosen: list[tuple[int, np.ndarray]] = []
    seen: set[int] = set()
    for j, v in responses:
        if j in seen:
            continue
        seen.add(j)
        chosen.append((j + 1, v))
        if len(chosen) == U:
            break
    if len(chosen) < U:
        raise InsufficientResponses(len(chosen), U)
    blocks = field.mds_decode(chosen)
    return blocks[: U - T].reshape(-1)[:d]


# -- negative control: round-stamped pairwise masks -------------------------


def _pair_prg(seed: int, a: int, b: int, round: int, dim: int, field: PrimeField) -> np.ndarray:
    rng = np.random.default_rng([seed, a, b, round])
    return field.random(rng, dim)


def pairwise_mask(
    user: int, round: int, peers: Sequence[int], dim: int, field: PrimeField, seed: int = 0
) -> np.ndarray:
    """Pairwise-seed mask of ``user`` with seeds stamped by its own download round.

    Adds ``PRG(a_{user,j}^{(round)})`` for peers ``j > user`` and subtracts
    ``PRG(a_{j,user}^{(round)})`` for peers ``j < user``.
    """
    acc = field.zeros(dim)
    for j in peers:
        if j == user:
            continue
        lo, hi = min(user, j), max(user, j)
        r = _pair_prg(seed, lo, hi, round, dim, field)
        acc = field.vadd(acc, r) if user < j else field.vsub(acc, r)
    return acc


def pairwise_residue(
    members: Sequence[tuple[int, int]], dim: int, field: PrimeField, seed: int = 0
) -> np.ndarray:
    """What is left after summing the pairwise masks of a buffer.

    Zero when every member used the same round; generally nonzero otherwise.
    """
    owners = [o for o, _ in members]
    if len(set(owners)) != len(owners):
        raise DuplicateIndex("pairwise masking needs distinct users")
    acc = field.zeros(dim)
    for owner, t_i in members:
        acc = field.vadd(acc, pairwise_mask(owner, t_i, owners, dim, field, seed))
    return acc
