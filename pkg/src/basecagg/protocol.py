"""User and server state machines for buffered asynchronous secure aggregation.

Users download the global model, distribute encoded shares of a fresh mask,
train locally, and upload ``phi(c_l * Q(delta)) + z``.  The server buffers
masked updates; once ``K`` are held it broadcasts a :class:`RecoveryRequest`,
collects aggregated shares from surviving users, removes the aggregate mask
in one decode, and takes a global step.

:class:`FedBuffServer` runs the same buffer discipline on plaintext real
updates and serves as the unquantized baseline.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from . import quantize as qz
from .errors import BASecAggError, InvalidParams, OutOfRange, StalenessExceeded
from .field import DEFAULT_Q, PrimeField
from .masking import (
    MaskPackage,
    RecoveryRequest,
    ShareStore,
    aggregate_encoded_shares,
    check_code_params,
    generate_mask_package,
    recover_aggregate_mask,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

GradFn = Callable[[np.ndarray, np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class ProtocolParams:
    N: int
    K: int
    U: int
    T: int = 0
    D: int = 0
    eta_l: float = 0.01
    eta_g: float = 1.0
    E: int = 1
    quant: qz.QuantParams = qz.QuantParams()
    staleness: qz.StalenessFn = qz.StalenessFn.poly(1.0)
    tau_max: int = 10
    q: int = DEFAULT_Q
    # Refuse uploads whose K-member weighted sum could wrap around q.
    guard: bool = True

    def __post_init__(self):
        check_code_params(self.N, self.U, self.T, self.D)
        if not 1 <= self.K <= self.N:
            raise InvalidParams(f"need 1 <= K <= N, got K={self.K}, N={self.N}")
        if self.E < 1 or self.tau_max < 0:
            raise InvalidParams("need E >= 1 and tau_max >= 0")
        if self.eta_l <= 0 or self.eta_g <= 0:
            raise InvalidParams("learning rates must be positive")

    @property
    def field(self) -> PrimeField:
        return PrimeField(self.q)


# -- messages ------------------------------------------------------------------


@dataclass(frozen=True)
class DownloadModel:
    round: int
    model: np.ndarray


@dataclass(frozen=True)
class Share:
    owner: int
    round: int
    recipient: int
    share: np.ndarray


@dataclass(frozen=True)
class MaskedUpdate:
    """The ``Upload`` message: masked quantized update stamped with its download round."""

    owner: int
    t_i: int
    payload: np.ndarray


@dataclass(frozen=True)
class RecoveryResponse:
    j: int
    vector: np.ndarray


_MESSAGE_TYPES = {
    "DownloadModel": DownloadModel,
    "Share": Share,
    "Upload": MaskedUpdate,
    "RecoveryRequest": RecoveryRequest,
    "RecoveryResponse": RecoveryResponse,
}
_TYPE_NAMES = {cls: name for name, cls in _MESSAGE_TYPES.items()}
_ARRAY_FIELDS = {"model": np.float64, "share": np.uint64, "payload": np.uint64, "vector": np.uint64}


def encode_message(msg) -> dict:
    """Plain-dict wire form of a protocol message (JSON-serialisable)."""
    out = {"v": SCHEMA_VERSION, "type": _TYPE_NAMES[type(msg)]}
    for name in msg.__dataclass_fields__:
        value = getattr(msg, name)
        if isinstance(value, np.ndarray):
            value = value.tolist()
        elif isinstance(value, tuple):
            value = [list(v) if isinstance(v, tuple) else v for v in value]
        out[name] = value
    return out


def decode_message(data: dict):
    if data.get("v") != SCHEMA_VERSION:
        raise BASecAggError(f"unsupported message schema version {data.get('v')!r}")
    cls = _MESSAGE_TYPES[data["type"]]
    kwargs = {}
    for name in cls.__dataclass_fields__:
        value = data[name]
        if name in _ARRAY_FIELDS:
            value = np.asarray(value, dtype=_ARRAY_FIELDS[name])
        elif name == "members":
            value = tuple(tuple(m) for m in value)
        elif name == "weights":
            value = tuple(value)
        kwargs[name] = value
    return cls(**kwargs)


# -- local training --------------------------------------------------------------


def local_train(x: np.ndarray, grad_fn: GradFn, eta_l: float, E: int, rng: np.random.Generator) -> np.ndarray:
    """Run ``E`` SGD steps from ``x`` and return ``x - x_E``."""
    x0 = np.array(x, dtype=np.float64)
    xe = x0.copy()
    for _ in range(E):
        xe = xe - eta_l * grad_fn(xe, rng)
    return x0 - xe


# -- user ----------------------------------------------------------------------


class User:
    """One protocol participant.

    A user may hold several outstanding downloads, each keyed by its round;
    each is consumed by exactly one upload.
    """

    def __init__(self, uid: int, params: ProtocolParams):
        self.id = uid
        self.params = params
        self.field = params.field
        self.store = ShareStore(uid)
        self.pending: dict[int, tuple[np.ndarray, MaskPackage]] = {}
        self.overflow_warnings = 0

    def download(self, msg: DownloadModel, rng: np.random.Generator) -> list[Share]:
        """Cache the model, draw a mask for this round, and return its shares for all users."""
        if msg.round in self.pending:
            raise BASecAggError(f"user {self.id} already downloaded round {msg.round}")
        p = self.params
        pkg = generate_mask_package(self.id, msg.round, len(msg.model), p.N, p.U, p.T, self.field, rng, D=p.D)
        self.pending[msg.round] = (np.array(msg.model, dtype=np.float64), pkg)
        return [Share(self.id, msg.round, j, pkg.shares[j]) for j in range(p.N)]

    def receive_share(self, msg: Share) -> None:
        if msg.recipient != self.id:
            raise BASecAggError(f"share for user {msg.recipient} delivered to {self.id}")
        self.store.put(msg.owner, msg.round, msg.share)

    def train(self, t_i: int, grad_fn: GradFn, rng: np.random.Generator) -> np.ndarray:
        x, _ = self.pending[t_i]
        return local_train(x, grad_fn, self.params.eta_l, self.params.E, rng)

    def upload(self, t_i: int, delta: np.ndarray, rng: np.random.Generator) -> MaskedUpdate:
        """Quantize, mask with the round-``t_i`` mask, and release the download."""
        _, pkg = self.pending.pop(t_i)
        return upload(self.id, t_i, delta, pkg, self.params, rng, self)

    def respond_recovery(self, req: RecoveryRequest) -> RecoveryResponse:
        return RecoveryResponse(self.id, aggregate_encoded_shares(self.store, req, self.field))

    def evict_before(self, round: int) -> int:
        return self.store.evict_before(round)


def upload(
    owner: int,
    t_i: int,
    delta: np.ndarray,
    pkg: MaskPackage,
    params: ProtocolParams,
    rng: np.random.Generator,
    user: Optional[User] = None,
) -> MaskedUpdate:
    """Build ``phi(c_l * Q_{c_l}(delta)) + z`` for the given mask package."""
    field = params.field
    ints = qz.stochastic_round_int(np.asarray(delta, dtype=np.float64), params.quant.c_l, rng)
    limit = qz.wraparound_limit(field.q, params.K, params.quant.c_g)
    over = np.nonzero(np.abs(ints) > limit)[0]
    if over.size:
        if params.guard:
            i = int(over[0])
            raise OutOfRange(
                f"coordinate {i}: |{ints[i]}| exceeds the wrap-around limit {limit}", index=i
            )
        if user is not None:
            user.overflow_warnings += int(over.size)
    quantized = qz.map_to_field(ints, field.q, strict=params.guard)
    if quantized.shape != pkg.mask.shape:
        raise InvalidParams(f"update length {quantized.shape[0]} != mask length {pkg.d}")
    return MaskedUpdate(owner, t_i, field.vadd(quantized, pkg.mask))


# -- servers ---------------------------------------------------------------------


class _BufferedServer:
    def __init__(self, params: ProtocolParams, x0: np.ndarray):
        self.params = params
        self.round = 0
        self.x = np.array(x0, dtype=np.float64)
        self.buffer: list = []
        self.last_update: Optional[np.ndarray] = None

    def download(self) -> DownloadModel:
        return DownloadModel(self.round, self.x.copy())

    def _check_staleness(self, t_i: int) -> None:
        tau = self.round - t_i
        if tau < 0 or tau > self.params.tau_max:
            raise StalenessExceeded(
                f"update from round {t_i} has staleness {tau} at round {self.round} "
                f"(tau_max={self.params.tau_max})"
            )


class Server(_BufferedServer):
    """Secure-aggregation server.  Never sees an unmasked individual update."""

    def __init__(self, params: ProtocolParams, x0: np.ndarray, rng: np.random.Generator):
        super().__init__(params, x0)
        self.field = params.field
        self.rng = rng
        self.request: Optional[RecoveryRequest] = None
        # Unmasked weighted field aggregate of the last flushed buffer.
        self.last_aggregate: Optional[np.ndarray] = None

    def receive(self, update: MaskedUpdate) -> Optional[RecoveryRequest]:
        """Buffer an upload; return the recovery request once the buffer is full."""
        if self.request is not None:
            raise BASecAggError("buffer is frozen awaiting recovery")
        self._check_staleness(update.t_i)
        self.buffer.append(update)
        if len(self.buffer) < self.params.K:
            return None
        p = self.params
        weights = tuple(
            qz.quantized_staleness(p.staleness, self.round - u.t_i, p.quant.c_g, self.rng)
            for u in self.buffer
        )
        self.request = RecoveryRequest(
            self.round, tuple((u.owner, u.t_i) for u in self.buffer), weights, p.quant.c_g
        )
        return self.request

    def aggregate_payloads(self) -> np.ndarray:
        return self.field.weighted_sum([u.payload for u in self.buffer], list(self.request.weights))

    def finalize(self, responses: Iterable[RecoveryResponse]) -> np.ndarray:
        """Unmask the weighted aggregate and apply the global step.

        Raises :class:`InsufficientResponses` with the buffer and request left
        intact so the caller can solicit new responders.
        """
        if self.request is None:
            raise BASecAggError("no recovery in progress")
        p = self.params
        d = self.x.shape[0]
        mask = recover_aggregate_mask(((r.j, r.vector) for r in responses), p.U, p.T, d, self.field)
        unmasked = self.field.vsub(self.aggregate_payloads(), mask)
        weight_sum = sum(self.request.weights) % self.field.q
        g = qz.dequantize_aggregate(unmasked, weight_sum, p.quant, self.field)
        self.x = self.x - p.eta_g * g
        self.last_aggregate = unmasked
        self.last_update = g
        self.round += 1
        self.buffer = []
        self.request = None
        return self.x


class FedBuffServer(_BufferedServer):
    """Plaintext buffered asynchronous aggregation in the real domain."""

    def receive(self, owner: int, t_i: int, delta: np.ndarray) -> bool:
        """Buffer a real update; return True when the buffer is full."""
        self._check_staleness(t_i)
        self.buffer.append((owner, t_i, np.asarray(delta, dtype=np.float64)))
        return len(self.buffer) >= self.params.K

    def finalize(self) -> np.ndarray:
        s = self.params.staleness
        weights = [s(self.round - t_i) for _, t_i, _ in self.buffer]
        acc = np.zeros_like(self.x)
        for w, (_, _, delta) in zip(weights, self.buffer):
            acc = acc + w * delta
        g = acc / sum(weights)
        self.x = self.x - self.params.eta_g * g
        self.last_update = g
        self.round += 1
        self.buffer = []
        return self.x


def run_round(
    server: Server,
    users: dict[int, User],
    uploads: Iterable[MaskedUpdate],
    responders: Iterable[int],
) -> Optional[np.ndarray]:
    """Deliver uploads and, once the buffer fills, collect recovery responses and finalize.

    Returns the new model, or None when the buffer did not fill.
    """
    req = None
    for u in uploads:
        req = server.receive(u)
    if req is None:
        return None
    responses = [users[j].respond_recovery(req) for j in responders]
    return server.finalize(responses)
