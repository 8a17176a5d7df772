"""Moving real-valued updates and staleness weights into F_q and back.

Stochastic rounding to a grid of spacing ``1/c`` keeps the rounded value
unbiased.  Signed integers are embedded with a two's-complement style map
that splits the field at ``(q - 1) / 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParams, NonFinite, OutOfRange, ZeroWeightSum
from .field import DTYPE, PrimeField


@dataclass(frozen=True)
class QuantParams:
    """Quantization levels for local updates (``c_l``) and staleness weights (``c_g``)."""

    c_l: int = 2**16
    c_g: int = 2**6

    def __post_init__(self):
        for name in ("c_l", "c_g"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise InvalidParams(f"{name} must be a positive integer, got {v}")


@dataclass(frozen=True)
class StalenessFn:
    """Staleness compensation ``s(tau)`` with ``s(0) = 1``.

    ``kind="constant"`` gives ``s = 1``; ``kind="poly"`` gives
    ``(1 + tau) ** -alpha``.
    """

    kind: str = "poly"
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "poly"):
            raise InvalidParams(f"unknown staleness kind {self.kind!r}")
        if not self.alpha >= 0:
            raise InvalidParams(f"alpha must be nonnegative, got {self.alpha}")

    @classmethod
    def constant(cls) -> "StalenessFn":
        return cls("constant", 0.0)

    @classmethod
    def poly(cls, alpha: float = 1.0) -> "StalenessFn":
        return cls("poly", alpha)

    def __call__(self, tau: int) -> float:
        return staleness_weight(self, tau)


def staleness_weight(fn: StalenessFn, tau: int) -> float:
    if tau < 0:
        raise InvalidParams(f"staleness must be nonnegative, got {tau}")
    if fn.kind == "constant":
        return 1.0
    return float((1.0 + tau) ** (-fn.alpha))


def stochastic_round_int(x, c: int, rng: np.random.Generator):
    """Return ``c * Q_c(x)``, the integer numerator of the stochastic rounding.

    Rounds ``c*x`` down with probability ``1 - frac(c*x)`` and up otherwise,
    using the mathematical floor so negative inputs stay unbiased.  Exactly
    one uniform draw is consumed per coordinate.
    """
    scalar = np.isscalar(x)
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFinite("stochastic rounding of a non-finite value")
    cx = arr * c
    lo = np.floor(cx)
    up = rng.random(size=cx.shape) < (cx - lo)
    out = (lo + up).astype(np.int64)
    return int(out) if scalar else out


def stochastic_round(x, c: int, rng: np.random.Generator):
    """Unbiased stochastic rounding of ``x`` onto the grid ``Z / c``."""
    k = stochastic_round_int(x, c, rng)
    return k / c if np.isscalar(k) else k.astype(np.float64) / c


def _half(q: int) -> int:
    return (q - 1) // 2


def map_to_field(x, q: int, strict: bool = True):
    """Embed signed integers into F_q: ``x`` if ``x >= 0`` else ``q + x``.

    With ``strict`` (the default) values with ``|x| >= (q-1)/2`` raise
    :class:`OutOfRange`; otherwise they wrap modulo ``q``.
    """
    half = _half(q)
    if np.isscalar(x):
        x = int(x)
        if strict and abs(x) >= half:
            raise OutOfRange(f"|{x}| >= (q-1)/2 = {half}")
        return x % q
    arr = np.asarray(x, dtype=np.int64)
    if strict:
        bad = np.nonzero(np.abs(arr) >= half)[0]
        if bad.size:
            i = int(bad[0])
            raise OutOfRange(f"coordinate {i}: |{arr[i]}| >= (q-1)/2 = {half}", index=i)
    return np.mod(arr, q).astype(DTYPE)


def demap_from_field(y, q: int):
    """Inverse of :func:`map_to_field`: values at or above ``(q-1)/2`` are negative."""
    half = _half(q)
    if np.isscalar(y):
        y = int(y)
        return y if y < half else y - q
    arr = np.asarray(y).astype(np.int64)
    return np.where(arr < half, arr, arr - q)


def wraparound_limit(q: int, K: int, c_g: int) -> int:
    """Largest |c_l * Q(delta)| for which a K-member weighted sum cannot wrap."""
    return (_half(q) - 1) // (K * c_g)


def quantize_update(
    delta,
    params: QuantParams,
    field: PrimeField,
    rng: np.random.Generator,
    strict: bool = True,
) -> np.ndarray:
    """Quantize a real update into F_q, elementwise ``phi(c_l * Q_{c_l}(delta))``."""
    ints = stochastic_round_int(np.asarray(delta, dtype=np.float64), params.c_l, rng)
    return map_to_field(ints, field.q, strict=strict)


def quantized_staleness(fn: StalenessFn, tau: int, c_g: int, rng: np.random.Generator) -> int:
    """``c_g * Q_{c_g}(s(tau))`` as a field element in ``[0, c_g]``."""
    return stochastic_round_int(staleness_weight(fn, tau), c_g, rng)


def dequantize_aggregate(
    agg: np.ndarray, weight_sum: int, params: QuantParams, field: PrimeField
) -> np.ndarray:
    """Real-domain global update from the unmasked weighted field aggregate.

    ``weight_sum`` is the field sum of the quantized staleness weights, so it
    already carries the ``c_g`` factor; the result is
    ``demap(agg) / (c_l * demap(weight_sum))``.
    """
    w = demap_from_field(int(weight_sum), field.q)
    if w == 0:
        raise ZeroWeightSum("quantized staleness weights sum to zero")
    num = demap_from_field(agg, field.q).astype(np.float64)
    return num / (params.c_l * w)


def bracket(x: float, c: int) -> tuple[float, float]:
    """The two grid points of spacing 1/c that bracket ``x``."""
    lo = math.floor(x * c)
    return lo / c, (lo + 1) / c
