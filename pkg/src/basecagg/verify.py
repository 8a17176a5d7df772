"""Property batteries with independent oracles.

Each battery returns a :class:`PropertyResult`.  They back the ``verify``
command and the acceptance suite, and deliberately recompute expected values
by a different route than the code under test (Python big integers, exact
rationals, exhaustive enumeration).
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from . import quantize as qz
from .field import DEFAULT_Q, PrimeField
from .errors import ZeroWeightSum
from .masking import (
    RecoveryRequest,
    ShareStore,
    aggregate_encoded_shares,
    build_mask_package,
    generate_mask_package,
    pairwise_residue,
    recover_aggregate_mask,
)
from .protocol import DownloadModel, ProtocolParams, RecoveryResponse, Server, User

FAULTS = (None, "corrupt_share")


@dataclass
class PropertyResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


# -- T-privacy by enumeration ------------------------------------------------------


def privacy_enumeration(q: int = 11, weights: tuple[int, int] = (1, 1), colluder: int = 0) -> tuple[float, bool]:
    """Exact conditional mutual information between two users' updates and the adversary's view.

    Setting: N=4, U=3, T=1, d=1 over F_q.  Users A and B are buffered with
    masks from different rounds; ``colluder`` (one user, i.e. T=1) pools its
    shares with the server, which sees both payloads and the aggregated share
    of every user.  For every aggregate value the view histogram is tabulated
    over all ``q**6`` mask/noise draws for each update pair consistent with
    that aggregate.

    Returns ``(mutual_information_bits, histograms_identical)``.
    """
    N = 4  # U=3 gives three partitions (two mask pieces, one noise block), T=1
    field = PrimeField(q)
    wA, wB = weights
    grid = np.indices((q,) * 6).reshape(6, -1).astype(np.uint64)
    zA0, padA, nA, zB0, padB, nB = grid
    # Each column of the enumeration is one independent draw; encode them all at once.
    sharesA = field.mds_encode_all(np.stack([zA0, padA, nA]), N)
    sharesB = field.mds_encode_all(np.stack([zB0, padB, nB]), N)
    responses = [field.weighted_sum([sharesA[j], sharesB[j]], [wA, wB]) for j in range(N)]
    fixed = [sharesA[colluder], sharesB[colluder], *responses]
    base = np.zeros(grid.shape[1], dtype=np.int64)
    for v in fixed:
        base = base * q + v.astype(np.int64)

    total = 0.0
    identical = True
    n_draws = grid.shape[1]
    for s in range(q):
        pairs = [(a, b) for a in range(q) for b in range(q) if (wA * a + wB * b) % q == s]
        hists = []
        for a, b in pairs:
            yA = (zA0.astype(np.int64) + a) % q
            yB = (zB0.astype(np.int64) + b) % q
            code = (base * q + yA) * q + yB
            vals, counts = np.unique(code, return_counts=True)
            hists.append((vals, counts))
        ref_vals, ref_counts = hists[0]
        pooled: Counter = Counter()
        for vals, counts in hists:
            if not (np.array_equal(vals, ref_vals) and np.array_equal(counts, ref_counts)):
                identical = False
            pooled.update(dict(zip(vals.tolist(), counts.tolist())))
        # I(Delta; V | S=s) with the pairs equally likely given s.
        mi = 0.0
        for vals, counts in hists:
            for v, c in zip(vals.tolist(), counts.tolist()):
                p_v_given_pair = c / n_draws
                p_v = pooled[v] / (n_draws * len(hists))
                if p_v_given_pair != p_v:
                    mi += p_v_given_pair / len(hists) * math.log2(p_v_given_pair / p_v)
        total += mi / q
    return total, identical


PRIVACY_CASES = (((3, 5), 2), ((1, 1), 0))


def privacy_battery(cases=PRIVACY_CASES[:1]) -> PropertyResult:
    """Each case takes roughly 25 s on one core."""
    results = [privacy_enumeration(11, w, c) for w, c in cases]
    mi = max(r[0] for r in results)
    ok = all(r[1] for r in results) and mi == 0.0
    return PropertyResult("t_privacy_enumeration", ok, f"mutual information = {mi} bits")


# -- MDS battery --------------------------------------------------------------------


def mds_battery(seed: int = 0, q: int = DEFAULT_Q) -> PropertyResult:
    field = PrimeField(q)
    rng = np.random.default_rng(seed)
    checked = 0
    for N in range(1, 7):
        for U in range(1, N + 1):
            parts = field.random(rng, (U, 3))
            shares = field.mds_encode_all(parts, N)
            for S in itertools.combinations(range(1, N + 1), U):
                if not np.array_equal(field.mds_decode([(j, shares[j - 1]) for j in S]), parts):
                    return PropertyResult("mds_round_trip", False, f"N={N} U={U} subset {S}")
                checked += 1
    N, U = 100, 40
    parts = field.random(rng, (U, 5))
    shares = field.mds_encode_all(parts, N)
    for _ in range(20):
        S = rng.choice(N, size=U, replace=False) + 1
        if not np.array_equal(field.mds_decode([(int(j), shares[j - 1]) for j in S]), parts):
            return PropertyResult("mds_round_trip", False, f"N=100 U=40 subset {sorted(S)}")
        checked += 1
    return PropertyResult("mds_round_trip", True, f"{checked} subset decodes")


def commutativity_battery(trials: int = 50, seed: int = 1, q: int = DEFAULT_Q) -> PropertyResult:
    """Weighted aggregation of cross-round shares decodes to the weighted mask sum."""
    field = PrimeField(q)
    rng = np.random.default_rng(seed)
    for trial in range(trials):
        N = int(rng.integers(2, 13))
        U = int(rng.integers(1, N + 1))
        T = int(rng.integers(0, U))
        d = int(rng.integers(1, 10))
        K = int(rng.integers(1, 8))
        members = list({(int(rng.integers(0, N)), int(rng.integers(0, 11))) for _ in range(K)})
        pkgs = [generate_mask_package(o, t, d, N, U, T, field, rng) for o, t in members]
        weights = [int(w) for w in rng.integers(0, q, size=len(members))]
        stores = [ShareStore(j) for j in range(N)]
        for p in pkgs:
            for j in range(N):
                stores[j].put(p.owner, p.round, p.shares[j])
        req = RecoveryRequest(11, tuple(members), tuple(weights), 64)
        order = rng.permutation(N)
        resp = [(int(j), aggregate_encoded_shares(stores[j], req, field)) for j in order]
        got = recover_aggregate_mask(resp, U, T, d, field).tolist()
        expect = [sum(w * int(p.mask[k]) for w, p in zip(weights, pkgs)) % q for k in range(d)]
        if got != expect:
            return PropertyResult("cross_round_commutativity", False, f"trial {trial}")
    return PropertyResult("cross_round_commutativity", True, f"{trials} random buffers")


# -- quantization statistics ----------------------------------------------------------


SPOT_VALUES = tuple(float(v) for v in np.round(np.linspace(-2.37, 2.41, 18), 6)) + (0.25, -1.5)
LEVELS = (4, 2**6, 2**16)


def exact_rounding_moments(x: float, c: int) -> tuple[float, float]:
    """Variance and fourth central moment of Q_c(x), from the two-point law."""
    p = x * c - math.floor(x * c)
    var = (0.25 - (p - 0.5) ** 2) / c**2
    mu4 = p * (1 - p) * (1 - 3 * p + 3 * p * p) / c**4
    return var, mu4


def quantization_battery(M: int = 100_000, seed: int = 2) -> list[PropertyResult]:
    rng = np.random.default_rng(seed)
    worst = {"unbiased": 0.0, "var_bound": 0.0, "var_exact": 0.0}
    fails = {k: [] for k in worst}
    for c in LEVELS:
        for x in SPOT_VALUES:
            k = qz.stochastic_round_int(np.full(M, x), c, rng)
            # Work with integer numerators to keep precision at large c.
            lo = math.floor(x * c)
            bits = (k - lo).astype(np.float64)
            p = x * c - lo
            mean_err = (bits.mean() - p) / c
            emp_var = bits.var() / c**2
            var, mu4 = exact_rounding_moments(x, c)
            tol_mean = 4 * math.sqrt(emp_var / M)
            if abs(mean_err) > tol_mean and not (emp_var == 0 and abs(mean_err) <= 1e-15 * max(1.0, abs(x))):
                fails["unbiased"].append((c, x))
            worst["unbiased"] = max(worst["unbiased"], abs(mean_err) / tol_mean if tol_mean else 0.0)
            bound = 1 / (4 * c * c) * 1.05
            if emp_var > bound:
                fails["var_bound"].append((c, x))
            worst["var_bound"] = max(worst["var_bound"], emp_var / bound)
            tol_var = 5 * math.sqrt(max(mu4 - var * var, 0.0) / M) + 1e-15 / c**2
            if abs(emp_var - var) > tol_var:
                fails["var_exact"].append((c, x))
            worst["var_exact"] = max(worst["var_exact"], abs(emp_var - var) / tol_var)
    n = len(LEVELS) * len(SPOT_VALUES)
    return [
        PropertyResult("rounding_unbiased", not fails["unbiased"],
                       f"{n} (c, x) cases, worst |mean-x|/(4 sd) = {worst['unbiased']:.3f}, fails={fails['unbiased']}"),
        PropertyResult("rounding_variance_bound", not fails["var_bound"],
                       f"worst var/(1.05/(4c^2)) = {worst['var_bound']:.3f}, fails={fails['var_bound']}"),
        PropertyResult("rounding_variance_exact", not fails["var_exact"],
                       f"worst |var-exact|/tol = {worst['var_exact']:.3f}, fails={fails['var_exact']}"),
    ]


# -- end-to-end exactness ---------------------------------------------------------------


@dataclass
class TrialOutcome:
    field_exact: bool
    real_rel_err: float
    quant_replay: bool


def _random_params(rng) -> tuple[ProtocolParams, int]:
    N = int(rng.integers(2, 21))
    D = int(rng.integers(0, N))
    U = int(rng.integers(1, N - D + 1))
    T = int(rng.integers(0, U))
    K = int(rng.integers(1, N + 1))
    c_l = 2 ** int(rng.integers(2, 17))
    c_g = int(rng.choice([1, 8, 64]))
    fn = qz.StalenessFn.constant() if rng.random() < 0.3 else qz.StalenessFn.poly(float(rng.choice([0.5, 1.0, 2.0])))
    tau_max = int(rng.integers(0, 11))
    d = int(rng.integers(1, 13))
    params = ProtocolParams(N=N, K=K, U=U, T=T, D=D, quant=qz.QuantParams(c_l, c_g), staleness=fn, tau_max=tau_max)
    return params, d


def exactness_trial(seed: int, fault: Optional[str] = None) -> Optional[TrialOutcome]:
    """One randomized buffered round through real User/Server objects, checked two ways.

    Returns ``None`` when every quantized staleness weight rounded to zero; the
    server must then refuse the round and keep its buffer.
    """
    rng = np.random.default_rng(seed)
    p, d = _random_params(rng)
    field = p.field
    server = Server(p, np.zeros(d), np.random.default_rng([seed, 1]))
    server.round = p.tau_max
    users = {j: User(j, p) for j in range(p.N)}

    members: list[tuple[int, int]] = []
    while len(members) < p.K:
        m = (int(rng.integers(0, p.N)), server.round - int(rng.integers(0, p.tau_max + 1)))
        if m not in members:
            members.append(m)
    limit = qz.wraparound_limit(field.q, p.K, p.quant.c_g)
    scale = min(1.0, 0.5 * limit / p.quant.c_l)

    ints, replay_ok = [], True
    for idx, (owner, t_i) in enumerate(members):
        user = users[owner]
        for share in user.download(DownloadModel(t_i, np.zeros(d)), np.random.default_rng([seed, 2, idx])):
            users[share.recipient].receive_share(share)
        mask = user.pending[t_i][1].mask
        delta = rng.uniform(-1, 1, size=d) * scale
        upd = user.upload(t_i, delta, np.random.default_rng([seed, 3, idx]))
        # Test-only plaintext access: the masked payload minus the mask.
        k = [qz.demap_from_field(int(v), field.q) for v in field.vsub(upd.payload, mask)]
        replay = qz.stochastic_round_int(delta, p.quant.c_l, np.random.default_rng([seed, 3, idx]))
        replay_ok &= k == replay.tolist()
        ints.append(k)
        req = server.receive(upd)
    assert req is not None

    dropped = set(rng.choice(p.N, size=int(rng.integers(0, p.D + 1)), replace=False).tolist())
    responders = [int(j) for j in rng.permutation(p.N) if int(j) not in dropped]
    responses = [users[j].respond_recovery(req) for j in responders]
    if fault == "corrupt_share":
        r0 = responses[0]
        bad = r0.vector.copy()
        bad[0] = (int(bad[0]) + 1) % field.q
        responses[0] = RecoveryResponse(r0.j, bad)
    w = req.weights
    if sum(w) == 0:
        try:
            server.finalize(responses)
        except ZeroWeightSum:
            if len(server.buffer) == p.K:
                return None
        raise AssertionError("zero weight sum was not rejected")
    server.finalize(responses)

    exact = [sum(wi * ki[c] for wi, ki in zip(w, ints)) for c in range(d)]
    field_exact = qz.demap_from_field(server.last_aggregate, field.q).tolist() == exact

    wsum = sum(Fraction(wi, p.quant.c_g) for wi in w)
    rel = 0.0
    for c in range(d):
        g_true = sum(Fraction(wi, p.quant.c_g) * Fraction(ki[c], p.quant.c_l) for wi, ki in zip(w, ints)) / wsum
        g = server.last_update[c]
        err = abs(Fraction(float(g)) - g_true)
        rel = max(rel, float(err / abs(g_true)) if g_true else float(err) * math.inf if err else 0.0)
    return TrialOutcome(field_exact, rel, replay_ok)


def exactness_battery(trials: int = 1000, seed: int = 3, fault: Optional[str] = None, rtol: float = 1e-12) -> PropertyResult:
    bad_field, bad_real, bad_replay, worst = [], [], [], 0.0
    t = done = degenerate = 0
    while done < trials:
        out = exactness_trial(seed * 1_000_003 + t, fault)
        t += 1
        if out is None:
            degenerate += 1
            continue
        done += 1
        worst = max(worst, out.real_rel_err)
        if not out.field_exact:
            bad_field.append(t - 1)
        if not out.real_rel_err <= rtol:
            bad_real.append(t - 1)
        if not out.quant_replay:
            bad_replay.append(t - 1)
    ok = not (bad_field or bad_real or bad_replay)
    detail = (f"{trials} rounds, field mismatches={len(bad_field)}, "
              f"real-domain worst rel err={worst:.3g}, replay mismatches={len(bad_replay)}, "
              f"zero-weight rounds rejected={degenerate}")
    return PropertyResult("end_to_end_exactness", ok, detail)


# -- pairwise-mask negative control ---------------------------------------------------------


def negative_control_battery(cases: int = 100, seed: int = 4, q: int = DEFAULT_Q) -> PropertyResult:
    field = PrimeField(q)
    rng = np.random.default_rng(seed)
    nonzero = 0
    same_round_zero = 0
    for _ in range(cases):
        k = int(rng.integers(2, 11))
        owners = rng.choice(50, size=k, replace=False).tolist()
        rounds = rng.integers(0, 11, size=k)
        while len(set(rounds.tolist())) == 1:
            rounds = rng.integers(0, 11, size=k)
        members = list(zip(owners, rounds.tolist()))
        s = int(rng.integers(0, 2**32))
        if pairwise_residue(members, 16, field, seed=s).any():
            nonzero += 1
        synced = [(o, int(rounds[0])) for o in owners]
        if not pairwise_residue(synced, 16, field, seed=s).any():
            same_round_zero += 1
    ok = nonzero == cases and same_round_zero == cases
    return PropertyResult("pairwise_masks_do_not_cancel", ok,
                          f"{nonzero}/{cases} mixed-round buffers left a residue; "
                          f"{same_round_zero}/{cases} same-round controls cancelled")


def run_all(fault: Optional[str] = None, trials: int = 1000) -> list[PropertyResult]:
    results = [privacy_battery(PRIVACY_CASES), mds_battery(), commutativity_battery()]
    results += quantization_battery()
    results.append(exactness_battery(trials=trials, fault=fault))
    results.append(negative_control_battery())
    return results


def single_share_uniformity(q: int = 11) -> bool:
    """Any single share of a T=1 package is uniform over F_q whatever the mask is."""
    for j in range(4):
        ref = None
        for z0 in range(q):
            c = Counter(
                int(build_mask_package(0, 0, 1, [z0, pad], [[n]], 4, 3, 1, PrimeField(q)).shares[j][0])
                for pad in range(q) for n in range(q)
            )
            if ref is None:
                ref = c
            if c != ref or set(c.values()) != {q}:
                return False
    return True
