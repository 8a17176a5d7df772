import json

import numpy as np
import pytest

from basecagg import quantize as qz
from basecagg.errors import BASecAggError, InsufficientResponses, OutOfRange, StalenessExceeded
from basecagg.field import DEFAULT_Q
from basecagg.masking import RecoveryRequest, build_mask_package
from basecagg.protocol import (
    DownloadModel,
    FedBuffServer,
    MaskedUpdate,
    ProtocolParams,
    RecoveryResponse,
    Server,
    Share,
    User,
    decode_message,
    encode_message,
    local_train,
    run_round,
    upload,
)


def setup(params, d=3, x0=None, seed=0):
    server = Server(params, np.zeros(d) if x0 is None else x0, np.random.default_rng(seed))
    users = {j: User(j, params) for j in range(params.N)}
    return server, users


def download(user, users, round, d=3, seed=0):
    for s in user.download(DownloadModel(round, np.zeros(d)), np.random.default_rng([seed, user.id, round])):
        users[s.recipient].receive_share(s)


def test_local_train_quadratic_example():
    # grad f(x) = x; two steps of size 0.1 from 1.0 reach 0.81.
    delta = local_train(np.array([1.0]), lambda x, rng: x, 0.1, 2, np.random.default_rng())
    assert delta[0] == pytest.approx(0.19, abs=1e-15)


def test_upload_of_zero_update_is_the_mask():
    p = ProtocolParams(N=4, K=2, U=3, T=1)
    pkg = build_mask_package(0, 0, 3, [5, 6, 7, 8], [[1, 2]], 4, 3, 1, p.field)
    assert upload(0, 0, np.zeros(3), pkg, p, np.random.default_rng()).payload.tolist() == [5, 6, 7]


def test_payload_marginal_is_uniform_small_field():
    p = ProtocolParams(N=2, K=1, U=1, q=11, quant=qz.QuantParams(c_l=1, c_g=1))
    for k in range(-2, 3):
        seen = sorted(
            int(upload(0, 0, np.array([float(k)]), build_mask_package(0, 0, 1, [z], np.zeros((0, 1)), 2, 1, 0, p.field),
                       p, np.random.default_rng()).payload[0])
            for z in range(11)
        )
        assert seen == list(range(11))


def test_guard_rejects_wrapping_update_and_counts_when_disabled():
    p = ProtocolParams(N=2, K=1, U=1, quant=qz.QuantParams(c_l=2**16, c_g=64))
    pkg = build_mask_package(0, 0, 2, [0, 0], np.zeros((0, 2)), 2, 1, 0, p.field)
    big = np.array([0.0, 1e4])
    with pytest.raises(OutOfRange) as e:
        upload(0, 0, big, pkg, p, np.random.default_rng())
    assert e.value.index == 1
    user = User(0, ProtocolParams(N=2, K=1, U=1, quant=p.quant, guard=False))
    upload(0, 0, big, pkg, user.params, np.random.default_rng(), user)
    assert user.overflow_warnings == 1


def test_recovery_request_on_kth_upload():
    p = ProtocolParams(N=12, K=10, U=6, T=2, D=3)
    server, users = setup(p)
    for j in range(10):
        download(users[j], users, 0)
        req = server.receive(users[j].upload(0, np.full(3, 0.01 * j), np.random.default_rng(j)))
        assert (req is None) == (j < 9)
    assert len(req.members) == 10 and req.weights == (64,) * 10
    with pytest.raises(BASecAggError):
        server.receive(MaskedUpdate(11, 0, p.field.zeros(3)))


def test_single_member_step():
    p = ProtocolParams(N=3, K=1, U=2, T=1, eta_g=0.5, quant=qz.QuantParams(c_l=4, c_g=64))
    x0 = np.array([1.0, 2.0, -1.0])
    server, users = setup(p, x0=x0)
    download(users[1], users, 0)
    delta = np.array([0.25, -0.5, 1.75])
    x = run_round(server, users, [users[1].upload(0, delta, np.random.default_rng())], [2, 0])
    np.testing.assert_array_equal(x, x0 - 0.5 * delta)
    assert server.round == 1 and server.buffer == []


def test_mixed_staleness_round_matches_weighted_average():
    p = ProtocolParams(N=6, K=3, U=3, T=1, D=2, quant=qz.QuantParams(c_l=4, c_g=64))
    server, users = setup(p)
    server.round = 3
    members = [(0, 3), (1, 2), (2, 0)]
    deltas = [np.array([1.0, 0, 0]), np.array([0, 0.5, 0]), np.array([0, 0, -0.75])]
    for (u, t), _ in zip(members, deltas):
        download(users[u], users, t)
    ups = [users[u].upload(t, dl, np.random.default_rng()) for (u, t), dl in zip(members, deltas)]
    run_round(server, users, ups, [5, 3, 1])
    # s(0)=1 -> 64, s(1)=1/2 -> 32, s(3)=1/4 -> 16: all exact.
    expect = (64 * deltas[0] + 32 * deltas[1] + 16 * deltas[2]) / 112
    np.testing.assert_array_equal(server.last_update, expect)


def test_failed_recovery_keeps_buffer():
    p = ProtocolParams(N=5, K=2, U=3, T=1, D=2)
    server, users = setup(p)
    for j in (0, 1):
        download(users[j], users, 0)
        req = server.receive(users[j].upload(0, np.full(3, 0.1), np.random.default_rng(j)))
    with pytest.raises(InsufficientResponses):
        server.finalize([users[j].respond_recovery(req) for j in (3, 4)])
    assert len(server.buffer) == 2 and server.request is req and server.round == 0
    server.finalize([users[j].respond_recovery(req) for j in (4, 2, 3)])
    assert server.round == 1 and server.request is None


def test_staleness_bound_enforced():
    p = ProtocolParams(N=3, K=1, U=1, tau_max=2)
    server, _ = setup(p)
    server.round = 5
    with pytest.raises(StalenessExceeded):
        server.receive(MaskedUpdate(0, 2, p.field.zeros(3)))
    with pytest.raises(StalenessExceeded):
        server.receive(MaskedUpdate(0, 6, p.field.zeros(3)))
    assert server.receive(MaskedUpdate(0, 3, p.field.zeros(3))) is not None


def test_user_bookkeeping_errors():
    p = ProtocolParams(N=3, K=1, U=2, T=1)
    _, users = setup(p)
    download(users[0], users, 4)
    with pytest.raises(BASecAggError):
        users[0].download(DownloadModel(4, np.zeros(3)), np.random.default_rng())
    with pytest.raises(BASecAggError):
        users[1].receive_share(Share(0, 4, 2, p.field.zeros(3)))
    users[0].upload(4, np.zeros(3), np.random.default_rng())
    assert 4 not in users[0].pending
    assert users[2].evict_before(5) == 1


@pytest.mark.parametrize(
    "msg",
    [
        DownloadModel(3, np.array([0.5, -1.25])),
        Share(1, 3, 2, np.array([DEFAULT_Q - 1, 7], dtype=np.uint64)),
        MaskedUpdate(4, 2, np.array([1, 2, 3], dtype=np.uint64)),
        RecoveryRequest(5, ((0, 3), (2, 4)), (16, 32), 64),
        RecoveryResponse(2, np.array([9], dtype=np.uint64)),
    ],
)
def test_message_round_trip(msg):
    wire = json.loads(json.dumps(encode_message(msg)))
    assert wire["v"] == 1
    back = decode_message(wire)
    assert type(back) is type(msg)
    for name in msg.__dataclass_fields__:
        a, b = getattr(msg, name), getattr(back, name)
        assert np.array_equal(a, b) if isinstance(a, np.ndarray) else a == b


def test_message_version_checked():
    wire = encode_message(RecoveryResponse(0, np.zeros(1, np.uint64)))
    wire["v"] = 99
    with pytest.raises(BASecAggError):
        decode_message(wire)


def test_degenerate_settings_match_plaintext_fedbuff():
    # Fine quantization, no privacy, no dropouts, constant staleness: secure and
    # plaintext buffers track each other on a quadratic problem.
    p = ProtocolParams(N=4, K=2, U=1, T=0, D=0, E=3, eta_l=0.1, tau_max=2,
                       quant=qz.QuantParams(c_l=2**30, c_g=1), staleness=qz.StalenessFn.constant())
    target = np.array([1.0, -2.0, 0.5])
    grad = lambda x, rng: x - target  # noqa: E731
    server, users = setup(p)
    plain = FedBuffServer(p, np.zeros(3))
    rng = np.random.default_rng(0)
    hist_s, hist_p = {0: server.x.copy()}, {0: plain.x.copy()}
    used = set()
    for r in range(30):
        for k in range(2):
            u = (2 * r + k) % 4
            t_i = max(0, r - int(rng.integers(0, 3)))
            if (u, t_i) in used:
                t_i = r
            used.add((u, t_i))
            for s in users[u].download(DownloadModel(t_i, hist_s[t_i]), rng):
                users[s.recipient].receive_share(s)
            delta_s = users[u].train(t_i, grad, rng)
            delta_p = local_train(hist_p[t_i], grad, p.eta_l, p.E, rng)
            server.receive(users[u].upload(t_i, delta_s, rng))
            plain.receive(u, t_i, delta_p)
        server.finalize([users[j].respond_recovery(server.request) for j in range(4)])
        plain.finalize()
        hist_s[r + 1], hist_p[r + 1] = server.x.copy(), plain.x.copy()
        np.testing.assert_allclose(server.x, plain.x, atol=1e-6)
    np.testing.assert_allclose(server.x, target, atol=1e-3)
