import numpy as np
import pytest
from scipy import stats

from basecagg import models, sim
from basecagg.errors import BASecAggError, ConfigError

SMALL = dict(N=10, K=3, C=5, U=5, T=2, D=2, tau_max=3, n_train=1000, n_test=200, dim=5, rounds=15)


def small(**kw):
    return sim.SimConfig.from_dict({**SMALL, **kw})


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="c_bits"):
        sim.SimConfig.from_dict({"c_bits": 16})


@pytest.mark.parametrize("bad", [dict(C=0), dict(U=9), dict(T=5), dict(dropout="often"), dict(K=11), dict(dataset="csv")])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        small(**bad)


def test_config_round_trip():
    cfg = small(seed=4)
    assert sim.SimConfig.from_dict(cfg.to_dict()) == cfg


def test_one_row_per_flush():
    m = sim.run(small())
    assert [r.round for r in m.rows] == list(range(15))
    assert all(sum(r.staleness_hist.values()) == 3 for r in m.rows)
    assert [r.wallclock_virtual for r in m.rows] == [3 * (i + 1) for i in range(15)]
    assert m.to_csv().splitlines()[0] == ",".join(sim.CSV_COLUMNS)
    assert len(m.to_csv().splitlines()) == 16


def test_deterministic_csv():
    assert sim.run(small(seed=3)).to_csv() == sim.run(small(seed=3)).to_csv()
    assert sim.run(small(seed=3)).to_csv() != sim.run(small(seed=4)).to_csv()


def test_dropouts_bounded_and_recorded():
    m = sim.run(small(dropout="max"))
    assert all(r.dropouts == 2 and r.responders == 8 for r in m.rows)
    assert not m.failures


def test_staleness_within_bound():
    m = sim.run(small(rounds=30))
    assert max(k for r in m.rows for k in r.staleness_hist) <= 3


def test_sequential_sgd_oracle():
    # One user, K=1, no staleness, full batch: the run is plain gradient descent
    # with E local steps per round.
    cfg = small(N=1, K=1, C=1, U=1, T=0, D=0, tau_max=0, batch_size=10_000, n_train=200, rounds=8, E=3, eta_l=0.1)
    data = sim.load_dataset(cfg)
    m = sim.run_baseline_fedbuff(cfg, data)
    model = models.LogReg(cfg.dim)
    x = np.zeros(cfg.dim + 1)
    for _ in range(cfg.rounds):
        for _ in range(cfg.E):
            x = x - cfg.eta_l * models.grad_oracle(model, x, data.X_train, data.y_train, cfg.lam)
    np.testing.assert_allclose(m.final_model, x, rtol=1e-12, atol=1e-15)
    secure = sim.run(cfg, data=data)
    np.testing.assert_allclose(secure.final_model, x, atol=1e-4)


def test_synchronous_fedavg_oracle():
    cfg = small(N=5, K=5, C=5, U=3, T=1, D=1, tau_max=0, batch_size=10_000, n_train=500, rounds=6, E=2, eta_l=0.05)
    data = sim.load_dataset(cfg)
    m = sim.run_baseline_fedbuff(cfg, data)
    model = models.LogReg(cfg.dim)
    x = np.zeros(cfg.dim + 1)
    for _ in range(cfg.rounds):
        deltas = []
        for u in range(cfg.N):
            X, y = data.X_train[data.parts[u]], data.y_train[data.parts[u]]
            xe = x.copy()
            for _ in range(cfg.E):
                xe = xe - cfg.eta_l * models.grad_oracle(model, xe, X, y, cfg.lam)
            deltas.append(x - xe)
        x = x - cfg.eta_g * sum(deltas) / cfg.N
    np.testing.assert_allclose(m.final_model, x, rtol=1e-10, atol=1e-13)


def test_fine_quantization_matches_baseline():
    cfg = small(c_l=2**24, c_g=1, T=0, D=0, U=1, staleness="constant")
    a, b = sim.run(cfg), sim.run_baseline_fedbuff(cfg)
    np.testing.assert_allclose(a.final_model, b.final_model, atol=1e-5)


def test_staleness_distribution_is_uniform():
    cfg = small(K=10, N=100, C=20, U=20, T=5, D=5, tau_max=10, rounds=120, n_train=2000)
    counts = sim.run_baseline_fedbuff(cfg).staleness_counts(from_round=cfg.tau_max)
    obs = [counts[k] for k in range(11)]
    assert sum(obs) == 10 * (120 - 10)
    assert stats.chisquare(obs).pvalue > 0.001


def test_constant_and_poly_staleness_differ():
    a = sim.run_baseline_fedbuff(small(staleness="poly"))
    b = sim.run_baseline_fedbuff(small(staleness="constant"))
    assert not np.array_equal(a.final_model, b.final_model)


def test_unknown_scheme():
    with pytest.raises(ConfigError):
        sim.run(small(), scheme="secagg")


def test_guard_failures_are_recorded_and_round_still_completes():
    m = sim.run(small(N=50, c_l=2**22, q=16777213, rounds=5))
    assert m.failures and len(m.rows) == 5
    assert all("wrap-around" in msg for _, msg in m.failures)


def test_guard_exhausting_users_is_an_error():
    with pytest.raises(BASecAggError, match="cannot be filled"):
        sim.run(small(c_l=2**24, q=16777213, rounds=5))


def test_overflow_warnings_counted_when_guard_disabled():
    m = sim.run(small(c_l=2**24, q=16777213, guard=False, rounds=5))
    assert sum(r.overflow_warnings for r in m.rows) > 0


def test_csv_dataset(tmp_path):
    rng = np.random.default_rng(0)
    X, y, d = models.gaussian_mixture(300, 4, 2.0, rng)
    Xt, yt, _ = models.gaussian_mixture(100, 4, 2.0, rng, d)
    models.save_csv(tmp_path / "train.csv", X, y)
    models.save_csv(tmp_path / "test.csv", Xt, yt)
    cfg = small(dataset="csv", train_csv=str(tmp_path / "train.csv"), test_csv=str(tmp_path / "test.csv"), rounds=10)
    m = sim.run(cfg)
    assert m.final_accuracy > 0.6


def test_mlp_model_runs():
    m = sim.run(small(model="mlp", hidden=4, rounds=5))
    assert len(m.rows) == 5 and np.isfinite(m.rows[-1].loss)
