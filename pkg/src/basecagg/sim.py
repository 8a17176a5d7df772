"""Deterministic simulator for buffered asynchronous training.

Scheduling model
----------------
Every global round ``t`` consumes exactly ``K`` uploads.  When round ``t`` is
planned (``tau_max`` rounds ahead of time) each of its ``K`` slots draws a
staleness ``tau`` uniformly from ``{0, ..., tau_max}``; the slot is filled by
a job that downloads the model at round ``max(0, t - tau)`` and delivers its
upload at round ``t``.  Jobs are assigned to users at download time, so masks
are drawn and shares distributed before the model is trained, exactly as a
real deployment would order them.

All randomness comes from independent streams keyed by ``(seed, purpose,
index)``; the secure run and the float baseline therefore see identical
schedules, user assignments and minibatches and differ only by
quantization.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
from collections import Counter
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from . import models
from .errors import BASecAggError, ConfigError, InsufficientResponses
from .field import DEFAULT_Q
from .protocol import FedBuffServer, ProtocolParams, Server, User, local_train
from .quantize import QuantParams, StalenessFn

logger = logging.getLogger(__name__)

SCHEMES = ("basecagg", "fedbuff-float")
CSV_COLUMNS = ("round", "wallclock_virtual", "accuracy", "loss", "mean_staleness", "dropouts", "overflow_warnings")

# Stream tags for the keyed generators.
_DATA, _INIT, _SCHED, _TRAIN, _MASK, _QUANT, _WEIGHT, _DROP, _ASSIGN = range(9)
MAX_RECOVERY_ATTEMPTS = 16


@dataclass
class SimConfig:
    """Every knob of one experiment.  Defaults follow the selected hyperparameters
    of the reference experiments (eta_g=1, eta_l=0.01, lambda=5e-4, alpha=1,
    batch 50, K=10, N=100, tau_max=10, q=2**32-5, c_g=2**6)."""

    # protocol
    N: int = 100
    K: int = 10
    C: int = 20
    U: int = 60
    T: int = 30
    D: int = 20
    tau_max: int = 10
    E: int = 5
    eta_l: float = 0.01
    eta_g: float = 1.0
    c_l: int = 2**16
    c_g: int = 2**6
    q: int = DEFAULT_Q
    guard: bool = True
    staleness: str = "poly"
    alpha: float = 1.0
    # dropouts per round: "none", "uniform" (count uniform on 0..D) or "max" (always D)
    dropout: str = "uniform"
    # learning task
    model: str = "logreg"
    hidden: int = 16
    lam: float = 5e-4
    batch_size: int = 50
    dataset: str = "synthetic"
    n_train: int = 10000
    n_test: int = 2000
    dim: int = 20
    separation: float = 1.5
    train_csv: Optional[str] = None
    test_csv: Optional[str] = None
    # run
    rounds: int = 200
    seed: int = 0

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "SimConfig":
        cfg = dataclasses.replace(self, **changes)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not 1 <= self.C <= self.N:
            raise ConfigError(f"need 1 <= C <= N, got C={self.C}, N={self.N}")
        if self.rounds < 1 or self.batch_size < 1:
            raise ConfigError("rounds and batch_size must be positive")
        if self.dropout not in ("none", "uniform", "max"):
            raise ConfigError(f"unknown dropout model {self.dropout!r}")
        if self.dataset not in ("synthetic", "csv"):
            raise ConfigError(f"unknown dataset kind {self.dataset!r}")
        if self.dataset == "csv" and not (self.train_csv and self.test_csv):
            raise ConfigError("dataset='csv' needs train_csv and test_csv")
        if self.model not in ("logreg", "mlp"):
            raise ConfigError(f"unknown model {self.model!r}")
        try:
            self.protocol_params()
        except BASecAggError as e:
            raise ConfigError(str(e)) from e

    def protocol_params(self) -> ProtocolParams:
        fn = StalenessFn.constant() if self.staleness == "constant" else StalenessFn("poly", self.alpha)
        return ProtocolParams(
            N=self.N, K=self.K, U=self.U, T=self.T, D=self.D,
            eta_l=self.eta_l, eta_g=self.eta_g, E=self.E,
            quant=QuantParams(self.c_l, self.c_g), staleness=fn,
            tau_max=self.tau_max, q=self.q, guard=self.guard,
        )


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([seed, *key])


def load_dataset(cfg: SimConfig) -> models.Dataset:
    rng = stream(cfg.seed, _DATA)
    if cfg.dataset == "synthetic":
        return models.make_synthetic(cfg.n_train, cfg.n_test, cfg.dim, cfg.separation, cfg.N, rng)
    X, y = models.load_csv(cfg.train_csv)
    Xt, yt = models.load_csv(cfg.test_csv)
    return models.Dataset(X, y, Xt, yt, models.partition_iid(X.shape[0], cfg.N, rng))


@dataclass
class RoundRecord:
    round: int
    wallclock_virtual: int
    accuracy: float
    loss: float
    mean_staleness: float
    dropouts: int
    overflow_warnings: int
    responders: int = 0
    staleness_hist: dict = dc_field(default_factory=dict)


@dataclass
class RunMetrics:
    scheme: str
    rows: list[RoundRecord] = dc_field(default_factory=list)
    failures: list[tuple[int, str]] = dc_field(default_factory=list)
    final_model: Optional[np.ndarray] = None

    @property
    def accuracy(self) -> np.ndarray:
        return np.array([r.accuracy for r in self.rows])

    @property
    def final_accuracy(self) -> float:
        return self.rows[-1].accuracy

    def staleness_counts(self, from_round: int = 0) -> Counter:
        c: Counter = Counter()
        for r in self.rows:
            if r.round >= from_round:
                c.update(r.staleness_hist)
        return c

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.round, r.wallclock_virtual, repr(r.accuracy), repr(r.loss),
                        repr(r.mean_staleness), r.dropouts, r.overflow_warnings])
        return buf.getvalue()


@dataclass
class Job:
    id: int
    t_i: int
    target: int
    user: int = -1
    delta: Optional[np.ndarray] = None


class _Planner:
    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.rng = stream(cfg.seed, _SCHED)
        self.next_id = 0
        self.planned_to = -1
        self.downloads: dict[int, list[Job]] = {}
        self.deliveries: dict[int, list[Job]] = {}

    def _add(self, t_i: int, target: int) -> Job:
        job = Job(self.next_id, t_i, target)
        self.next_id += 1
        self.downloads.setdefault(t_i, []).append(job)
        self.deliveries.setdefault(target, []).append(job)
        return job

    def plan_through(self, t: int) -> None:
        while self.planned_to < t:
            self.planned_to += 1
            r = self.planned_to
            for _ in range(self.cfg.K):
                tau = int(self.rng.integers(0, self.cfg.tau_max + 1))
                self._add(max(0, r - tau), r)

    def top_up(self, r: int) -> Job:
        """Fresh zero-staleness job used when an upload was lost to an error."""
        job = Job(self.next_id, r, r)
        self.next_id += 1
        return job


class _Trainer:
    def __init__(self, cfg: SimConfig, data: models.Dataset):
        self.cfg = cfg
        self.data = data
        self.model = models.make_model(cfg.model, data.dim, cfg.hidden)

    def grad_fn(self, user: int):
        idx = self.data.parts[user]
        X, y = self.data.X_train[idx], self.data.y_train[idx]
        B, lam, model = self.cfg.batch_size, self.cfg.lam, self.model

        def g(w, rng):
            if B >= X.shape[0]:
                return models.grad_oracle(model, w, X, y, lam)
            pick = rng.choice(X.shape[0], size=B, replace=False)
            return models.grad_oracle(model, w, X[pick], y[pick], lam)

        return g

    def evaluate(self, w) -> tuple[float, float]:
        d = self.data
        acc = models.accuracy(self.model, w, d.X_test, d.y_test)
        return acc, models.loss(self.model, w, d.X_train, d.y_train, self.cfg.lam)


def _assign_users(jobs: list[Job], busy: Counter, taken: set, N: int, rng: np.random.Generator) -> None:
    # Prefer idle users; a busy user may take another job but never two in one round.
    free = [u for u in range(N) if u not in taken]
    idle = [u for u in free if busy[u] == 0]
    order = list(rng.permutation(idle)) + list(rng.permutation([u for u in free if busy[u] > 0]))
    if len(jobs) > len(order):
        raise ConfigError(f"{len(jobs)} downloads in one round exceed the {len(order)} available users")
    for job, u in zip(jobs, order):
        job.user = int(u)
        busy[job.user] += 1
        taken.add(job.user)


def _dropouts(cfg: SimConfig, r: int, attempt: int) -> set[int]:
    rng = stream(cfg.seed, _DROP, r, attempt)
    if cfg.dropout == "none" or cfg.D == 0:
        return set()
    n = cfg.D if cfg.dropout == "max" else int(rng.integers(0, cfg.D + 1))
    return {int(u) for u in rng.choice(cfg.N, size=n, replace=False)}


def run(cfg: SimConfig, scheme: str = "basecagg", data: Optional[models.Dataset] = None) -> RunMetrics:
    """Execute ``cfg.rounds`` global rounds and return per-flush metrics."""
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    cfg.validate()
    params = cfg.protocol_params()
    data = data if data is not None else load_dataset(cfg)
    if len(data.parts) != cfg.N:
        raise ConfigError(f"dataset has {len(data.parts)} partitions, expected N={cfg.N}")
    trainer = _Trainer(cfg, data)
    x0 = trainer.model.init(stream(cfg.seed, _INIT))
    secure = scheme == "basecagg"
    if secure:
        server = Server(params, x0, stream(cfg.seed, _WEIGHT))
        users = {j: User(j, params) for j in range(cfg.N)}
    else:
        server = FedBuffServer(params, x0)

    planner = _Planner(cfg)
    metrics = RunMetrics(scheme)
    busy: Counter = Counter()
    clock = 0

    def start(job: Job, r: int) -> None:
        train_rng = stream(cfg.seed, _TRAIN, job.id)
        grad = trainer.grad_fn(job.user)
        if secure:
            user = users[job.user]
            for share in user.download(server.download(), stream(cfg.seed, _MASK, job.id)):
                users[share.recipient].receive_share(share)
            job.delta = user.train(r, grad, train_rng)
        else:
            job.delta = local_train(server.x, grad, params.eta_l, params.E, train_rng)

    for r in range(cfg.rounds):
        planner.plan_through(r + cfg.tau_max)
        todays = planner.downloads.pop(r, [])
        taken: set[int] = set()
        _assign_users(todays, busy, taken, cfg.N, stream(cfg.seed, _ASSIGN, r))
        for job in todays:
            start(job, r)

        queue = list(planner.deliveries.pop(r, []))
        full = False
        hist: Counter = Counter()
        warnings_before = sum(u.overflow_warnings for u in users.values()) if secure else 0
        while not full:
            if not queue:
                job = planner.top_up(r)
                try:
                    _assign_users([job], busy, taken, cfg.N, stream(cfg.seed, _ASSIGN, r, job.id))
                except ConfigError:
                    last = metrics.failures[-1][1] if metrics.failures else "none"
                    raise BASecAggError(
                        f"round {r}: buffer cannot be filled, every user has already contributed "
                        f"(last rejected upload: {last})"
                    ) from None
                start(job, r)
                queue.append(job)
            job = queue.pop(0)
            busy[job.user] -= 1
            clock += 1
            try:
                if secure:
                    upd = users[job.user].upload(job.t_i, job.delta, stream(cfg.seed, _QUANT, job.id))
                    full = server.receive(upd) is not None
                else:
                    full = server.receive(job.user, job.t_i, job.delta)
            except BASecAggError as e:
                metrics.failures.append((r, f"job {job.id}: {e}"))
                continue
            hist[r - job.t_i] += 1
        # Deliveries beyond K wait for the next round.
        if queue:
            planner.deliveries.setdefault(r + 1, [])[:0] = queue

        dropped: set[int] = set()
        for attempt in range(MAX_RECOVERY_ATTEMPTS):
            dropped = _dropouts(cfg, r, attempt)
            responders = [int(u) for u in stream(cfg.seed, _DROP, r, attempt, 1).permutation(cfg.N) if int(u) not in dropped]
            if not secure:
                server.finalize()
                break
            try:
                server.finalize([users[j].respond_recovery(server.request) for j in responders])
                break
            except InsufficientResponses as e:
                metrics.failures.append((r, f"recovery attempt {attempt}: {e}"))
        else:
            raise BASecAggError(f"round {r}: recovery failed {MAX_RECOVERY_ATTEMPTS} times")

        if secure:
            for u in users.values():
                u.evict_before(r + 1 - cfg.tau_max)
        acc, loss = trainer.evaluate(server.x)
        n = sum(hist.values())
        metrics.rows.append(RoundRecord(
            round=r,
            wallclock_virtual=clock,
            accuracy=acc,
            loss=loss,
            mean_staleness=sum(k * v for k, v in sorted(hist.items())) / n,
            dropouts=len(dropped),
            overflow_warnings=(sum(u.overflow_warnings for u in users.values()) - warnings_before) if secure else 0,
            responders=cfg.N - len(dropped),
            staleness_hist=dict(sorted(hist.items())),
        ))
    metrics.final_model = server.x.copy()
    return metrics


def run_baseline_fedbuff(cfg: SimConfig, data: Optional[models.Dataset] = None) -> RunMetrics:
    """The same schedule with plaintext real-valued aggregation."""
    return run(cfg, "fedbuff-float", data)
