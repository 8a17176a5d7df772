"""Synthetic data and the small binary classifiers trained by the simulator."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class Dataset:
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    parts: list[np.ndarray]

    @property
    def dim(self) -> int:
        return self.X_train.shape[1]


def gaussian_mixture(n: int, dim: int, separation: float, rng: np.random.Generator, direction=None):
    """Two equiprobable isotropic Gaussian classes at ``+-separation/2 * direction``."""
    if direction is None:
        direction = rng.standard_normal(dim)
        direction /= np.linalg.norm(direction)
    y = rng.integers(0, 2, size=n)
    centers = np.where(y[:, None] == 1, 0.5, -0.5) * separation * direction
    X = centers + rng.standard_normal((n, dim))
    return X, y.astype(np.float64), direction


def partition_iid(n: int, N: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffle ``range(n)`` and split it into ``N`` nearly equal disjoint parts."""
    return [np.sort(p) for p in np.array_split(rng.permutation(n), N)]


def make_synthetic(n_train: int, n_test: int, dim: int, separation: float, N: int, rng) -> Dataset:
    X, y, direction = gaussian_mixture(n_train, dim, separation, rng)
    Xt, yt, _ = gaussian_mixture(n_test, dim, separation, rng, direction)
    return Dataset(X, y, Xt, yt, partition_iid(n_train, N, rng))


def load_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a dataset CSV: a header row, feature columns, then a final 0/1 ``label`` column."""
    data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
    return data[:, :-1], data[:, -1]


def save_csv(path, X: np.ndarray, y: np.ndarray) -> None:
    header = ",".join([f"x{i}" for i in range(X.shape[1])] + ["label"])
    np.savetxt(Path(path), np.column_stack([X, y]), delimiter=",", header=header, comments="", fmt="%.17g")


def _log1pexp(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class LogReg:
    """Binary logistic regression; the last parameter is the bias."""

    def __init__(self, dim: int):
        self.dim = dim
        self.n_params = dim + 1

    def init(self, rng: np.random.Generator) -> np.ndarray:
        return np.zeros(self.n_params)

    def logits(self, w, X):
        return X @ w[:-1] + w[-1]

    def data_loss(self, w, X, y) -> float:
        z = self.logits(w, X)
        return float(np.mean(_log1pexp(z) - y * z))

    def data_grad(self, w, X, y) -> np.ndarray:
        r = (_sigmoid(self.logits(w, X)) - y) / X.shape[0]
        return np.concatenate([X.T @ r, [r.sum()]])


class MLP:
    """One hidden tanh layer feeding a logistic output unit."""

    def __init__(self, dim: int, hidden: int = 16):
        self.dim = dim
        self.hidden = hidden
        self.n_params = dim * hidden + 2 * hidden + 1

    def init(self, rng: np.random.Generator) -> np.ndarray:
        W1 = rng.standard_normal((self.dim, self.hidden)) / np.sqrt(self.dim)
        return np.concatenate([W1.ravel(), np.zeros(self.hidden), rng.standard_normal(self.hidden) / np.sqrt(self.hidden), [0.0]])

    def _unpack(self, w):
        d, h = self.dim, self.hidden
        W1 = w[: d * h].reshape(d, h)
        b1 = w[d * h : d * h + h]
        w2 = w[d * h + h : d * h + 2 * h]
        return W1, b1, w2, w[-1]

    def logits(self, w, X):
        W1, b1, w2, b2 = self._unpack(w)
        return np.tanh(X @ W1 + b1) @ w2 + b2

    def data_loss(self, w, X, y) -> float:
        z = self.logits(w, X)
        return float(np.mean(_log1pexp(z) - y * z))

    def data_grad(self, w, X, y) -> np.ndarray:
        W1, b1, w2, b2 = self._unpack(w)
        H = np.tanh(X @ W1 + b1)
        r = (_sigmoid(H @ w2 + b2) - y) / X.shape[0]
        dH = np.outer(r, w2) * (1.0 - H**2)
        return np.concatenate([(X.T @ dH).ravel(), dH.sum(axis=0), H.T @ r, [r.sum()]])


def make_model(kind: str, dim: int, hidden: int = 16):
    if kind == "logreg":
        return LogReg(dim)
    if kind == "mlp":
        return MLP(dim, hidden)
    raise ValueError(f"unknown model {kind!r}")


def loss(model, w, X, y, lam: float = 0.0) -> float:
    """Mean logistic loss plus ``lam/2 * ||w||^2``."""
    return model.data_loss(w, X, y) + 0.5 * lam * float(w @ w)


def grad_oracle(model, w, X, y, lam: float = 0.0) -> np.ndarray:
    """Gradient of :func:`loss` on the minibatch ``(X, y)``."""
    g = lam * w
    if X.shape[0]:
        g = g + model.data_grad(w, X, y)
    return g


def accuracy(model, w, X, y) -> float:
    return float(np.mean((model.logits(w, X) > 0) == (y == 1)))
