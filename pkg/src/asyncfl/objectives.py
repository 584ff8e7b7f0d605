"""Synthetic objectives and non-IID client data.

The global objective is f(x) = (1/n) sum_i f_i(x) over n client shards.
Three families are provided:

* ``quadratic`` -- per-example quadratic targets with a shared diagonal
  curvature; the global minimizer is known exactly, so both the optimality
  gap and the stationarity measure are exact.
* ``logistic`` -- multinomial logistic regression on class-conditional
  Gaussian features with Dirichlet-skewed label mixes per client.
* ``mlp1`` -- one-hidden-layer tanh network with hand-written backprop on
  the same synthetic classification data.

Client heterogeneity has two dials: the Dirichlet concentration ``alpha``
(label/target skew) and an optional per-client gradient offset of magnitude
``heterogeneity`` that shifts each f_i without moving the global objective.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod


@dataclass(frozen=True)
class DatasetSpec:
    """Knobs for the synthetic data generator."""

    n_clients: int
    classes: int
    examples_per_client: int
    dirichlet_alpha: float
    feature_dim: int
    noise_scale: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.n_clients < 1:
            raise ValueError("n_clients must be >= 1")
        if self.examples_per_client < 1:
            raise ValueError("examples_per_client must be >= 1")
        if self.classes < 1:
            raise ValueError("classes must be >= 1")
        if not self.dirichlet_alpha > 0:
            raise ValueError("dirichlet_alpha must be > 0")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")


@dataclass(frozen=True)
class ClassShards:
    """Per-client labeled examples plus the class mixture behind them."""

    features: tuple[np.ndarray, ...]  # n arrays of shape (m, p)
    labels: tuple[np.ndarray, ...]    # n arrays of shape (m,)
    proportions: np.ndarray           # (n, classes) Dirichlet draws
    class_means: np.ndarray           # (classes, p)


def sample_class_shards(spec: DatasetSpec) -> ClassShards:
    """Draw the classification dataset: Dirichlet label mixes per client,
    class-conditional Gaussian features. Pure function of ``spec``."""
    spec.validate()
    g = rngmod.substream(spec.seed, rngmod.DATA, 0)
    means = g.standard_normal((spec.classes, spec.feature_dim))
    alpha = np.full(spec.classes, spec.dirichlet_alpha)
    props = g.dirichlet(alpha, size=spec.n_clients)
    feats, labs = [], []
    for i in range(spec.n_clients):
        counts = g.multinomial(spec.examples_per_client, props[i])
        lab = np.repeat(np.arange(spec.classes), counts)
        x = means[lab] + spec.noise_scale * g.standard_normal(
            (spec.examples_per_client, spec.feature_dim)
        )
        feats.append(x)
        labs.append(lab)
    # normalize proportions defensively; dirichlet draws sum to 1 already
    props = props / props.sum(axis=1, keepdims=True)
    return ClassShards(tuple(feats), tuple(labs), props, means)


class Objective(ABC):
    """A global objective split across client shards."""

    kind: str = ""
    dim: int = 0
    n_clients: int = 0

    @abstractmethod
    def shard_size(self, client: int) -> int:
        ...

    @abstractmethod
    def client_loss(self, client: int, x: np.ndarray) -> float:
        ...

    @abstractmethod
    def client_gradient(
        self, client: int, x: np.ndarray, examples: np.ndarray | None = None
    ) -> np.ndarray:
        """Gradient of f_client at x, over the whole shard or a subset."""

    def loss(self, x: np.ndarray) -> float:
        self.check_dim(x)
        return sum(self.client_loss(i, x) for i in range(self.n_clients)) / self.n_clients

    def minimum_value(self) -> float | None:
        """f(x*) when the minimizer is known, else None."""
        return None

    def init_point(self, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
        return scale * rng.standard_normal(self.dim) / np.sqrt(self.dim)

    def check_dim(self, x: np.ndarray) -> None:
        if x.shape != (self.dim,):
            raise ValueError(f"expected parameter vector of dimension {self.dim}, got shape {x.shape}")


class QuadraticObjective(Objective):
    """f_i(x) = mean_j 0.5 (x - b_ij)^T A (x - b_ij) with shared diagonal A.

    The global minimizer is the grand mean of all targets (equal shard
    sizes), so the optimality gap is exact.
    """

    kind = "quadratic"

    def __init__(self, targets: list[np.ndarray] | tuple[np.ndarray, ...], curvature: np.ndarray):
        targets = tuple(np.asarray(t, dtype=np.float64) for t in targets)
        if not targets:
            raise ValueError("need at least one client shard")
        d = targets[0].shape[1]
        curvature = np.asarray(curvature, dtype=np.float64)
        if curvature.shape != (d,) or np.any(curvature <= 0):
            raise ValueError("curvature must be a positive vector matching the target dimension")
        self._targets = targets
        self._curv = curvature
        self._shard_means = tuple(t.mean(axis=0) for t in targets)
        # per-client additive constant from target dispersion around the shard mean
        self._consts = tuple(
            0.5 * float(np.mean(np.sum((t - m) ** 2 * curvature, axis=1)))
            for t, m in zip(targets, self._shard_means)
        )
        self.dim = d
        self.n_clients = len(targets)
        self._x_star = np.mean(np.stack(self._shard_means), axis=0)
        self._f_star: float | None = None

    @property
    def x_star(self) -> np.ndarray:
        return self._x_star.copy()

    def shard_size(self, client: int) -> int:
        return self._targets[client].shape[0]

    def client_loss(self, client: int, x: np.ndarray) -> float:
        self.check_dim(x)
        r = x - self._shard_means[client]
        return 0.5 * float(r @ (self._curv * r)) + self._consts[client]

    def client_gradient(self, client, x, examples=None):
        self.check_dim(x)
        if examples is None:
            center = self._shard_means[client]
        else:
            center = self._targets[client][examples].mean(axis=0)
        return self._curv * (x - center)

    def minimum_value(self) -> float:
        if self._f_star is None:
            self._f_star = self.loss(self._x_star)
        return self._f_star

    def hessian_matvec(self, v: np.ndarray) -> np.ndarray:
        return self._curv * v


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    picked = probs[np.arange(labels.size), labels]
    return float(-np.mean(np.log(np.maximum(picked, 1e-300))))


class LogisticObjective(Objective):
    """Multinomial logistic regression; parameters are the flattened (C, p)
    weight matrix. Optional per-client linear tilts of magnitude h shift the
    client gradients by exactly h*u_i with sum_i u_i = 0."""

    kind = "logistic"

    def __init__(self, shards: ClassShards, l2: float = 1e-3, tilts: np.ndarray | None = None):
        self._shards = shards
        self._classes = shards.class_means.shape[0]
        self._p = shards.class_means.shape[1]
        self.dim = self._classes * self._p
        self.n_clients = len(shards.features)
        if l2 < 0:
            raise ValueError("l2 must be >= 0")
        self._l2 = l2
        if tilts is None:
            tilts = np.zeros((self.n_clients, self.dim))
        self._tilts = tilts

    def shard_size(self, client: int) -> int:
        return self._shards.features[client].shape[0]

    def _batch(self, client, examples):
        f = self._shards.features[client]
        y = self._shards.labels[client]
        if examples is None:
            return f, y
        return f[examples], y[examples]

    def client_loss(self, client: int, x: np.ndarray) -> float:
        self.check_dim(x)
        W = x.reshape(self._classes, self._p)
        f, y = self._batch(client, None)
        probs = _softmax(f @ W.T)
        return (
            _cross_entropy(probs, y)
            + 0.5 * self._l2 * float(x @ x)
            + float(self._tilts[client] @ x)
        )

    def client_gradient(self, client, x, examples=None):
        self.check_dim(x)
        W = x.reshape(self._classes, self._p)
        f, y = self._batch(client, examples)
        probs = _softmax(f @ W.T)
        probs[np.arange(y.size), y] -= 1.0
        grad = (probs.T @ f) / y.size + self._l2 * W
        return grad.ravel() + self._tilts[client]


class MLPObjective(Objective):
    """One-hidden-layer tanh classifier with hand-written backprop.

    Parameter packing order: W1 (h, p), b1 (h), W2 (C, h), b2 (C).
    """

    kind = "mlp1"

    def __init__(self, shards: ClassShards, hidden: int, l2: float = 0.0):
        if hidden < 1:
            raise ValueError("hidden must be >= 1")
        self._shards = shards
        self._classes = shards.class_means.shape[0]
        self._p = shards.class_means.shape[1]
        self._h = hidden
        self._l2 = l2
        self.dim = hidden * self._p + hidden + self._classes * hidden + self._classes
        self.n_clients = len(shards.features)

    def shard_size(self, client: int) -> int:
        return self._shards.features[client].shape[0]

    def _unpack(self, x):
        h, p, c = self._h, self._p, self._classes
        o = 0
        w1 = x[o:o + h * p].reshape(h, p); o += h * p
        b1 = x[o:o + h]; o += h
        w2 = x[o:o + c * h].reshape(c, h); o += c * h
        b2 = x[o:o + c]
        return w1, b1, w2, b2

    def _batch(self, client, examples):
        f = self._shards.features[client]
        y = self._shards.labels[client]
        if examples is None:
            return f, y
        return f[examples], y[examples]

    def client_loss(self, client: int, x: np.ndarray) -> float:
        self.check_dim(x)
        w1, b1, w2, b2 = self._unpack(x)
        f, y = self._batch(client, None)
        a = np.tanh(f @ w1.T + b1)
        probs = _softmax(a @ w2.T + b2)
        return _cross_entropy(probs, y) + 0.5 * self._l2 * float(x @ x)

    def client_gradient(self, client, x, examples=None):
        self.check_dim(x)
        w1, b1, w2, b2 = self._unpack(x)
        f, y = self._batch(client, examples)
        m = y.size
        a = np.tanh(f @ w1.T + b1)
        probs = _softmax(a @ w2.T + b2)
        probs[np.arange(m), y] -= 1.0
        dlogits = probs / m
        dw2 = dlogits.T @ a
        db2 = dlogits.sum(axis=0)
        da = dlogits @ w2
        dz = da * (1.0 - a * a)
        dw1 = dz.T @ f
        db1 = dz.sum(axis=0)
        grad = np.concatenate([dw1.ravel(), db1, dw2.ravel(), db2])
        if self._l2:
            grad = grad + self._l2 * x
        return grad


def _centered_unit_offsets(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """n vectors with zero mean across clients and mean squared norm ~= 1."""
    z = rng.standard_normal((n, d))
    z = z - z.mean(axis=0, keepdims=True)
    return z / np.sqrt(d)


def make_synthetic_dataset(
    spec: DatasetSpec,
    kind: str = "logistic",
    *,
    heterogeneity: float = 0.0,
    condition: float = 1.0,
    l2: float = 1e-3,
    hidden: int = 16,
    iid_exact: bool = False,
) -> Objective:
    """Build an objective of the requested kind from one dataset spec.

    For the classification kinds the shards are Dirichlet-skewed Gaussian
    class data. For the quadratic kind each client's target center is the
    same Dirichlet mixture applied to shared anchor vectors, so ``alpha``
    controls heterogeneity uniformly across kinds. ``iid_exact`` recenters
    quadratic shards onto a common mean so the cross-client gradient
    variance is exactly zero while per-example noise is kept.
    """
    spec.validate()
    if heterogeneity < 0:
        raise ValueError("heterogeneity must be >= 0")
    if kind == "quadratic":
        if condition < 1:
            raise ValueError("condition must be >= 1")
        d = spec.feature_dim
        g = rngmod.substream(spec.seed, rngmod.DATA, 1)
        anchors = g.standard_normal((spec.classes, d)) / np.sqrt(d)
        props = g.dirichlet(np.full(spec.classes, spec.dirichlet_alpha), size=spec.n_clients)
        centers = props @ anchors
        if heterogeneity > 0:
            centers = centers + heterogeneity * _centered_unit_offsets(spec.n_clients, d, g)
        jitter = spec.noise_scale / np.sqrt(d)
        targets = [
            centers[i] + jitter * g.standard_normal((spec.examples_per_client, d))
            for i in range(spec.n_clients)
        ]
        if iid_exact:
            common = np.mean([t.mean(axis=0) for t in targets], axis=0)
            targets = [t - t.mean(axis=0) + common for t in targets]
        curvature = np.logspace(0.0, np.log10(condition), d) if condition > 1 else np.ones(d)
        return QuadraticObjective(targets, curvature)
    if kind == "logistic":
        shards = sample_class_shards(spec)
        tilts = None
        if heterogeneity > 0:
            g = rngmod.substream(spec.seed, rngmod.DATA, 2)
            tilts = heterogeneity * _centered_unit_offsets(
                spec.n_clients, spec.classes * spec.feature_dim, g
            )
        return LogisticObjective(shards, l2=l2, tilts=tilts)
    if kind == "mlp1":
        shards = sample_class_shards(spec)
        return MLPObjective(shards, hidden=hidden, l2=l2)
    raise ValueError(f"unknown objective kind: {kind!r}")


def full_gradient(obj: Objective, x: np.ndarray) -> np.ndarray:
    """Exact gradient of the global objective: the client average, summed in
    ascending client order for bit determinism."""
    obj.check_dim(x)
    acc = np.zeros(obj.dim)
    for i in range(obj.n_clients):
        acc += obj.client_gradient(i, x)
    return acc / obj.n_clients


def client_full_gradient(obj: Objective, client: int, x: np.ndarray) -> np.ndarray:
    return obj.client_gradient(client, x)


def stochastic_gradient(
    obj: Objective,
    client: int,
    x: np.ndarray,
    batch_size: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Gradient on a uniform without-replacement mini-batch of the client's
    shard. A batch size exceeding the shard is clamped to the full shard."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if client < 0 or client >= obj.n_clients:
        raise ValueError(f"client index {client} out of range")
    m = obj.shard_size(client)
    b = min(batch_size, m)
    idx = rng.choice(m, size=b, replace=False)
    return obj.client_gradient(client, x, examples=idx)


def measure_heterogeneity(obj: Objective, x: np.ndarray) -> float:
    """Cross-client gradient variance (1/n) sum_i ||grad f_i - grad f||^2."""
    g = full_gradient(obj, x)
    total = 0.0
    for i in range(obj.n_clients):
        diff = obj.client_gradient(i, x) - g
        total += float(diff @ diff)
    return total / obj.n_clients
