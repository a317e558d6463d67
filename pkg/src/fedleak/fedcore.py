"""FedAvg server loop and the local mini-batch SGD client update."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from . import kernels
from .models import ModelSpec, init_params, loss

__all__ = [
    "Aggregation",
    "ClientDataset",
    "TrainConfig",
    "Batch",
    "ModelUpdate",
    "TrainingTrace",
    "partition_data",
    "sgd_step",
    "client_update",
    "fedavg_round",
    "run_training",
    "global_loss",
    "load_client_csv",
]


class Aggregation(str, Enum):
    SIZE_WEIGHTED = "size-weighted"
    UNIFORM_DELTA = "uniform-delta"


@dataclass(frozen=True)
class ClientDataset:
    """Client ``k``'s samples as an ``(n, p)`` feature matrix and ``(n,)`` labels."""

    X: np.ndarray
    y: np.ndarray
    client_id: int = 0

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.shape[0] < 1 or X.size == 0:
            raise ValueError("client dataset is empty")
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite values")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def samples(self) -> Iterator[tuple[np.ndarray, float]]:
        for i in range(self.n):
            yield self.X[i], float(self.y[i])


@dataclass(frozen=True)
class TrainConfig:
    num_clients: int = 1
    rounds: int = 1
    local_epochs: int = 1
    batch_size: int = 1
    lr: float = 0.1
    aggregation: Aggregation = Aggregation.SIZE_WEIGHTED
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "aggregation", Aggregation(self.aggregation))
        if min(self.num_clients, self.local_epochs, self.batch_size) < 1:
            raise ValueError("num_clients, local_epochs and batch_size must be >= 1")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if not self.lr >= 0:
            raise ValueError("lr must be non-negative")


class Batch(NamedTuple):
    indices: np.ndarray
    X: np.ndarray
    y: np.ndarray


@dataclass
class ModelUpdate:
    delta: np.ndarray
    theta_before: np.ndarray
    theta_after: np.ndarray
    round: int
    client: int
    epochs: int
    batch_plan: list[list[np.ndarray]] = field(default_factory=list)

    def to_record(self) -> dict:
        return {
            "round": self.round,
            "client": self.client,
            "epochs": self.epochs,
            "theta": self.theta_before.tolist(),
            "delta": self.delta.tolist(),
            "batch_plan": [[b.tolist() for b in epoch] for epoch in self.batch_plan],
        }


@dataclass
class TrainingTrace:
    """``thetas[t]`` is the global model entering round ``t + 1``; ``updates[t]``
    holds the client updates computed from ``thetas[t]``."""

    thetas: list[np.ndarray]
    updates: list[list[ModelUpdate]]

    def records(self) -> Iterator[dict]:
        for round_updates in self.updates:
            for u in round_updates:
                yield u.to_record()


def _epoch_seed(seed: int, round_index: int, client_id: int) -> int:
    # Partition streams are keyed by (seed, round, client); epoch goes to partition_data.
    return int(np.random.SeedSequence([seed, round_index, client_id]).generate_state(1)[0])


def partition_data(dataset: ClientDataset, B: int, seed: int, epoch_index: int) -> list[Batch]:
    """Seeded shuffle into ``ceil(n / B)`` batches; the last one may be short."""
    if B < 1:
        raise ValueError("batch size must be >= 1")
    n = dataset.n
    rng = np.random.default_rng([seed, epoch_index])
    order = rng.permutation(n)
    m = math.ceil(n / B)
    out = []
    for b in range(m):
        idx = order[b * B : (b + 1) * B]
        out.append(Batch(idx, dataset.X[idx], dataset.y[idx]))
    return out


def sgd_step(spec: ModelSpec, theta, batch, eta: float) -> np.ndarray:
    """``theta - (eta / |batch|) * sum_b grad_theta(theta, x_b, y_b)``."""
    X, y = batch[-2], batch[-1]
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    if X.shape[1] != spec.input_dim:
        raise ValueError(f"batch has {X.shape[1]} features, model expects {spec.input_dim}")
    return kernels.sgd_pass(spec, theta, X, y, eta, [0, X.shape[0]])


def client_update(
    spec: ModelSpec,
    dataset: ClientDataset,
    theta_global,
    config: TrainConfig,
    round_index: int = 0,
) -> tuple[np.ndarray, ModelUpdate]:
    if dataset.p != spec.input_dim:
        raise ValueError(f"dataset has p={dataset.p}, model expects {spec.input_dim}")
    theta_g = np.array(theta_global, dtype=float)
    seed = _epoch_seed(config.seed, round_index, dataset.client_id)
    theta = theta_g.copy()
    plan = []
    for e in range(config.local_epochs):
        batches = partition_data(dataset, config.batch_size, seed, e)
        order = np.concatenate([b.indices for b in batches])
        bounds = np.cumsum([0] + [len(b.indices) for b in batches])
        theta = kernels.sgd_pass(
            spec, theta, dataset.X[order], dataset.y[order], config.lr, bounds
        )
        plan.append([b.indices for b in batches])
    update = ModelUpdate(
        delta=theta - theta_g,
        theta_before=theta_g,
        theta_after=theta,
        round=round_index,
        client=dataset.client_id,
        epochs=config.local_epochs,
        batch_plan=plan,
    )
    return theta, update


def fedavg_round(
    spec: ModelSpec,
    clients: Sequence[ClientDataset],
    theta_t,
    config: TrainConfig,
    round_index: int = 0,
) -> tuple[np.ndarray, list[ModelUpdate]]:
    """One communication round with full client participation.

    ``size-weighted`` returns ``sum_k (n_k / N) theta_k``;
    ``uniform-delta`` returns ``theta_t + mean_k delta_k``.
    """
    if not clients:
        raise ValueError("no clients")
    theta_t = np.asarray(theta_t, dtype=float)
    results = [client_update(spec, c, theta_t, config, round_index) for c in clients]
    updates = [u for _, u in results]
    if config.aggregation is Aggregation.SIZE_WEIGHTED:
        N = sum(c.n for c in clients)
        theta_next = sum((c.n / N) * th for c, (th, _) in zip(clients, results))
    else:
        theta_next = theta_t + sum(u.delta for u in updates) / len(updates)
    return np.asarray(theta_next, dtype=float), updates


def run_training(
    spec: ModelSpec,
    clients: Sequence[ClientDataset],
    config: TrainConfig,
    theta0=None,
) -> TrainingTrace:
    theta = init_params(spec, config.seed) if theta0 is None else np.array(theta0, dtype=float)
    thetas = [theta]
    updates = []
    for t in range(1, config.rounds + 1):
        theta, round_updates = fedavg_round(spec, clients, theta, config, t)
        thetas.append(theta)
        updates.append(round_updates)
    return TrainingTrace(thetas, updates)


def global_loss(spec: ModelSpec, clients: Sequence[ClientDataset], theta) -> float:
    """``(1/K) sum_k (1/n_k) sum_i loss(theta, x_i, y_i)``."""
    per_client = [np.mean([loss(spec, theta, x, y) for x, y in c.samples()]) for c in clients]
    return float(np.mean(per_client))


def load_client_csv(path: str | Path, client_id: int = 0, header: bool | None = None) -> ClientDataset:
    """One sample per row, label in the last column. A non-numeric first row is a header."""
    with open(path, newline="") as f:
        rows = [r for r in csv.reader(f) if r]
    if header is None:
        try:
            [float(v) for v in rows[0]]
            header = False
        except ValueError:
            header = True
    data = np.array([[float(v) for v in r] for r in rows[int(header) :]])
    if data.ndim != 2 or data.shape[1] < 2:
        raise ValueError(f"{path}: need at least one feature column and a label column")
    return ClientDataset(data[:, :-1], data[:, -1], client_id)
