"""Synthetic client data from a seeded teacher model, or CSV files."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..fedcore import ClientDataset, load_client_csv
from ..privacy import DataDomain

TEACHERS = ("linear", "logistic", "softmax")


@dataclass(frozen=True)
class SyntheticData:
    """Features uniform in ``[lo, hi]^p``; labels from a random teacher.

    ``linear``: ``y = w.x + b + noise * N(0, 1)``. ``logistic``: ``y`` is a
    Bernoulli draw with probability ``sigmoid(w.x + b)``. ``softmax``: ``y`` is
    a categorical draw over ``num_classes`` logits ``W x + b``.
    """

    input_dim: int
    n_per_client: tuple[int, ...]
    lo: float = 0.0
    hi: float = 1.0
    teacher: str = "linear"
    noise: float = 0.0
    num_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "n_per_client", tuple(int(n) for n in self.n_per_client))
        if self.teacher not in TEACHERS:
            raise ValueError(f"unknown teacher {self.teacher!r}; expected one of {TEACHERS}")
        if self.input_dim < 1 or not self.n_per_client or min(self.n_per_client) < 1:
            raise ValueError("need input_dim >= 1 and at least one sample per client")
        if not (np.isfinite(self.lo) and np.isfinite(self.hi) and self.hi > self.lo):
            raise ValueError("data box must satisfy lo < hi, both finite")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        if self.teacher == "softmax" and self.num_classes < 2:
            raise ValueError("softmax teacher needs num_classes >= 2")

    @property
    def domain(self) -> DataDomain:
        return DataDomain.box(self.input_dim, self.lo, self.hi)


def teacher_params(desc: SyntheticData, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Teacher weights ``(W, b)``; ``W`` is ``(outputs, p)``."""
    rng = np.random.default_rng([seed, 0])
    k = desc.num_classes if desc.teacher == "softmax" else 1
    return rng.standard_normal((k, desc.input_dim)), rng.standard_normal(k)


def generate_synthetic_data(desc: SyntheticData, seed: int) -> list[ClientDataset]:
    W, b = teacher_params(desc, seed)
    clients = []
    for k, n in enumerate(desc.n_per_client):
        rng = np.random.default_rng([seed, 1, k])
        X = rng.uniform(desc.lo, desc.hi, size=(n, desc.input_dim))
        z = X @ W.T + b
        if desc.teacher == "linear":
            y = z[:, 0] + desc.noise * rng.standard_normal(n)
        elif desc.teacher == "logistic":
            y = (rng.uniform(size=n) < 1.0 / (1.0 + np.exp(-z[:, 0]))).astype(float)
        else:
            P = np.exp(z - z.max(axis=1, keepdims=True))
            P /= P.sum(axis=1, keepdims=True)
            u = rng.uniform(size=(n, 1))
            y = (u > np.cumsum(P, axis=1)).sum(axis=1).astype(float)
            y = np.minimum(y, desc.num_classes - 1)
        clients.append(ClientDataset(X, y, client_id=k))
    return clients


def load_csv_clients(paths) -> list[ClientDataset]:
    return [load_client_csv(path, client_id=k) for k, path in enumerate(paths)]
