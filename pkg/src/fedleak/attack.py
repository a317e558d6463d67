"""Gradient-inversion attacker.

A semi-honest server that knows the model, ``theta``, the learning rate, the
number of local epochs and the batch size searches for a candidate batch
whose simulated local update matches the update it observed. The search
minimizes ``dist(simulate(candidate), observed)`` with a first-order
optimizer; gradients with respect to the candidate go through the update
Jacobian (finite differences over the unrolled local steps, or the
closed form when only one local epoch is run).
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import kernels
from .fedcore import ModelUpdate, TrainConfig
from .jacobian import single_batch_update, update_jacobian_analytic_e1
from .models import ModelKind, ModelSpec

log = logging.getLogger(__name__)

__all__ = [
    "Metric",
    "OptimizerKind",
    "AttackConfig",
    "ReconstructionTrace",
    "Adam",
    "AdaGrad",
    "distance",
    "attack_objective",
    "reconstruct",
    "match_samples",
    "regret_statistic",
    "write_trace_csv",
]

DIVERGENCE_FACTOR = 1e6
EXHAUSTIVE_MATCH_MAX = 8


class Metric(str, Enum):
    SQUARED_L2 = "squared-l2"
    COSINE = "cosine"


class OptimizerKind(str, Enum):
    PLAIN_GD = "plain-gd"
    ADAGRAD = "adaptive-per-coordinate"
    ADAM = "adaptive-moment"


class Init(str, Enum):
    ZEROS = "zeros"
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class AttackConfig:
    """Attacker settings.

    ``init_center``/``init_scale`` are the mean and standard deviation of the
    gaussian start (or center and half-width for uniform). ``gradient`` picks
    how the objective is differentiated: ``fd``, ``analytic`` (E = 1 only) or
    ``auto`` (analytic when E = 1).
    """

    metric: Metric = Metric.SQUARED_L2
    optimizer: OptimizerKind = OptimizerKind.ADAM
    step_size: float = 0.05
    rounds: int = 2000
    init: Init = Init.GAUSSIAN
    init_center: float = 0.0
    init_scale: float = 1.0
    seed: int = 0
    reconstruct_labels: bool = False
    gradient: str = "fd"
    fd_step: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "metric", Metric(self.metric))
        object.__setattr__(self, "optimizer", OptimizerKind(self.optimizer))
        object.__setattr__(self, "init", Init(self.init))
        if self.rounds < 1:
            raise ValueError("attack rounds must be >= 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.gradient not in ("fd", "analytic", "auto"):
            raise ValueError(f"unknown gradient method {self.gradient!r}")


@dataclass
class ReconstructionTrace:
    """Per-round iterates; row ``t`` is the candidate after ``t + 1`` updates."""

    batches: np.ndarray  # (T, B, p)
    labels: np.ndarray  # (T, B)
    objective: np.ndarray  # (T,)
    mismatch: np.ndarray  # (T,)
    initial_batch: np.ndarray
    initial_objective: float
    diverged: bool = False

    @property
    def rounds(self) -> int:
        return self.objective.shape[0]

    @property
    def final_batch(self) -> np.ndarray:
        return self.batches[-1] if self.rounds else self.initial_batch

    @property
    def final_labels(self) -> np.ndarray:
        return self.labels[-1]


class Adam:
    """Two-moment recursion with bias correction."""

    def __init__(self, lr=0.05, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, z, g):
        if self.m is None:
            self.m = np.zeros_like(z)
            self.v = np.zeros_like(z)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return z - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class AdaGrad:
    def __init__(self, lr=0.05, eps=1e-10):
        self.lr, self.eps = lr, eps
        self.G = None

    def step(self, z, g):
        if self.G is None:
            self.G = np.zeros_like(z)
        self.G += g * g
        return z - self.lr * g / (np.sqrt(self.G) + self.eps)


def distance(u: np.ndarray, v: np.ndarray, metric: Metric) -> tuple[float, np.ndarray]:
    """``dist(u, v)`` and its gradient with respect to ``u``.

    Cosine distance is ``1 - <u, v> / (|u| |v|)``; with a zero-norm argument
    it is defined as 1 with zero gradient.
    """
    metric = Metric(metric)
    if metric is Metric.SQUARED_L2:
        r = u - v
        return float(r @ r), 2.0 * r
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        log.warning("cosine distance with a zero-norm vector; returning 1")
        return 1.0, np.zeros_like(u)
    c = float(u @ v) / (nu * nv)
    grad = -(v / (nu * nv) - c * u / (nu * nu))
    return 1.0 - c, grad


def _target_vector(target) -> np.ndarray:
    if isinstance(target, ModelUpdate):
        return np.asarray(target.delta, dtype=float)
    return np.asarray(target, dtype=float)


def attack_objective(
    spec: ModelSpec,
    theta,
    X,
    y,
    target,
    train: TrainConfig,
    metric: Metric = Metric.SQUARED_L2,
) -> float:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != spec.input_dim:
        raise ValueError(f"candidate has p={X.shape[1]}, model expects {spec.input_dim}")
    u = single_batch_update(spec, theta, X, y, train.lr, train.local_epochs)
    return distance(u, _target_vector(target), metric)[0]


def _use_analytic(spec: ModelSpec, train: TrainConfig, config: AttackConfig) -> bool:
    if config.gradient == "fd":
        return False
    if train.local_epochs != 1:
        if config.gradient == "analytic":
            raise ValueError("analytic attack gradient needs E = 1")
        return False
    return True


def _label_jacobian(spec, theta, X, y, train, h, analytic) -> np.ndarray:
    """d x B derivative of the update with respect to each (scalar) label."""
    B = X.shape[0]
    if analytic and spec.kind is not ModelKind.MLP1:
        # d grad / d y = -x_hat for both linear and logistic losses
        Xh = np.hstack([X, np.ones((B, 1))]) if spec.bias else X
        return (train.lr / B) * Xh.T
    cols = []
    for b in range(B):
        yp, ym = y.copy(), y.copy()
        yp[b] += h
        ym[b] -= h
        up = single_batch_update(spec, theta, X, yp, train.lr, train.local_epochs)
        dn = single_batch_update(spec, theta, X, ym, train.lr, train.local_epochs)
        cols.append((up - dn) / (2.0 * h))
    return np.stack(cols, axis=1)


def _initial_batch(config: AttackConfig, B: int, p: int) -> np.ndarray:
    rng = np.random.default_rng(config.seed)
    if config.init is Init.ZEROS:
        return np.zeros((B, p))
    if config.init is Init.GAUSSIAN:
        return config.init_center + config.init_scale * rng.standard_normal((B, p))
    return rng.uniform(config.init_center - config.init_scale, config.init_center + config.init_scale, (B, p))


def reconstruct(
    spec: ModelSpec,
    theta,
    target,
    labels,
    train: TrainConfig,
    config: AttackConfig,
    initial_batch=None,
) -> ReconstructionTrace:
    """Minimize the gradient-matching objective over a candidate batch.

    ``labels`` are the true labels (batch size ``B = len(labels)``); with
    ``reconstruct_labels`` they only fix ``B`` and the candidate labels are
    optimized as continuous values. Stops early, flagging divergence, if the
    objective leaves the finite range or exceeds ``1e6`` times its start.
    """
    if spec.num_classes > 2 and config.reconstruct_labels:
        raise ValueError("label reconstruction supports scalar-label models only")
    theta = np.asarray(theta, dtype=float)
    target = _target_vector(target)
    y_true = np.asarray(labels, dtype=float).reshape(-1)
    B, p = y_true.shape[0], spec.input_dim
    analytic = _use_analytic(spec, train, config)
    E, eta = train.local_epochs, train.lr
    g_target = -target / (eta * E) if eta > 0 else np.full_like(target, np.nan)
    fd_train = replace(train, batch_size=B)

    X0 = _initial_batch(config, B, p) if initial_batch is None else np.array(initial_batch, float)
    if config.reconstruct_labels:
        y0 = np.full(B, 0.5 if spec.kind is ModelKind.LOGISTIC else 0.0)
    else:
        y0 = y_true.copy()
    nx = B * p

    def evaluate(z):
        X = z[:nx].reshape(B, p)
        y = z[nx:] if config.reconstruct_labels else y_true
        u = single_batch_update(spec, theta, X, y, eta, E)
        obj, du = distance(u, target, config.metric)
        return X, y, obj, du

    def gradient(X, y, du):
        if analytic:
            Jx = update_jacobian_analytic_e1(spec, X, y, theta, eta).J
        else:
            Jx = kernels.update_jacobian_fd(spec, theta, X, y, eta, E, config.fd_step)
        g = Jx.T @ du
        if config.reconstruct_labels:
            Jy = _label_jacobian(spec, theta, X, y, fd_train, config.fd_step, analytic)
            g = np.concatenate([g, Jy.T @ du])
        return g

    z = np.concatenate([X0.ravel(), y0]) if config.reconstruct_labels else X0.ravel().copy()
    X, y, obj, du = evaluate(z)
    initial_obj = obj
    limit = DIVERGENCE_FACTOR * max(initial_obj, np.finfo(float).tiny)

    if config.optimizer is OptimizerKind.ADAM:
        opt = Adam(config.step_size)
    elif config.optimizer is OptimizerKind.ADAGRAD:
        opt = AdaGrad(config.step_size)
    else:
        opt = None

    T = config.rounds
    batches = np.empty((T, B, p))
    ys = np.empty((T, B))
    objs = np.empty(T)
    mism = np.empty(T)
    diverged = False
    t = 0
    for t in range(T):
        g = gradient(X, y, du)
        if opt is None:
            # Armijo backtracking; if no step is accepted the iterate stays put
            alpha, gg = config.step_size, float(g @ g)
            while True:
                cand = z - alpha * g
                Xc, yc, oc, duc = evaluate(cand)
                if oc <= obj - 1e-4 * alpha * gg:
                    z, X, y, obj, du = cand, Xc, yc, oc, duc
                    break
                alpha *= 0.5
                if alpha < 1e-30:
                    break
        else:
            z = opt.step(z, g)
            X, y, obj, du = evaluate(z)
        if not np.isfinite(obj) or obj > limit:
            diverged = True
            log.warning("attack diverged at round %d (objective %g)", t + 1, obj)
            break
        batches[t] = X
        ys[t] = y
        objs[t] = obj
        mism[t] = np.linalg.norm(kernels.mean_grad(spec, theta, X, y) - g_target)
    else:
        t = T
    return ReconstructionTrace(
        batches=batches[:t],
        labels=ys[:t],
        objective=objs[:t],
        mismatch=mism[:t],
        initial_batch=X0,
        initial_objective=float(initial_obj),
        diverged=diverged,
    )


@lru_cache(maxsize=None)
def _permutations(B: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(B))), dtype=np.intp).reshape(-1, B)


def match_samples(reconstructed, original) -> tuple[np.ndarray, float]:
    """Minimum total Euclidean cost pairing.

    Returns ``perm`` with ``reconstructed[perm[i]]`` paired to ``original[i]``,
    and the total cost. Exhaustive up to 8 samples (ties go to the
    lexicographically first permutation), Hungarian assignment beyond.
    """
    R = np.atleast_2d(np.asarray(reconstructed, dtype=float))
    O = np.atleast_2d(np.asarray(original, dtype=float))
    if R.shape != O.shape:
        raise ValueError(f"batch shapes differ: {R.shape} vs {O.shape}")
    cost = np.linalg.norm(O[:, None, :] - R[None, :, :], axis=-1)
    return match_cost_matrix(cost)


def match_cost_matrix(cost) -> tuple[np.ndarray, float]:
    """Optimal assignment for ``cost[i, j]`` = cost of pairing original i with candidate j."""
    cost = np.asarray(cost, dtype=float)
    B = cost.shape[0]
    if B <= EXHAUSTIVE_MATCH_MAX:
        perms = _permutations(B)
        totals = cost[np.arange(B), perms].sum(axis=1)
        best = int(np.argmin(totals))
        return perms[best].copy(), float(totals[best])
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(B, dtype=np.intp)
    perm[rows] = cols
    return perm, float(cost[rows, cols].sum())


def regret_statistic(trace: ReconstructionTrace) -> tuple[float, float]:
    """Cumulative gradient mismatch and its ``sqrt(T)`` normalization."""
    T = trace.rounds
    if T == 0:
        return 0.0, 0.0
    s = float(np.sum(trace.mismatch))
    return s, s / math.sqrt(T)


def write_trace_csv(path: str | Path, trace: ReconstructionTrace, original=None, D=None) -> None:
    """``round, objective, mismatch, mean_matched_distance`` (blank without originals)."""
    dists = None
    if original is not None:
        from .privacy import matched_distances

        dists = matched_distances(trace.batches, original, D).mean(axis=1)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["round", "objective", "mismatch", "mean_matched_distance"])
        for t in range(trace.rounds):
            md = "" if dists is None else repr(float(dists[t]))
            w.writerow([t + 1, repr(float(trace.objective[t])), repr(float(trace.mismatch[t])), md])
