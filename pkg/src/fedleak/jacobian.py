"""Jacobian of the single-batch model update with respect to the batch features.

The update map is ``X -> delta_theta(X)``: ``E`` full-batch gradient steps of
size ``eta`` on one batch of ``B`` samples starting from ``theta``. Its
Jacobian ``J`` has shape ``(d, B * p)`` with column ``b * p + c`` holding the
derivative with respect to feature ``c`` of sample ``b``. Directions in the
kernel of ``J`` move the batch without changing the update to first order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .fedcore import TrainConfig
from .models import ModelSpec, mixed_jacobian

__all__ = [
    "DEFAULT_RANK_TOL",
    "UpdateJacobian",
    "CollisionCertificate",
    "single_batch_update",
    "update_jacobian_fd",
    "update_jacobian_analytic_e1",
    "numerical_rank",
    "null_space_basis",
    "construct_collision",
    "check_sufficient_condition",
    "write_jacobian_csv",
]

DEFAULT_RANK_TOL = 1e-10


@dataclass(frozen=True)
class UpdateJacobian:
    J: np.ndarray
    singular_values: np.ndarray
    numerical_rank: int
    tolerance: float
    method: str  # "finite-difference" | "analytic-e1"

    @property
    def kernel_dim(self) -> int:
        return self.J.shape[1] - self.numerical_rank


@dataclass(frozen=True)
class CollisionCertificate:
    base_batch: np.ndarray
    labels: np.ndarray
    delta_x: np.ndarray
    perturbed_batch: np.ndarray
    update_gap: float
    delta_x_norm: float
    base_update_norm: float

    @property
    def relative_gap(self) -> float:
        if self.base_update_norm == 0.0:
            return float("inf") if self.update_gap > 0 else 0.0
        return self.update_gap / self.base_update_norm

    def to_record(self) -> dict:
        return {
            "base_batch": self.base_batch.tolist(),
            "labels": self.labels.tolist(),
            "delta_x": self.delta_x.tolist(),
            "perturbed_batch": self.perturbed_batch.tolist(),
            "update_gap": self.update_gap,
            "delta_x_norm": self.delta_x_norm,
            "base_update_norm": self.base_update_norm,
        }


def _batch(spec: ModelSpec, X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[1] != spec.input_dim or X.shape[0] != y.shape[0]:
        raise ValueError(f"batch shapes {X.shape}, {y.shape} do not fit p={spec.input_dim}")
    return X, y


def single_batch_update(spec: ModelSpec, theta, X, y, eta: float, epochs: int) -> np.ndarray:
    """Model update after ``epochs`` local epochs on one batch (m = 1)."""
    X, y = _batch(spec, X, y)
    theta = np.asarray(theta, dtype=float)
    return kernels.local_descent(spec, theta, X, y, eta, epochs) - theta


def numerical_rank(J, tol: float = DEFAULT_RANK_TOL) -> tuple[int, np.ndarray]:
    """Count of singular values above ``tol * max(singular value)``."""
    J = np.asarray(J, dtype=float)
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    if not np.all(np.isfinite(J)):
        raise ValueError("matrix has non-finite entries")
    s = np.linalg.svd(J, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0, s
    return int(np.sum(s > tol * s[0])), s


def null_space_basis(J, tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Orthonormal basis of Ker(J) as columns, shape ``(Bp, Bp - rank)``."""
    J = np.asarray(J, dtype=float)
    rank, _ = numerical_rank(J, tol)
    _, _, Vt = np.linalg.svd(J, full_matrices=True)
    return Vt[rank:].T.copy()


def _finish(J: np.ndarray, tol: float, method: str) -> UpdateJacobian:
    if not np.all(np.isfinite(J)):
        raise ValueError("Jacobian has non-finite entries; adjust the step size")
    rank, s = numerical_rank(J, tol)
    return UpdateJacobian(J, s, rank, tol, method)


def update_jacobian_fd(
    spec: ModelSpec,
    X,
    y,
    theta,
    config: TrainConfig,
    h: float = 1e-6,
    tol: float = DEFAULT_RANK_TOL,
) -> UpdateJacobian:
    """Central differences of the full E-epoch single-batch update."""
    if h <= 0:
        raise ValueError("h must be positive")
    X, y = _batch(spec, X, y)
    if X.shape[0] != config.batch_size:
        raise ValueError(f"batch has {X.shape[0]} samples, config.batch_size={config.batch_size}")
    J = kernels.update_jacobian_fd(spec, theta, X, y, config.lr, config.local_epochs, h)
    return _finish(J, tol, "finite-difference")


def update_jacobian_analytic_e1(
    spec: ModelSpec, X, y, theta, eta: float, epochs: int = 1, tol: float = DEFAULT_RANK_TOL
) -> UpdateJacobian:
    """``J = -(eta / B) [mixed_jacobian(x_1) ... mixed_jacobian(x_B)]``.

    Only exact for a single local epoch: with more epochs the intermediate
    parameters depend on the batch too, so callers must use the FD route.
    """
    if epochs != 1:
        raise ValueError("analytic Jacobian is only exact for E = 1; use update_jacobian_fd")
    X, y = _batch(spec, X, y)
    B = X.shape[0]
    blocks = [mixed_jacobian(spec, theta, X[b], y[b]) for b in range(B)]
    J = -(eta / B) * np.concatenate(blocks, axis=1)
    return _finish(J, tol, "analytic-e1")


def construct_collision(
    spec: ModelSpec,
    X,
    y,
    theta,
    config: TrainConfig,
    magnitude: float,
    seed: int,
    tol: float = DEFAULT_RANK_TOL,
    h: float = 1e-6,
    jac: UpdateJacobian | None = None,
) -> CollisionCertificate:
    """Perturb the batch along a random unit kernel direction and measure the gap.

    The gap is measured by re-running the local update on both batches; it is
    second order in ``magnitude`` because the kernel only cancels the linear
    term.
    """
    X, y = _batch(spec, X, y)
    if jac is None:
        jac = update_jacobian_fd(spec, X, y, theta, config, h=h, tol=tol)
    basis = null_space_basis(jac.J, jac.tolerance)
    if basis.shape[1] == 0:
        raise ValueError("Jacobian has a trivial kernel; no collision direction exists")
    rng = np.random.default_rng(seed)
    coef = rng.standard_normal(basis.shape[1])
    direction = basis @ coef
    direction /= np.linalg.norm(direction)
    dx = magnitude * direction
    X2 = X + dx.reshape(X.shape)
    base = single_batch_update(spec, theta, X, y, config.lr, config.local_epochs)
    moved = single_batch_update(spec, theta, X2, y, config.lr, config.local_epochs)
    return CollisionCertificate(
        base_batch=X,
        labels=y,
        delta_x=dx,
        perturbed_batch=X2,
        update_gap=float(np.linalg.norm(moved - base)),
        delta_x_norm=float(np.linalg.norm(dx)),
        base_update_norm=float(np.linalg.norm(base)),
    )


def check_sufficient_condition(d: int, B: int, p: int) -> bool:
    """``d < B * p``: the update Jacobian must then have a non-trivial kernel."""
    if min(d, B, p) < 1:
        raise ValueError("d, B and p must be positive")
    return d < B * p


def write_jacobian_csv(path: str | Path, jac: UpdateJacobian) -> None:
    """Rows of J, then a ``singular_values`` row padded to the column count."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([f"col{j}" for j in range(jac.J.shape[1])])
        for row in jac.J:
            w.writerow([repr(float(v)) for v in row])
        w.writerow(["singular_values"])
        w.writerow([repr(float(v)) for v in jac.singular_values])
