"""Small differentiable models with exact first and mixed second derivatives.

Three model kinds are supported:

``linear-regression``
    ``0.5 * (theta . x_hat - y)**2``
``logistic-regression``
    binary cross-entropy on ``sigmoid(theta . x_hat)`` with ``y`` in {0, 1}
``mlp1``
    one tanh hidden layer; squared error when ``output_dim == 1``, softmax
    cross-entropy over integer labels otherwise.

``x_hat`` is ``x`` with a constant 1 appended when ``spec.bias`` is set. The
bias feature is internal; derivatives with respect to the input only cover
the ``input_dim`` user-visible features.

The mlp1 parameter vector is laid out as ``[W1 (hidden x p, row major), b1,
W2 (out x hidden, row major), b2]``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np

__all__ = [
    "ModelKind",
    "ModelSpec",
    "GradCheckReport",
    "init_params",
    "loss",
    "grad_theta",
    "grad_x",
    "mixed_jacobian",
    "check_gradients",
    "save_params_csv",
    "load_params_csv",
]


class ModelKind(str, Enum):
    LINEAR = "linear-regression"
    LOGISTIC = "logistic-regression"
    MLP1 = "mlp1"


@dataclass(frozen=True)
class ModelSpec:
    """Architecture descriptor; ``param_dim`` is derived, never stored."""

    kind: ModelKind
    input_dim: int
    hidden_dim: int = 0
    output_dim: int = 1
    bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.output_dim < 1:
            raise ValueError(f"output_dim must be >= 1, got {self.output_dim}")
        if self.kind is ModelKind.MLP1:
            if self.hidden_dim < 1:
                raise ValueError("mlp1 needs hidden_dim >= 1")
        elif self.output_dim != 1:
            raise ValueError(f"{self.kind.value} has a scalar output")

    @property
    def param_dim(self) -> int:
        p = self.input_dim
        if self.kind is ModelKind.MLP1:
            h, o = self.hidden_dim, self.output_dim
            return p * h + h + h * o + o
        return p + int(self.bias)

    @property
    def is_classifier(self) -> bool:
        return self.kind is ModelKind.LOGISTIC or (
            self.kind is ModelKind.MLP1 and self.output_dim > 1
        )

    @property
    def num_classes(self) -> int:
        """Size of the label set (0 for regression)."""
        if self.kind is ModelKind.LOGISTIC:
            return 2
        if self.kind is ModelKind.MLP1 and self.output_dim > 1:
            return self.output_dim
        return 0

    def fan_in(self) -> int:
        return self.input_dim + int(self.bias and self.kind is not ModelKind.MLP1)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "input_dim": self.input_dim,
            "hidden_dim": self.hidden_dim,
            "output_dim": self.output_dim,
            "bias": self.bias,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelSpec":
        spec = cls(
            kind=ModelKind(d["kind"]),
            input_dim=int(d["input_dim"]),
            hidden_dim=int(d.get("hidden_dim", 0)),
            output_dim=int(d.get("output_dim", 1)),
            bias=bool(d.get("bias", True)),
        )
        if "param_dim" in d and int(d["param_dim"]) != spec.param_dim:
            raise ValueError(
                f"stored param_dim {d['param_dim']} != derived {spec.param_dim}"
            )
        return spec


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error_theta: float
    max_rel_error_x: float
    ok: bool
    message: str = ""


# -- helpers -----------------------------------------------------------------


def _check(spec: ModelSpec, theta, x) -> tuple[np.ndarray, np.ndarray]:
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    if theta.shape != (spec.param_dim,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({spec.param_dim},)")
    if x.shape != (spec.input_dim,):
        raise ValueError(f"x has shape {x.shape}, expected ({spec.input_dim},)")
    return theta, x


def _augment(spec: ModelSpec, x: np.ndarray) -> np.ndarray:
    return np.append(x, 1.0) if spec.bias else x


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + np.exp(-z))
    e = np.exp(z)
    return e / (1.0 + e)


def _unpack_mlp(spec: ModelSpec, theta: np.ndarray):
    p, h, o = spec.input_dim, spec.hidden_dim, spec.output_dim
    i = 0
    W1 = theta[i : i + h * p].reshape(h, p)
    i += h * p
    b1 = theta[i : i + h]
    i += h
    W2 = theta[i : i + o * h].reshape(o, h)
    i += o * h
    b2 = theta[i : i + o]
    return W1, b1, W2, b2


def _label(spec: ModelSpec, y) -> float:
    y = float(y)
    if not np.isfinite(y):
        raise ValueError("label must be finite")
    if spec.num_classes and not (y.is_integer() and 0 <= y < spec.num_classes):
        raise ValueError(f"label {y} outside {{0..{spec.num_classes - 1}}}")
    return y


def _mlp_forward(spec, theta, x, y):
    W1, b1, W2, b2 = _unpack_mlp(spec, theta)
    a = np.tanh(W1 @ x + b1)
    out = W2 @ a + b2
    if spec.output_dim == 1:
        delta = out - y
        S = np.eye(1)
    else:
        s = np.exp(out - out.max())
        s /= s.sum()
        delta = s.copy()
        delta[int(y)] -= 1.0
        S = np.diag(s) - np.outer(s, s)
    return W1, W2, a, out, delta, S


# -- operations --------------------------------------------------------------


def init_params(spec: ModelSpec, seed: int) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per layer, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    if spec.kind is not ModelKind.MLP1:
        r = 1.0 / np.sqrt(spec.fan_in())
        return rng.uniform(-r, r, size=spec.param_dim)
    p, h, o = spec.input_dim, spec.hidden_dim, spec.output_dim
    r1, r2 = 1.0 / np.sqrt(p), 1.0 / np.sqrt(h)
    return np.concatenate(
        [
            rng.uniform(-r1, r1, size=h * p + h),
            rng.uniform(-r2, r2, size=o * h + o),
        ]
    )


def loss(spec: ModelSpec, theta, x, y) -> float:
    theta, x = _check(spec, theta, x)
    y = _label(spec, y)
    if spec.kind is ModelKind.LINEAR:
        r = theta @ _augment(spec, x) - y
        return 0.5 * r * r
    if spec.kind is ModelKind.LOGISTIC:
        z = theta @ _augment(spec, x)
        return float(np.logaddexp(0.0, z) - y * z)
    W1, b1, W2, b2 = _unpack_mlp(spec, theta)
    out = W2 @ np.tanh(W1 @ x + b1) + b2
    if spec.output_dim == 1:
        return 0.5 * float(out[0] - y) ** 2
    m = out.max()
    return float(m + np.log(np.exp(out - m).sum()) - out[int(y)])


def grad_theta(spec: ModelSpec, theta, x, y) -> np.ndarray:
    theta, x = _check(spec, theta, x)
    y = _label(spec, y)
    if spec.kind is not ModelKind.MLP1:
        xh = _augment(spec, x)
        z = theta @ xh
        r = z - y if spec.kind is ModelKind.LINEAR else _sigmoid(z) - y
        return r * xh
    W1, W2, a, _, delta, _ = _mlp_forward(spec, theta, x, y)
    dh = (W2.T @ delta) * (1.0 - a * a)
    return np.concatenate([np.outer(dh, x).ravel(), dh, np.outer(delta, a).ravel(), delta])


def grad_x(spec: ModelSpec, theta, x, y) -> np.ndarray:
    theta, x = _check(spec, theta, x)
    y = _label(spec, y)
    p = spec.input_dim
    if spec.kind is not ModelKind.MLP1:
        z = theta @ _augment(spec, x)
        r = z - y if spec.kind is ModelKind.LINEAR else _sigmoid(z) - y
        return r * theta[:p]
    W1, W2, a, _, delta, _ = _mlp_forward(spec, theta, x, y)
    return W1.T @ ((W2.T @ delta) * (1.0 - a * a))


def mixed_jacobian(spec: ModelSpec, theta, x, y) -> np.ndarray:
    """d x p matrix of d(grad_theta)_a / d x_c, analytic for every kind."""
    theta, x = _check(spec, theta, x)
    y = _label(spec, y)
    p = spec.input_dim
    if spec.kind is not ModelKind.MLP1:
        xh = _augment(spec, x)
        w = theta[:p]
        z = theta @ xh
        if spec.kind is ModelKind.LINEAR:
            r, dr = z - y, 1.0
        else:
            s = _sigmoid(z)
            r, dr = s - y, s * (1.0 - s)
        M = dr * np.outer(xh, w)
        M[:p] += r * np.eye(p)
        return M

    W1, W2, a, _, delta, S = _mlp_forward(spec, theta, x, y)
    h, o = spec.hidden_dim, spec.output_dim
    da = (1.0 - a * a)[:, None] * W1  # d a / d x, (h, p)
    ddelta = S @ W2 @ da  # d delta / d x, (o, p)
    g = W2.T @ delta
    dg = W2.T @ ddelta
    dh = g * (1.0 - a * a)
    ddh = (1.0 - a * a)[:, None] * dg - (2.0 * g * a)[:, None] * da  # (h, p)

    # grad W1[j, c] = dh_j x_c
    dW1 = ddh[:, None, :] * x[None, :, None]
    dW1[:, np.arange(p), np.arange(p)] += dh[:, None]
    # grad W2[k, j] = delta_k a_j
    dW2 = ddelta[:, None, :] * a[None, :, None] + delta[:, None, None] * da[None, :, :]
    return np.concatenate(
        [dW1.reshape(h * p, p), ddh, dW2.reshape(o * h, p), ddelta], axis=0
    )


def _central(f, v: np.ndarray, h: float) -> np.ndarray:
    cols = []
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h
        cols.append((np.asarray(f(v + e)) - np.asarray(f(v - e))) / (2.0 * h))
    return np.stack(cols, axis=-1)


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0))
    diff = np.max(np.abs(a - b), initial=0.0)
    if scale < 1e-12:
        return float(diff)
    return float(diff / scale)


def check_gradients(spec: ModelSpec, theta, x, y, h: float = 1e-6) -> GradCheckReport:
    """Compare analytic gradients to central differences of :func:`loss`.

    Relative error is the largest absolute entry difference divided by the
    largest entry magnitude of either vector (absolute when both are ~0).
    """
    if h <= 0:
        raise ValueError("h must be positive")
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(x)) and np.isfinite(float(y))):
        return GradCheckReport(np.nan, np.nan, False, "non-finite input")
    fd_t = _central(lambda t: loss(spec, t, x, y), theta, h)
    fd_x = _central(lambda v: loss(spec, theta, v, y), x, h)
    e_t = _rel_err(grad_theta(spec, theta, x, y), fd_t)
    e_x = _rel_err(grad_x(spec, theta, x, y), fd_x)
    ok = bool(np.isfinite(e_t) and np.isfinite(e_x))
    return GradCheckReport(e_t, e_x, ok, "" if ok else "non-finite error")


def save_params_csv(path: str | Path, theta) -> None:
    """One parameter per row, single column ``theta``."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["theta"])
        for v in np.asarray(theta, dtype=float):
            w.writerow([repr(float(v))])


def load_params_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return np.array([float(r[0]) for r in rows[1:]])
