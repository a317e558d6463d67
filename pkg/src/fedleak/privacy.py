"""Leakage measurement, gradient distortion and the leakage upper bound.

Leakage of one attacked batch is ``1 - mean_{i,t} |x~_{t,i} - x_i| / D``
over samples ``i`` and attacker rounds ``t``, averaged again over trials.
The upper bound is

    1 + sqrt((ln 2 + poly(B)) / (2 B)) - c_a / (2 D) * Delta

holding with probability ``1 - exp(-poly(B))`` when
``Delta >= 2 c_2 c_b E / (c_a sqrt(T))``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels
from .attack import ReconstructionTrace, match_cost_matrix
from .models import ModelSpec

__all__ = [
    "PolyB",
    "BoundInputs",
    "BoundResult",
    "LeakageReport",
    "DataDomain",
    "LipschitzEstimate",
    "matched_distances",
    "privacy_leakage",
    "distortion_extent",
    "apply_distortion",
    "estimate_lipschitz_constants",
    "estimate_regret_constants",
    "data_diameter",
    "hoeffding_tail",
    "check_bound_precondition",
    "leakage_upper_bound",
    "leakage_report",
]


@dataclass(frozen=True)
class PolyB:
    """``coef * B**exponent``, or ``ln B`` when ``log`` is set."""

    coef: float = 1.0
    exponent: float = 1.0
    log: bool = False

    def __call__(self, B: float) -> float:
        if self.log:
            return math.log(B)
        return self.coef * B**self.exponent

    @property
    def label(self) -> str:
        return "ln" if self.log else f"{self.coef:g}*B^{self.exponent:g}"

    @classmethod
    def parse(cls, text: str) -> "PolyB":
        """Accepts ``ln`` or ``<coef>*B^<exponent>`` (e.g. ``0.5*B^1``)."""
        text = text.strip().replace(" ", "")
        if text in ("ln", "lnB", "log"):
            return cls(log=True)
        m = re.fullmatch(r"([0-9.eE+-]+)\*B\^([0-9.eE+-]+)", text)
        if not m:
            raise ValueError(f"cannot parse poly(B) choice {text!r}")
        return cls(float(m.group(1)), float(m.group(2)))


LN_B = PolyB(log=True)


@dataclass(frozen=True)
class BoundInputs:
    B: int
    delta_k: float
    c_a: float
    c_b: float
    c_0: float
    c_2: float
    E: int
    T: int
    D: float
    poly_B: PolyB = LN_B

    def __post_init__(self):
        if self.B < 1 or self.E < 1 or self.T < 1:
            raise ValueError("B, E and T must be >= 1")
        if not 0 < self.c_a <= self.c_b:
            raise ValueError(f"need 0 < c_a <= c_b, got {self.c_a}, {self.c_b}")
        if self.c_0 > self.c_2:
            raise ValueError(f"need c_0 <= c_2, got {self.c_0}, {self.c_2}")
        if not self.D > 0:
            raise ValueError("D must be positive")
        if self.delta_k < 0:
            raise ValueError("distortion extent must be non-negative")


class BoundResult(NamedTuple):
    bound: float
    tail_probability: float
    precondition_ok: bool


@dataclass
class LeakageReport:
    eps_p: float
    distances: np.ndarray  # normalized, (trials, T, B)
    bound: float
    precondition_ok: bool
    tail_probability: float
    flags: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class DataDomain:
    """Axis-aligned box ``[lo, hi]`` in feature space."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def box(cls, p: int, lo: float = 0.0, hi: float = 1.0) -> "DataDomain":
        return cls(np.full(p, float(lo)), np.full(p, float(hi)))

    @property
    def p(self) -> int:
        return np.asarray(self.lo).shape[0]

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=tuple(np.atleast_1d(size)) + (self.p,))


class LipschitzEstimate(NamedTuple):
    c_a: float
    c_b: float
    skipped: int


def data_diameter(domain: DataDomain) -> float:
    """Euclidean length of the box diagonal."""
    lo, hi = np.asarray(domain.lo, float), np.asarray(domain.hi, float)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValueError("unbounded data domain")
    if np.any(hi < lo):
        raise ValueError("domain has hi < lo")
    D = float(np.linalg.norm(hi - lo))
    if D == 0.0:
        raise ValueError("degenerate domain: D = 0, but D must be > 0")
    return D


def matched_distances(reconstructions, original, D: float | None = None) -> np.ndarray:
    """Per-round, per-sample distances after one optimal slot matching.

    ``reconstructions`` is ``(T, B, p)``. Candidate slots are paired with
    originals once, using the round-averaged (clamped) distance as cost, so
    a slot keeps its identity across rounds. Distances are clamped at ``D``
    and divided by it when ``D`` is given. Returns ``(T, B)``.
    """
    R = np.asarray(reconstructions, dtype=float)
    if R.ndim == 2:
        R = R[None]
    O = np.atleast_2d(np.asarray(original, dtype=float))
    if R.shape[1:] != O.shape:
        raise ValueError(f"reconstruction shape {R.shape} does not fit originals {O.shape}")
    if R.shape[0] == 0:
        raise ValueError("empty reconstruction trace")
    # dist[t, i, j] = |R[t, j] - O[i]|
    dist = np.linalg.norm(R[:, None, :, :] - O[None, :, None, :], axis=-1)
    if D is not None:
        dist = np.minimum(dist, D) / D
    perm, _ = match_cost_matrix(dist.mean(axis=0))
    return dist[:, np.arange(O.shape[0]), perm]


def privacy_leakage(reconstructions: Sequence, originals: Sequence, D: float) -> float:
    """Empirical leakage over trials.

    ``reconstructions[r]`` is a ``(T, B, p)`` array or a
    :class:`ReconstructionTrace`, ``originals[r]`` the matching ``(B, p)``
    batch.
    """
    if not D > 0:
        raise ValueError("D must be positive")
    if len(reconstructions) == 0 or len(reconstructions) != len(originals):
        raise ValueError("need one original batch per non-empty trial")
    per_trial = []
    for R, O in zip(reconstructions, originals):
        if isinstance(R, ReconstructionTrace):
            R = R.batches
        per_trial.append(matched_distances(R, O, D).mean())
    return float(1.0 - np.mean(per_trial))


def distortion_extent(g, g_distorted) -> float:
    g, gd = np.asarray(g, float), np.asarray(g_distorted, float)
    if g.shape != gd.shape:
        raise ValueError(f"shape mismatch {g.shape} vs {gd.shape}")
    return float(np.linalg.norm(g - gd))


def apply_distortion(v, magnitude: float, seed: int) -> np.ndarray:
    """Add a seeded random direction of norm exactly ``magnitude``."""
    if magnitude < 0:
        raise ValueError("magnitude must be non-negative")
    v = np.asarray(v, dtype=float)
    if magnitude == 0:
        return v.copy()
    u = np.random.default_rng(seed).standard_normal(v.shape)
    u /= np.linalg.norm(u)
    return v + magnitude * u


def _draw_labels(spec: ModelSpec, rng, n):
    if spec.num_classes:
        return rng.integers(0, spec.num_classes, n).astype(float)
    return rng.uniform(-1.0, 1.0, n)


def estimate_lipschitz_constants(
    spec: ModelSpec,
    theta,
    domain: DataDomain,
    num_pairs: int,
    seed: int,
    labels=None,
) -> LipschitzEstimate:
    """Min and max of ``|x1 - x2| / |grad(x1) - grad(x2)|`` over random pairs.

    Both points of a pair share a label (drawn from the label set unless
    ``labels`` fixes one per pair or a scalar for all). Pairs come from a
    prefix-stable stream, so more pairs only widen ``[c_a, c_b]``. Pairs
    whose gradients coincide are skipped and counted.
    """
    if num_pairs < 2:
        raise ValueError("num_pairs must be >= 2")
    ss = np.random.SeedSequence(seed)
    x_rng, y_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    P = domain.sample(x_rng, (num_pairs, 2))
    if labels is None:
        Y = _draw_labels(spec, y_rng, num_pairs)
    else:
        Y = np.broadcast_to(np.asarray(labels, dtype=float), (num_pairs,))
    ratios = []
    skipped = 0
    for k in range(num_pairs):
        g1 = kernels.mean_grad(spec, theta, P[k, :1], Y[k : k + 1])
        g2 = kernels.mean_grad(spec, theta, P[k, 1:], Y[k : k + 1])
        gap = np.linalg.norm(g1 - g2)
        dx = np.linalg.norm(P[k, 0] - P[k, 1])
        if gap == 0.0 or dx == 0.0:
            skipped += 1
            continue
        ratios.append(dx / gap)
    if not ratios:
        raise ValueError("all sampled pairs have identical gradients; constants undefined")
    return LipschitzEstimate(float(min(ratios)), float(max(ratios)), skipped)


def estimate_regret_constants(trace: ReconstructionTrace) -> tuple[float, float]:
    """Bracket ``S_t / sqrt(t)`` over every prefix of the mismatch sequence."""
    m = np.asarray(trace.mismatch, dtype=float)
    if m.size == 0:
        raise ValueError("empty trace")
    t = np.arange(1, m.size + 1)
    r = np.cumsum(m) / np.sqrt(t)
    return float(r.min()), float(r.max())


def hoeffding_tail(T: int, eps: float) -> float:
    """``2 exp(-2 T eps^2)``."""
    if T < 1 or eps < 0:
        raise ValueError("need T >= 1 and eps >= 0")
    return 2.0 * math.exp(-2.0 * T * eps * eps)


def bound_threshold(inputs: BoundInputs) -> float:
    return 2.0 * inputs.c_2 * inputs.c_b * inputs.E / (inputs.c_a * math.sqrt(inputs.T))


def check_bound_precondition(inputs: BoundInputs) -> bool:
    return inputs.delta_k >= bound_threshold(inputs)


def leakage_upper_bound(inputs: BoundInputs) -> BoundResult:
    """Evaluate the bound; ``precondition_ok`` flags whether it applies."""
    pb = inputs.poly_B(inputs.B)
    if not pb >= 0:
        raise ValueError(f"poly(B) must be non-negative, got {pb} at B={inputs.B}")
    bound = (
        1.0
        + math.sqrt((math.log(2.0) + pb) / (2.0 * inputs.B))
        - inputs.c_a / (2.0 * inputs.D) * inputs.delta_k
    )
    return BoundResult(bound, math.exp(-pb), check_bound_precondition(inputs))


def leakage_report(
    reconstructions: Sequence, originals: Sequence, inputs: BoundInputs
) -> LeakageReport:
    eps = privacy_leakage(reconstructions, originals, inputs.D)
    dists = np.stack(
        [
            matched_distances(R.batches if isinstance(R, ReconstructionTrace) else R, O, inputs.D)
            for R, O in zip(reconstructions, originals)
        ]
    )
    res = leakage_upper_bound(inputs)
    flags = []
    if inputs.delta_k > 1:
        flags.append("distortion extent above 1")
    if not res.precondition_ok:
        flags.append("bound precondition not met")
    return LeakageReport(eps, dists, res.bound, res.precondition_ok, res.tail_probability, flags)
