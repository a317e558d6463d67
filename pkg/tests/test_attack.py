import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedleak.attack import (
    AttackConfig,
    ReconstructionTrace,
    attack_objective,
    distance,
    match_samples,
    reconstruct,
    regret_statistic,
    write_trace_csv,
)
from fedleak.fedcore import ModelUpdate, TrainConfig
from fedleak.jacobian import single_batch_update
from fedleak.models import ModelSpec, init_params

LOGI = ModelSpec("logistic-regression", 5)


def _target(spec, B, seed, lr=0.1, E=1):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(B, spec.input_dim))
    y = rng.integers(0, 2, B).astype(float)
    th = init_params(spec, seed)
    return th, X, y, single_batch_update(spec, th, X, y, lr, E), TrainConfig(batch_size=B, lr=lr, local_epochs=E)


def test_distance_examples():
    u = np.array([1.0, 2.0, 3.0])
    assert distance(u, u, "squared-l2")[0] == 0.0
    assert distance(u, u, "cosine")[0] == pytest.approx(0.0, abs=1e-15)
    assert distance(2 * u, u, "cosine")[0] == pytest.approx(0.0, abs=1e-15)
    e1 = np.array([0.5, 0.0, 0.0])
    assert distance(u + e1, u, "squared-l2")[0] == pytest.approx(0.25)
    assert distance(np.zeros(3), u, "cosine")[0] == 1.0


@pytest.mark.parametrize("metric", ["squared-l2", "cosine"])
def test_distance_gradient_matches_fd(metric):
    rng = np.random.default_rng(1)
    u, v = rng.standard_normal(4), rng.standard_normal(4)
    _, g = distance(u, v, metric)
    h = 1e-6
    fd = [(distance(u + h * e, v, metric)[0] - distance(u - h * e, v, metric)[0]) / (2 * h) for e in np.eye(4)]
    assert np.allclose(g, fd, atol=1e-8)


@pytest.mark.parametrize("metric", ["squared-l2", "cosine"])
def test_objective_zero_at_true_batch(metric):
    th, X, y, tgt, train = _target(LOGI, 3, 0)
    assert attack_objective(LOGI, th, X, y, tgt, train, metric) <= 1e-15
    upd = ModelUpdate(tgt, th, th + tgt, 0, 0, 1)
    assert attack_objective(LOGI, th, X, y, upd, train, metric) <= 1e-15


def test_fixed_point_when_started_at_truth():
    th, X, y, tgt, train = _target(LOGI, 2, 1)
    tr = reconstruct(LOGI, th, tgt, y, train, AttackConfig(rounds=20), initial_batch=X)
    assert np.all(tr.objective <= 1e-28)
    assert np.max(np.abs(tr.batches - X)) <= 1e-12


def test_recovers_single_sample():
    th, X, y, tgt, train = _target(LOGI, 1, 2)
    cfg = AttackConfig(rounds=2000, init_center=0.5, init_scale=0.5, seed=3)
    tr = reconstruct(LOGI, th, tgt, y, train, cfg)
    assert np.linalg.norm(tr.final_batch - X) / np.linalg.norm(X) <= 1e-2
    assert tr.rounds == 2000 and not tr.diverged


def test_underdetermined_batch_is_worse():
    errs = {}
    for B in (1, 4):
        th, X, y, tgt, train = _target(LOGI, B, 5)
        tr = reconstruct(LOGI, th, tgt, y, train, AttackConfig(rounds=1500, init_center=0.5, init_scale=0.5, seed=1))
        perm, _ = match_samples(tr.final_batch, X)
        errs[B] = np.linalg.norm(tr.final_batch[perm] - X) / np.linalg.norm(X)
    assert errs[4] > 10 * errs[1]


def test_plain_gd_line_search_is_monotone():
    th, X, y, tgt, train = _target(LOGI, 2, 3)
    tr = reconstruct(LOGI, th, tgt, y, train, AttackConfig(optimizer="plain-gd", step_size=50.0, rounds=100))
    obj = np.concatenate([[tr.initial_objective], tr.objective])
    assert np.all(np.diff(obj) <= 0)


def test_adagrad_and_analytic_routes_run():
    th, X, y, tgt, train = _target(LOGI, 1, 4)
    a = reconstruct(LOGI, th, tgt, y, train, AttackConfig(optimizer="adaptive-per-coordinate", rounds=50, gradient="fd"))
    b = reconstruct(LOGI, th, tgt, y, train, AttackConfig(optimizer="adaptive-per-coordinate", rounds=50, gradient="analytic"))
    assert np.allclose(a.objective, b.objective, rtol=1e-5, atol=1e-12)
    with pytest.raises(ValueError):
        reconstruct(LOGI, th, tgt, y, TrainConfig(batch_size=1, local_epochs=2), AttackConfig(gradient="analytic"))


def test_label_reconstruction_runs():
    spec = ModelSpec("linear-regression", 2)
    th, X, y, tgt, train = _target(spec, 1, 6)
    tr = reconstruct(spec, th, tgt, y, train, AttackConfig(rounds=300, reconstruct_labels=True, init_center=0.5))
    assert tr.labels.shape == (300, 1) and tr.objective[-1] < tr.initial_objective
    cls = ModelSpec("mlp1", 2, hidden_dim=2, output_dim=3)
    with pytest.raises(ValueError):
        reconstruct(cls, init_params(cls, 0), np.zeros(cls.param_dim), [0.0], train,
                    AttackConfig(reconstruct_labels=True))


def test_divergence_is_flagged():
    # logistic updates are bounded; a linear model's update grows with |x|^2
    spec = ModelSpec("linear-regression", 3)
    th, X, y, tgt, train = _target(spec, 1, 7)
    tr = reconstruct(spec, th, tgt, y, train, AttackConfig(optimizer="adaptive-moment", step_size=1e7, rounds=50),
                     initial_batch=X + 1e-3)
    assert tr.diverged and tr.rounds < 50


def test_cosine_objective_is_scale_invariant():
    # With E = 1 the update is -eta * mean gradient, so doubling eta scales both the
    # target and every simulated update; cosine sees only directions.
    th, X, y, tgt, train = _target(LOGI, 2, 8)
    Xc = X + 0.05
    a = attack_objective(LOGI, th, Xc, y, tgt, train, "cosine")
    b = attack_objective(LOGI, th, Xc, y, 2 * tgt, train, "cosine")
    assert abs(a - b) <= 1e-12
    train2 = TrainConfig(batch_size=2, lr=0.2)
    c = attack_objective(LOGI, th, Xc, y, single_batch_update(LOGI, th, X, y, 0.2, 1), train2, "cosine")
    assert abs(a - c) <= 1e-6


def test_match_samples_examples():
    X = np.random.default_rng(0).standard_normal((4, 3))
    perm, cost = match_samples(X, X)
    assert list(perm) == [0, 1, 2, 3] and cost == 0.0
    perm, _ = match_samples(X[::-1], X)
    assert list(perm) == [3, 2, 1, 0]
    with pytest.raises(ValueError):
        match_samples(X, X[:3])


def test_regret_statistic():
    tr = ReconstructionTrace(np.zeros((4, 1, 1)), np.zeros((4, 1)), np.zeros(4), np.zeros(4), np.zeros((1, 1)), 0.0)
    assert regret_statistic(tr) == (0.0, 0.0)
    tr.mismatch = np.full(4, 0.5)
    assert regret_statistic(tr) == pytest.approx((2.0, 1.0))


def test_trace_csv(tmp_path):
    th, X, y, tgt, train = _target(LOGI, 2, 9)
    tr = reconstruct(LOGI, th, tgt, y, train, AttackConfig(rounds=5))
    write_trace_csv(tmp_path / "t.csv", tr, X, 2.0)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "round,objective,mismatch,mean_matched_distance" and len(lines) == 6


def test_reconstruct_is_deterministic():
    th, X, y, tgt, train = _target(LOGI, 2, 10)
    a = reconstruct(LOGI, th, tgt, y, train, AttackConfig(rounds=30, seed=4))
    b = reconstruct(LOGI, th, tgt, y, train, AttackConfig(rounds=30, seed=4))
    assert np.array_equal(a.batches, b.batches) and np.array_equal(a.objective, b.objective)


@settings(max_examples=40, deadline=None)
@given(B=st.integers(1, 6), seed=st.integers(0, 10**6))
def test_matching_equals_exhaustive_enumeration(B, seed):
    rng = np.random.default_rng(seed)
    R, O = rng.standard_normal((B, 2)), rng.standard_normal((B, 2))
    _, cost = match_samples(R, O)
    brute = min(sum(np.linalg.norm(R[pi[i]] - O[i]) for i in range(B)) for pi in itertools.permutations(range(B)))
    assert cost == pytest.approx(brute, abs=1e-12)


def test_hungarian_branch_agrees_with_known_optimum():
    rng = np.random.default_rng(3)
    O = rng.standard_normal((12, 3))
    shuffle = rng.permutation(12)
    perm, cost = match_samples(O[shuffle], O)
    assert cost == pytest.approx(0.0, abs=1e-12)
    assert np.array_equal(O[shuffle][perm], O)
