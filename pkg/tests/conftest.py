import numpy as np
import pytest

from fedleak.models import ModelSpec

SPECS = {
    "linear": ModelSpec("linear-regression", 3),
    "linear-nobias": ModelSpec("linear-regression", 2, bias=False),
    "logistic": ModelSpec("logistic-regression", 5),
    "mlp1-reg": ModelSpec("mlp1", 2, hidden_dim=4, output_dim=1),
    "mlp1-cls": ModelSpec("mlp1", 3, hidden_dim=5, output_dim=3),
}


def random_label(spec, rng):
    if spec.is_classifier:
        return float(rng.integers(0, spec.num_classes))
    return float(rng.standard_normal())


def random_labels(spec, rng, n):
    return np.array([random_label(spec, rng) for _ in range(n)])


def central_diff(f, v, h=1e-6):
    """Independent oracle: central differences of a scalar or vector map."""
    v = np.asarray(v, dtype=float)
    cols = []
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h
        cols.append((np.asarray(f(v + e)) - np.asarray(f(v - e))) / (2 * h))
    return np.stack(cols, axis=-1)


@pytest.fixture(params=sorted(SPECS))
def spec(request):
    return SPECS[request.param]
