"""Pure-numpy kernels; same signatures as the compiled ``_ckernels`` module.

Every kernel takes the model layout as ``(kind, p, hidden, out, bias)`` with
``kind`` 0 = linear, 1 = logistic, 2 = mlp1, then a C-contiguous float64
parameter vector, an ``(n, p)`` feature matrix and an ``(n,)`` label vector.
"""

import numpy as np

LINEAR, LOGISTIC, MLP1 = 0, 1, 2


def _sum_grad(kind, p, hidden, out, bias, theta, X, Y):
    if kind != MLP1:
        Xh = np.hstack([X, np.ones((X.shape[0], 1))]) if bias else X
        z = Xh @ theta
        if kind == LINEAR:
            r = z - Y
        else:
            ez = np.exp(-np.abs(z))
            r = np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez)) - Y
        return Xh.T @ r

    h, o = hidden, out
    i = h * p
    W1 = theta[:i].reshape(h, p)
    b1 = theta[i : i + h]
    W2 = theta[i + h : i + h + o * h].reshape(o, h)
    b2 = theta[i + h + o * h :]
    A = np.tanh(X @ W1.T + b1)
    O = A @ W2.T + b2
    if o == 1:
        delta = O - Y[:, None]
    else:
        delta = np.exp(O - O.max(axis=1, keepdims=True))
        delta /= delta.sum(axis=1, keepdims=True)
        delta[np.arange(X.shape[0]), Y.astype(np.intp)] -= 1.0
    dh = (delta @ W2) * (1.0 - A * A)
    return np.concatenate(
        [(dh.T @ X).ravel(), dh.sum(axis=0), (delta.T @ A).ravel(), delta.sum(axis=0)]
    )


def mean_grad(kind, p, hidden, out, bias, theta, X, Y):
    return _sum_grad(kind, p, hidden, out, bias, theta, X, Y) / X.shape[0]


def sgd_pass(kind, p, hidden, out, bias, theta, X, Y, eta, bounds):
    """One epoch: a step on each consecutive slice ``X[bounds[i]:bounds[i+1]]``."""
    theta = np.array(theta, dtype=float)
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        g = _sum_grad(kind, p, hidden, out, bias, theta, X[lo:hi], Y[lo:hi])
        theta -= (eta / (hi - lo)) * g
    return theta


def local_descent(kind, p, hidden, out, bias, theta, X, Y, eta, epochs):
    """``epochs`` full-batch steps on a single batch."""
    theta = np.array(theta, dtype=float)
    scale = eta / X.shape[0]
    for _ in range(epochs):
        theta -= scale * _sum_grad(kind, p, hidden, out, bias, theta, X, Y)
    return theta


def update_jacobian_fd(kind, p, hidden, out, bias, theta, X, Y, eta, epochs, h):
    """Central differences of the single-batch update w.r.t. every feature."""
    n = X.shape[0]
    J = np.empty((theta.shape[0], n * p))
    Xw = np.array(X, dtype=float)
    for b in range(n):
        for c in range(p):
            x0 = Xw[b, c]
            Xw[b, c] = x0 + h
            up = local_descent(kind, p, hidden, out, bias, theta, Xw, Y, eta, epochs) - theta
            Xw[b, c] = x0 - h
            dn = local_descent(kind, p, hidden, out, bias, theta, Xw, Y, eta, epochs) - theta
            Xw[b, c] = x0
            J[:, b * p + c] = (up - dn) / (2.0 * h)
    return J
