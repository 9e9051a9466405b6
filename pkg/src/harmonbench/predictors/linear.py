"""L2-regularized logistic regression and ridge regression."""

from __future__ import annotations

import numpy as np
from scipy.special import log_softmax, softmax

from ..errors import ConvergenceError


def logistic_objective(params, X, Y, C):
    """Penalized negative log-likelihood and its gradient.

    ``params`` is the flattened ``(K, p + 1)`` coefficient block (last column
    is the unpenalized intercept); ``Y`` is the ``(n, K)`` one-hot target.
    With ``K == 1`` the model is the binary sigmoid parametrization and ``Y``
    is a single 0/1 column.
    """
    n, p = X.shape
    K = Y.shape[1]
    W = params.reshape(K, p + 1)
    Xb = np.hstack([X, np.ones((n, 1))])
    logits = Xb @ W.T
    if K == 1:
        z = logits[:, 0]
        y = Y[:, 0]
        # log(1 + exp(z)) - y z, computed stably
        nll = np.sum(np.logaddexp(0.0, z) - y * z)
        resid = (_sigmoid(z) - y)[:, None]
    else:
        lsm = log_softmax(logits, axis=1)
        nll = -np.sum(Y * lsm)
        resid = np.exp(lsm) - Y
    grad = C * (resid.T @ Xb)
    pen = W[:, :p]
    f = C * nll + 0.5 * np.sum(pen * pen)
    grad[:, :p] += pen
    return float(f), grad.ravel()


def _sigmoid(z):
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _hessian(params, X, K, C):
    n, p = X.shape
    W = params.reshape(K, p + 1)
    Xb = np.hstack([X, np.ones((n, 1))])
    logits = Xb @ W.T
    d = p + 1
    if K == 1:
        s = _sigmoid(logits[:, 0])
        H = C * (Xb.T * (s * (1 - s))) @ Xb
    else:
        P = softmax(logits, axis=1)
        H = np.zeros((K * d, K * d))
        for a in range(K):
            for b in range(a, K):
                w = P[:, a] * ((a == b) - P[:, b])
                block = C * (Xb.T * w) @ Xb
                H[a * d:(a + 1) * d, b * d:(b + 1) * d] = block
                if a != b:
                    H[b * d:(b + 1) * d, a * d:(a + 1) * d] = block.T
    reg = np.tile(np.r_[np.ones(p), 0.0], K)
    return H + np.diag(reg)


def fit_logistic(X, Y, C=1.0, gtol=1e-6, max_iter=200):
    """Newton's method with backtracking line search.

    Stops once the gradient norm drops below ``gtol``. The full-softmax
    intercepts are only identified up to a common shift, so the Newton system
    is solved in the least-squares sense.
    """
    n, p = X.shape
    K = Y.shape[1]
    params = np.zeros(K * (p + 1))
    f, g = logistic_objective(params, X, Y, C)
    for it in range(max_iter):
        gnorm = np.linalg.norm(g)
        if gnorm < gtol:
            return params.reshape(K, p + 1), it
        H = _hessian(params, X, K, C)
        step = np.linalg.lstsq(H, -g, rcond=None)[0]
        slope = g @ step
        if slope >= 0:
            step = -g
            slope = -gnorm**2
        t = 1.0
        while True:
            cand = params + t * step
            f_new, g_new = logistic_objective(cand, X, Y, C)
            if f_new <= f + 1e-4 * t * slope or t < 1e-12:
                break
            t *= 0.5
        if f_new > f:
            # no descent possible in floating point; we are at the optimum
            # to machine precision
            break
        params, f, g = cand, f_new, g_new
    gnorm = np.linalg.norm(g)
    if gnorm < max(gtol, 1e-9 * (1.0 + abs(f))):
        return params.reshape(K, p + 1), max_iter
    raise ConvergenceError(f"logistic regression did not converge (gradient norm {gnorm:.3g})", last_change=gnorm)


def logistic_proba(W, X):
    X = np.asarray(X, dtype=float)
    logits = X @ W[:, :-1].T + W[:, -1]
    if W.shape[0] == 1:
        p1 = _sigmoid(logits[:, 0])
        return np.column_stack([1.0 - p1, p1])
    return softmax(logits, axis=1)


def fit_ridge(X, y, alpha=1.0):
    """Closed-form ridge with an unpenalized intercept.

    Returns ``(weights, intercept)``. The weights solve
    ``(Xcᵀ Xc + alpha I) w = Xcᵀ yc`` on column-centred data.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    yc = y - y_mean
    A = Xc.T @ Xc + alpha * np.eye(X.shape[1])
    w = np.linalg.solve(A, Xc.T @ yc)
    return w, float(y_mean - x_mean @ w)
