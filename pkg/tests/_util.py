"""Shared builders for the test suite."""

import numpy as np
import scipy.sparse as sp

from dictpbdw import InnerProductSpace


def random_spd(rng, n, shift=None):
    a = rng.standard_normal((n, n))
    return a @ a.T + (n if shift is None else shift) * np.eye(n)


def laplacian_1d(n):
    main = 2.0 * np.ones(n)
    off = -np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") * (n + 1)


def random_space(rng, n):
    return InnerProductSpace(random_spd(rng, n))


def dense_u_norm(gram, x):
    gram = gram.toarray() if sp.issparse(gram) else gram
    return float(np.sqrt(x @ gram @ x))


def fista_lasso(C, w, alpha, x0=None, tol=1e-13, max_iter=200_000):
    """Proximal-gradient oracle with adaptive restart for 1/2||Cx-w||^2 + alpha||x||_1."""
    L = np.linalg.norm(C, 2) ** 2
    x = np.zeros(C.shape[1]) if x0 is None else x0.copy()
    y, t = x.copy(), 1.0

    def obj(z):
        r = C @ z - w
        return 0.5 * r @ r + alpha * np.abs(z).sum()

    prev = obj(x)
    for it in range(max_iter):
        g = C.T @ (C @ y - w)
        z = y - g / L
        x_new = np.sign(z) * np.maximum(np.abs(z) - alpha / L, 0.0)
        if (y - x_new) @ (x_new - x) > 0:
            t, y = 1.0, x_new.copy()
        else:
            t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
            y = x_new + (t - 1) / t_new * (x_new - x)
            t = t_new
        x = x_new
        if it % 50 == 0:
            cur = obj(x)
            if abs(prev - cur) <= tol * max(abs(cur), 1e-300):
                break
            prev = cur
    return x, obj(x)
