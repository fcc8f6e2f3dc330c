"""Brute-force reference implementations used only by the tests.

Everything here is written from the model definitions with plain loops and
shares no code with the package: outcomes are linear maps of an explicit
parameter vector, unbiasedness is "expected estimate equals the estimand for
every parameter vector", and the optimal estimator is found by minimizing
over the null space of those constraints.
"""

import itertools

import numpy as np
from scipy.linalg import null_space


def in_neighbors(adj, i):
    return [j for j in range(len(adj)) if adj[j][i]]


def degrees(adj, z):
    n = len(z)
    return [sum(int(z[j]) for j in in_neighbors(adj, i)) for i in range(n)]


def components(adj):
    """Components of the graph linking units that share an in-neighbor."""
    n = len(adj)
    link = [[False] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            if i != j and any(adj[k][i] and adj[k][j] for k in range(n)):
                link[i][j] = True
    label = [-1] * n
    c = 0
    for s in range(n):
        if label[s] >= 0:
            continue
        stack = [s]
        label[s] = c
        while stack:
            u = stack.pop()
            for v in range(n):
                if link[u][v] and label[v] < 0:
                    label[v] = c
                    stack.append(v)
        c += 1
    return label


# -- model parameterizations ---------------------------------------------------

class Model:
    """``Y(z) = L(z) @ theta`` and ``estimand = e @ theta`` for free parameters ``theta``."""

    def __init__(self, kind, adj):
        self.kind = kind
        self.adj = [list(map(int, row)) for row in np.asarray(adj)]
        n = self.n = len(self.adj)
        self.index = {}
        self.e = []

        def add(key, est=0.0):
            self.index[key] = len(self.e)
            self.e.append(est)

        for i in range(n):
            if kind in ("SUTVA", "SANIA", "SANASIA"):
                add(("a", i))
                add(("b", i), 1.0 / n)
            if kind == "SANIA":
                for d in range(1, len(in_neighbors(self.adj, i)) + 1):
                    add(("G", i, d))
            elif kind == "SNIA":
                for t in (0, 1):
                    for d in range(len(in_neighbors(self.adj, i)) + 1):
                        add(("f", i, t, d), (1.0 if t else -1.0) / n if d == 0 else 0.0)
            elif kind == "NIA":
                nb = in_neighbors(self.adj, i)
                for t in (0, 1):
                    for pat in itertools.product((0, 1), repeat=len(nb)):
                        add(("f", i, t, pat), (1.0 if t else -1.0) / n if not any(pat) else 0.0)
        if kind == "SANASIA":
            for c in sorted(set(components(self.adj))):
                add(("g", c))
        self.e = np.array(self.e)
        self.P = len(self.e)

    def L(self, z):
        n, kind = self.n, self.kind
        out = np.zeros((n, self.P))
        deg = degrees(self.adj, z)
        comp = components(self.adj) if kind == "SANASIA" else None
        for i in range(n):
            t = int(z[i])
            if kind in ("SUTVA", "SANIA", "SANASIA"):
                out[i, self.index[("a", i)]] = 1.0
                out[i, self.index[("b", i)]] = t
            if kind == "SANIA" and deg[i] > 0:
                out[i, self.index[("G", i, deg[i])]] = 1.0
            elif kind == "SNIA":
                out[i, self.index[("f", i, t, deg[i])]] = 1.0
            elif kind == "NIA":
                pat = tuple(int(z[j]) for j in in_neighbors(self.adj, i))
                out[i, self.index[("f", i, t, pat)]] = 1.0
            elif kind == "SANASIA":
                out[i, self.index[("g", comp[i])]] = deg[i]
        return out


def unbiased_system(model, Z, p):
    """``A @ vec(W) = model.e`` with ``vec(W)[k * n + i] = W[k, i]``."""
    n = model.n
    A = np.zeros((model.P, len(Z) * n))
    for k, z in enumerate(Z):
        A[:, k * n:(k + 1) * n] = p[k] * model.L(z).T
    return A, model.e


def expected_estimate(model, Z, p, W, theta):
    return sum(p[k] * W[k] @ (model.L(z) @ theta) for k, z in enumerate(Z))


# -- priors ------------------------------------------------------------------

class Prior:
    """Prior over an explicit parameter vector with ``Y(z) = M(z) @ xi``."""

    def __init__(self, n, cov, rows):
        self.n = n
        self.cov = np.asarray(cov)
        self._rows = rows

    def M(self, adj, z):
        return self._rows(adj, z)

    def sigma(self, adj, z):
        M = self.M(adj, z)
        return M @ self.cov @ M.T


def _gamma_variances(gamma_var, K):
    if np.ndim(gamma_var) == 0:
        return [gamma_var * d for d in range(1, K + 1)]
    return list(gamma_var)


def prior_unit_sania(n, K, var_alpha=1.0, var_beta=1.0, cov_ab=0.0, gamma_var=1.0,
                     cov_ag=0.0, cov_bg=0.0):
    """Independent units; per unit ``(alpha, beta, Gamma(1..K))``."""
    q = K + 2
    gv = _gamma_variances(gamma_var, K)
    cov = np.zeros((n * q, n * q))
    for i in range(n):
        o = i * q
        cov[o, o], cov[o + 1, o + 1] = var_alpha, var_beta
        cov[o, o + 1] = cov[o + 1, o] = cov_ab
        for d in range(1, K + 1):
            cov[o + 1 + d, o + 1 + d] = gv[d - 1]
            cov[o, o + 1 + d] = cov[o + 1 + d, o] = cov_ag
            cov[o + 1, o + 1 + d] = cov[o + 1 + d, o + 1] = cov_bg

    def rows(adj, z):
        deg = degrees(adj, z)
        M = np.zeros((n, n * q))
        for i in range(n):
            M[i, i * q] = 1.0
            M[i, i * q + 1] = z[i]
            if 0 < deg[i] <= K:
                M[i, i * q + 1 + deg[i]] = 1.0
        return M

    return Prior(n, cov, rows)


def prior_shared_sania(n, K, var_alpha=1.0, var_beta=1.0, cov_ab=0.0, gamma_var=1.0,
                       cov_ag=0.0, cov_bg=0.0, jitter=0.0):
    """One ``(alpha, beta, Gamma(1..K))`` for every unit plus independent alpha noise."""
    q = K + 2
    gv = _gamma_variances(gamma_var, K)
    cov = np.zeros((q + n, q + n))
    cov[0, 0], cov[1, 1] = var_alpha, var_beta
    cov[0, 1] = cov[1, 0] = cov_ab
    for d in range(1, K + 1):
        cov[1 + d, 1 + d] = gv[d - 1]
        cov[0, 1 + d] = cov[1 + d, 0] = cov_ag
        cov[1, 1 + d] = cov[1 + d, 1] = cov_bg
    for i in range(n):
        cov[q + i, q + i] = jitter

    def rows(adj, z):
        deg = degrees(adj, z)
        M = np.zeros((n, q + n))
        for i in range(n):
            M[i, 0] = 1.0
            M[i, 1] = z[i]
            if 0 < deg[i] <= K:
                M[i, 1 + deg[i]] = 1.0
            M[i, q + i] = 1.0
        return M

    return Prior(n, cov, rows)


def prior_sanasia(n, var_alpha=1.0, var_beta=1.0, var_gamma=None):
    var_gamma = 1.0 / n if var_gamma is None else var_gamma
    cov = np.diag([var_alpha, var_beta] * n + [var_gamma])

    def rows(adj, z):
        deg = degrees(adj, z)
        M = np.zeros((n, 2 * n + 1))
        for i in range(n):
            M[i, 2 * i] = 1.0
            M[i, 2 * i + 1] = z[i]
            M[i, 2 * n] = deg[i]
        return M

    return Prior(n, cov, rows)


# -- optimal estimator -------------------------------------------------------

def integrated_objective(sigmas, p, W):
    return float(sum(p[k] * W[k] @ sigmas[k] @ W[k] for k in range(len(p))))


def min_variance_weights(A, b, sigmas, p):
    """Minimize ``sum_k p_k w_k^T Sigma_k w_k`` over ``A w = b`` by null-space reduction.

    Returns ``(W, objective)``; ``W`` is the minimizer of smallest norm when the
    reduced Hessian is singular.
    """
    m, n = len(p), sigmas[0].shape[0]
    w0 = np.linalg.lstsq(A, b, rcond=None)[0]
    if np.linalg.norm(A @ w0 - b) > 1e-8 * max(1.0, np.linalg.norm(b)):
        raise ValueError("infeasible")
    H = np.zeros((m * n, m * n))
    for k in range(m):
        H[k * n:(k + 1) * n, k * n:(k + 1) * n] = p[k] * sigmas[k]
    N = null_space(A)
    if N.shape[1] == 0:
        w = w0
    else:
        t = np.linalg.lstsq(N.T @ H @ N, -N.T @ H @ w0, rcond=None)[0]
        w = w0 + N @ t
        # among minimizers, remove any null-space component H does not see
        K = null_space(H @ N) if N.shape[1] else None
        if K is not None and K.shape[1]:
            NK = N @ K
            w = w - NK @ (NK.T @ w)
    W = w.reshape(m, n)
    return W, integrated_objective(sigmas, p, W)


def ht_oracle(Z, p):
    """Inverse-propensity weights from marginal treatment probabilities, by loops."""
    m, n = len(Z), len(Z[0])
    q = [sum(p[k] for k in range(m) if Z[k][i]) for i in range(n)]
    W = np.zeros((m, n))
    for k in range(m):
        for i in range(n):
            W[k, i] = (1.0 / q[i] if Z[k][i] else -1.0 / (1.0 - q[i])) / n
    return W


def naive_oracle(Z):
    m, n = len(Z), len(Z[0])
    W = np.zeros((m, n))
    for k in range(m):
        n1 = sum(Z[k])
        for i in range(n):
            W[k, i] = 1.0 / n1 if Z[k][i] else -1.0 / (n - n1)
    return W
