"""Legendre-Gauss-Lobatto quadrature and summation-by-parts derivative operators."""

from dataclasses import dataclass

import numpy as np

MAX_DEGREE = 15


class InvalidDegreeError(ValueError):
    pass


def _check_degree(N):
    if not isinstance(N, (int, np.integer)) or isinstance(N, bool):
        raise InvalidDegreeError(f"polynomial degree must be an integer, got {N!r}")
    if N < 1 or N > MAX_DEGREE:
        raise InvalidDegreeError(f"polynomial degree must be in 1..{MAX_DEGREE}, got {N}")


def _legendre_and_previous(N, x):
    """Return (P_N(x), P_{N-1}(x)) by the three-term recurrence."""
    p_prev = np.ones_like(x)
    p = x.copy()
    for k in range(2, N + 1):
        p_prev, p = p, ((2 * k - 1) * x * p - (k - 1) * p_prev) / k
    return p, p_prev


def lgl_nodes_weights(N):
    """Nodes and weights of the (N+1)-point Legendre-Gauss-Lobatto rule on [-1, 1].

    The interior nodes are the roots of ``(1 - x**2) P_N'(x)``, found by Newton
    iteration started from the Chebyshev-Gauss-Lobatto points.
    """
    _check_degree(N)
    x = -np.cos(np.pi * np.arange(N + 1) / N)
    for _ in range(100):
        p, p_prev = _legendre_and_previous(N, x)
        # Newton step for x P_N - P_{N-1}, which shares its roots with (1-x^2) P_N'
        dx = (x * p - p_prev) / ((N + 1) * p)
        x = x - dx
        if np.max(np.abs(dx)) < 1e-15:
            break
    x[0], x[-1] = -1.0, 1.0
    # enforce exact symmetry about the origin
    x = 0.5 * (x - x[::-1])
    if N % 2 == 0:
        x[N // 2] = 0.0
    p, _ = _legendre_and_previous(N, x)
    w = 2.0 / (N * (N + 1) * p**2)
    w = 0.5 * (w + w[::-1])
    return x, w


def barycentric_weights(x):
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    return 1.0 / np.prod(diff, axis=1)


def derivative_matrix(x):
    """Collocation derivative matrix ``D[j, k] = l_k'(x_j)`` for the Lagrange basis on ``x``."""
    lam = barycentric_weights(x)
    n = len(x)
    D = np.zeros((n, n))
    for j in range(n):
        for k in range(n):
            if j != k:
                D[j, k] = lam[k] / lam[j] / (x[j] - x[k])
        # negative sum trick keeps row sums exactly zero
        D[j, j] = -np.sum(D[j, :])
    return D


def interpolation_matrix(x_from, x_to):
    """Matrix mapping nodal values on ``x_from`` to the Lagrange interpolant's values on ``x_to``."""
    x_from = np.asarray(x_from, dtype=float)
    x_to = np.atleast_1d(np.asarray(x_to, dtype=float))
    lam = barycentric_weights(x_from)
    V = np.zeros((len(x_to), len(x_from)))
    for r, xt in enumerate(x_to):
        d = xt - x_from
        hit = np.flatnonzero(np.abs(d) < 1e-15)
        if hit.size:
            V[r, hit[0]] = 1.0
        else:
            t = lam / d
            V[r] = t / t.sum()
    return V


@dataclass(frozen=True)
class SbpOperators:
    """LGL nodes and weights with the SBP matrices ``Q``, ``B`` and ``S = 2Q - B``.

    ``D`` is the collocation derivative matrix, ``Q = diag(weights) @ D``.
    """

    N: int
    nodes: np.ndarray
    weights: np.ndarray
    D: np.ndarray
    Q: np.ndarray
    B: np.ndarray
    S: np.ndarray

    @property
    def n(self):
        return self.N + 1

    def sbp_defect(self):
        """Largest entry-wise violation among the SBP identities."""
        N = self.N
        e0 = np.zeros(N + 1)
        e0[0] = 1.0
        eN = np.zeros(N + 1)
        eN[N] = 1.0
        Q, S = self.Q, self.S
        flip = Q[::-1, ::-1]
        return max(
            np.max(np.abs(Q + Q.T - self.B)),
            np.max(np.abs(Q.sum(axis=1))),
            np.max(np.abs(Q.sum(axis=0) - (eN - e0))),
            np.max(np.abs(S + S.T)),
            np.max(np.abs(S + S[::-1, ::-1])),
            np.max(np.abs(Q + flip)),
            np.max(np.abs(S - (Q - Q.T))),
        )


def build_sbp(N):
    nodes, weights = lgl_nodes_weights(N)
    D = derivative_matrix(nodes)
    Q = weights[:, None] * D
    B = np.zeros((N + 1, N + 1))
    B[0, 0] = -1.0
    B[N, N] = 1.0
    S = 2.0 * Q - B
    for a in (nodes, weights, D, Q, B, S):
        a.setflags(write=False)
    return SbpOperators(N=N, nodes=nodes, weights=weights, D=D, Q=Q, B=B, S=S)


_cache = {}


def sbp(N):
    """Cached :func:`build_sbp`; the returned operators are read-only."""
    if N not in _cache:
        _cache[N] = build_sbp(N)
    return _cache[N]


def legendre_vandermonde(x, N):
    """Vandermonde matrix of orthonormal Legendre polynomials 0..N evaluated at ``x``."""
    V = np.polynomial.legendre.legvander(np.asarray(x, dtype=float), N)
    return V * np.sqrt(np.arange(N + 1) + 0.5)
