"""Unregularised optimal transport and Wasserstein distances."""

from dataclasses import dataclass
import itertools

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .errors import NumericalError
from .measures import Coupling, CostMatrix, MARGINAL_TOL, build_cost


@dataclass(frozen=True)
class ExactSolution:
    coupling: Coupling
    value: float
    method: str


def _cost_values(c):
    return c.values if isinstance(c, CostMatrix) else np.asarray(c, dtype=float)


def _is_monotone_case(c, mu, nu):
    # sorted north-west-corner plan is optimal for h(x - y) with h convex on R
    return (
        isinstance(c, CostMatrix)
        and mu.dim == 1
        and nu.dim == 1
        and (c.family == "l1_sum" or (c.family == "lp_power" and c.p >= 1))
    )


def monotone_plan(a, b):
    """North-west-corner plan for weight vectors ``a``, ``b`` in the given order."""
    m, n = len(a), len(b)
    P = np.zeros((m, n))
    ca = np.concatenate([[0.0], np.cumsum(a)])
    cb = np.concatenate([[0.0], np.cumsum(b)])
    # normalise so both cumulative sums end at exactly the same value
    ca /= ca[-1]
    cb /= cb[-1]
    i = j = 0
    while i < m and j < n:
        lo = max(ca[i], cb[j])
        hi = min(ca[i + 1], cb[j + 1])
        if hi > lo:
            P[i, j] = hi - lo
        if ca[i + 1] <= cb[j + 1]:
            i += 1
        else:
            j += 1
    return P


def _solve_monotone(mu, nu):
    ia = np.argsort(mu.atoms[:, 0], kind="stable")
    ib = np.argsort(nu.atoms[:, 0], kind="stable")
    Ps = monotone_plan(mu.weights[ia], nu.weights[ib])
    P = np.zeros_like(Ps)
    P[np.ix_(ia, ib)] = Ps
    return P


def _solve_lp(C, a, b):
    m, n = C.shape
    rows = sp.kron(sp.eye(m), np.ones((1, n)))
    cols = sp.kron(np.ones((1, m)), sp.eye(n))
    # the last column constraint is implied by the others
    A = sp.vstack([rows, cols]).tocsr()[:-1]
    rhs = np.concatenate([a, b])[:-1]
    res = linprog(
        C.ravel(),
        A_eq=A,
        b_eq=rhs,
        bounds=(0, None),
        method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise NumericalError(f"transport LP failed: {res.message}")
    return np.clip(res.x.reshape(m, n), 0.0, None)


def solve_exact(c, mu, nu):
    """Solve the Monge-Kantorovich problem between discrete measures.

    One-dimensional instances with convex translation-invariant cost use the
    sorted (monotone) coupling; everything else goes through a dual-simplex
    LP, which returns a vertex of the transport polytope.

    Raises
    ------
    NumericalError
        If the returned plan violates the marginals by more than 1e-9.
    """
    C = _cost_values(c)
    if C.shape != (mu.size, nu.size):
        raise ValueError(f"cost shape {C.shape} does not match measures ({mu.size}, {nu.size})")
    if _is_monotone_case(c, mu, nu):
        P, method = _solve_monotone(mu, nu), "monotone"
    else:
        P, method = _solve_lp(C, mu.weights, nu.weights), "lp"
    row = np.max(np.abs(P.sum(axis=1) - mu.weights))
    col = np.max(np.abs(P.sum(axis=0) - nu.weights))
    if max(row, col) > MARGINAL_TOL:
        raise NumericalError(f"exact plan residuals too large: row {row:.3g}, column {col:.3g}")
    pi = Coupling(P, mu, nu)
    return ExactSolution(pi, float(np.sum(C * P)), method)


def wasserstein_p(mu, nu, p=1.0):
    """p-Wasserstein distance with ground metric ``|x - y|_2``."""
    if p < 1:
        raise ValueError("Wasserstein order must be >= 1")
    if mu.dim != nu.dim:
        raise ValueError(f"atom dimensions differ: {mu.dim} vs {nu.dim}")
    c = build_cost(mu, nu, "lp_power", p)
    val = solve_exact(c, mu, nu).value
    return max(val, 0.0) ** (1.0 / p)


def coupling_cost_p(pi, sigma, p=1.0):
    """Cost matrix ``|x - x'|^p + |y - y'|^p`` between the atoms of two plans."""
    from .measures import pairwise_distance

    dx = pairwise_distance(pi.left.atoms, sigma.left.atoms) ** p
    dy = pairwise_distance(pi.right.atoms, sigma.right.atoms) ** p
    m, n = pi.shape
    k, l = sigma.shape
    return (dx[:, None, :, None] + dy[None, :, None, :]).reshape(m * n, k * l)


def coupling_wasserstein_p(pi, sigma, p=1.0):
    """W_p between two plans on the product space with additive cost.

    The ground cost is ``|x - x'|^p + |y - y'|^p``.
    """
    C = coupling_cost_p(pi, sigma, p)
    a = np.clip(pi.weight_matrix.ravel(), 0.0, None)
    b = np.clip(sigma.weight_matrix.ravel(), 0.0, None)
    # plans are only feasible to ~1e-12; renormalise so the LP is consistent
    a, b = a / a.sum(), b / b.sum()
    ia, ib = a > 0, b > 0
    P = _solve_lp(C[np.ix_(ia, ib)], a[ia], b[ib])
    val = float(np.sum(C[np.ix_(ia, ib)] * P))
    return max(val, 0.0) ** (1.0 / p)


def bruteforce_permutation(C):
    """Minimal cost over permutation plans of a square equal-weight instance.

    Returns ``(value, permutation)``; the value is the mean matched cost.
    Exhaustive, so only for small n.
    """
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    if C.shape != (n, n):
        raise ValueError("permutation search needs a square cost matrix")
    if n > 8:
        raise ValueError("permutation search is limited to n <= 8")
    best, best_perm = np.inf, None
    idx = np.arange(n)
    for perm in itertools.permutations(range(n)):
        v = C[idx, perm].sum()
        if v < best:
            best, best_perm = v, perm
    return best / n, np.array(best_perm)
