"""Quantisation of measures and shadows of couplings."""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from . import qcalc
from .exact_ot import coupling_wasserstein_p, solve_exact, wasserstein_p
from .measures import (
    Coupling,
    DiscreteMeasure,
    StochasticKernel,
    build_cost,
    disintegrate,
    pairwise_distance,
    push_kernel,
)

LLOYD_STARTS = 16


@dataclass(frozen=True)
class QuantizationResult:
    quantized: DiscreteMeasure
    achieved_wp: float
    n: int
    p: float


@dataclass(frozen=True)
class ShadowResult:
    shadow: Coupling
    wp_change: float
    divergence_before: float
    divergence_after: float
    kappa_optimal: bool = True


def _cell_representative(x, w, p):
    # argmin_a sum w |x - a|^p over the cell
    if p == 2:
        return float(np.dot(w, x) / w.sum())
    if p == 1:
        cw = np.cumsum(w)
        k = int(np.searchsorted(cw, 0.5 * cw[-1]))
        # even split between two atoms: every point between is optimal, take the midpoint
        if k + 1 < len(x) and np.isclose(cw[k], 0.5 * cw[-1], rtol=1e-12, atol=1e-15):
            return 0.5 * (x[k] + x[k + 1])
        return float(x[k])
    res = minimize_scalar(
        lambda a: float(np.dot(w, np.abs(x - a) ** p)),
        bounds=(x.min(), x.max()),
        method="bounded",
        options={"xatol": 1e-12},
    )
    return float(res.x)


def _quantize_1d(mu, n, p):
    order = np.argsort(mu.atoms[:, 0], kind="stable")
    x = mu.atoms[order, 0]
    w = mu.weights[order]
    cum = np.concatenate([[0.0], np.cumsum(w)])
    cum /= cum[-1]
    reps = []
    for k in range(n):
        lo, hi = k / n, (k + 1) / n
        # mass of each atom falling inside the quantile cell [lo, hi]
        part = np.clip(np.minimum(cum[1:], hi) - np.maximum(cum[:-1], lo), 0.0, None)
        keep = part > 0
        reps.append(_cell_representative(x[keep], part[keep], p))
    reps = np.array(reps)
    # merge coincident representatives so atoms stay distinct
    uniq, inv = np.unique(reps, return_inverse=True)
    weights = np.bincount(inv, minlength=uniq.size) / n
    return DiscreteMeasure(uniq, weights / weights.sum())


def _lloyd(X, w, n, p, rng, iters=100):
    k0 = rng.choice(X.shape[0], size=n, replace=False, p=None)
    centers = X[k0].copy()
    for _ in range(iters):
        D = pairwise_distance(X, centers)
        lab = np.argmin(D, axis=1)
        new = centers.copy()
        for k in range(n):
            sel = lab == k
            if not np.any(sel) or w[sel].sum() == 0:
                continue
            if p == 1:
                new[k] = _weiszfeld(X[sel], w[sel], centers[k])
            else:
                new[k] = w[sel] @ X[sel] / w[sel].sum()
        if np.allclose(new, centers, rtol=0, atol=1e-13):
            break
        centers = new
    D = pairwise_distance(X, centers)
    lab = np.argmin(D, axis=1)
    mass = np.bincount(lab, weights=w, minlength=n)
    keep = mass > 0
    obj = float(np.sum(w * D[np.arange(X.shape[0]), lab] ** p))
    return centers[keep], mass[keep], obj


def _weiszfeld(X, w, start, iters=50):
    y = start.copy()
    for _ in range(iters):
        d = np.maximum(np.linalg.norm(X - y, axis=1), 1e-15)
        y_new = (w / d) @ X / np.sum(w / d)
        if np.linalg.norm(y_new - y) < 1e-13:
            return y_new
        y = y_new
    return y


def quantize(mu, n, p=1.0, seed=0, starts=LLOYD_STARTS):
    """Approximate ``mu`` by a measure with at most ``n`` atoms.

    In one dimension the atoms are the W_p-optimal representatives of the
    ``n`` equal-mass quantile cells (median for p = 1, mean for p = 2).
    In higher dimension the best of ``starts`` seeded Lloyd runs is kept
    (lowest objective, ties to the earliest start).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if n >= mu.size:
        return QuantizationResult(mu, 0.0, mu.size, p)
    if mu.dim == 1:
        quant = _quantize_1d(mu, n, p)
    else:
        rng = np.random.default_rng(seed)
        best = None
        for s in range(starts):
            centers, mass, obj = _lloyd(mu.atoms, mu.weights, n, p, np.random.default_rng(rng.integers(2**63)))
            if best is None or obj < best[2]:
                best = (centers, mass, obj)
        centers, mass, _ = best
        quant = DiscreteMeasure(centers, mass / mass.sum())
    return QuantizationResult(quant, wasserstein_p(mu, quant, p), n, p)


def _kernel(kappa):
    return disintegrate(kappa)[1]


def _divergence(q, pi):
    ref = np.outer(pi.left.weights, pi.right.weights)
    return qcalc.tsallis_divergence(q, np.clip(pi.weight_matrix, 0.0, None), ref)


def shadow_matrix(P, K1, K2):
    """``sum_ij P_ij K1_ia K2_jb``: push a plan through ``K1 (x) K2``."""
    return K1.T @ P @ K2


def shadow(pi, kappa1, kappa2, q=2.0, p=1.0, compute_wp=True, kappa_optimal=True):
    """Shadow of ``pi`` along couplings ``kappa1 in Pi(mu1, mu1~)`` and
    ``kappa2 in Pi(mu2, mu2~)``.

    Returns the shadow in Pi(mu1~, mu2~) with the W_p distance to ``pi``
    (product-space cost ``|x - x'|^p + |y - y'|^p``) and the divergence to
    the product of marginals before and after.
    """
    tol = 1e-9
    if (
        kappa1.left.size != pi.left.size
        or kappa2.left.size != pi.right.size
        or np.max(np.abs(kappa1.left.weights - pi.left.weights)) > tol
        or np.max(np.abs(kappa2.left.weights - pi.right.weights)) > tol
    ):
        raise ValueError("kappa couplings must start from the marginals of pi")
    K1, K2 = _kernel(kappa1), _kernel(kappa2)
    S = shadow_matrix(np.clip(pi.weight_matrix, 0.0, None), K1.rows, K2.rows)
    sh = Coupling(S, kappa1.right, kappa2.right, check=False)
    wp = coupling_wasserstein_p(pi, sh, p) if compute_wp else float("nan")
    return ShadowResult(sh, wp, _divergence(q, pi), _divergence(q, sh), kappa_optimal)


def identity_coupling(mu):
    return Coupling(np.diag(mu.weights), mu, mu)


def transpose(kappa):
    return Coupling(kappa.weight_matrix.T, kappa.right, kappa.left, check=False)


def double_shadow(pi_star, mu2_quant, p=1.0, q=2.0, compute_wp=True):
    """Shadow ``pi_star`` onto Pi(mu1, mu2^n) and back onto Pi(mu1, mu2).

    Both transfers use a W_p-optimal coupling between ``mu2`` and
    ``mu2_quant``. Returns ``(intermediate, final)``; the final ``wp_change``
    is measured against ``pi_star``.
    """
    mu1, mu2 = pi_star.left, pi_star.right
    kappa = solve_exact(build_cost(mu2, mu2_quant, "lp_power", p), mu2, mu2_quant).coupling
    ident = identity_coupling(mu1)
    inter = shadow(pi_star, ident, kappa, q=q, p=p, compute_wp=compute_wp)
    final = shadow(inter.shadow, ident, transpose(kappa), q=q, p=p, compute_wp=False)
    wp = coupling_wasserstein_p(pi_star, final.shadow, p) if compute_wp else float("nan")
    final = ShadowResult(final.shadow, wp, final.divergence_before, final.divergence_after)
    return inter, final


def data_processing_check(mu, nu, k, q):
    """Return ``(D_q(mu K, nu K), D_q(mu, nu))``; the first never exceeds the second."""
    a = np.asarray(getattr(mu, "weights", mu), dtype=float)
    b = np.asarray(getattr(nu, "weights", nu), dtype=float)
    if not isinstance(k, StochasticKernel):
        k = StochasticKernel(k)
    lhs = qcalc.tsallis_divergence(q, push_kernel(a, k).weights, push_kernel(b, k).weights)
    rhs = qcalc.tsallis_divergence(q, a, b)
    return lhs, rhs
