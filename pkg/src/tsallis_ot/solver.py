"""Tsallis-regularised optimal transport on discrete measures.

The regularised problem is

    OT_{q,eps} = min_{pi in Pi(mu, nu)} <C, pi> + eps * D_q(pi, mu (x) nu)

and its concave dual is

    max_{h1, h2} <h1, mu> + <h2, nu>
                 - eps * sum_ij mu_i nu_j f_q*((h1_i + h2_j - C_ij) / eps).

Three solvers share the :class:`SolveReport` contract:

* :func:`solve_dual` -- exact block coordinate ascent on the dual,
* :func:`solve_primal` -- entropic mirror descent on the transport polytope,
* :func:`sinkhorn_kl` -- classical log-domain Sinkhorn for ``q = 1``.
"""

from dataclasses import dataclass, field
import warnings

import numpy as np

from . import qcalc
from .errors import NumericalError, NotConvergedWarning
from .measures import Coupling, CostMatrix, MARGINAL_TOL
from .qcalc import QParam, as_qparam


@dataclass(frozen=True)
class SolveConfig:
    epsilon: float
    q: QParam = QParam(2.0)
    max_iter: int = 10_000
    tol_gap: float = 1e-6
    tol_marginal: float = MARGINAL_TOL

    def __post_init__(self):
        object.__setattr__(self, "q", as_qparam(self.q))
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon!r}")
        if not (self.tol_gap > 0 and self.tol_marginal > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass(frozen=True)
class DualPotentials:
    h1: np.ndarray
    h2: np.ndarray

    def __post_init__(self):
        h1 = np.asarray(self.h1, dtype=float)
        h2 = np.asarray(self.h2, dtype=float)
        if not (np.all(np.isfinite(h1)) and np.all(np.isfinite(h2))):
            raise ValueError("dual potentials must be finite")
        object.__setattr__(self, "h1", h1)
        object.__setattr__(self, "h2", h2)


@dataclass
class SolveReport:
    coupling: Coupling
    potentials: DualPotentials
    primal_value: float
    dual_value: float
    gap: float
    iterations: int
    converged: bool
    method: str = ""
    marginal_defect: float = 0.0
    flags: list = field(default_factory=list)
    dual_history: list = field(default_factory=list, repr=False)

    @property
    def rel_gap(self):
        return relative_gap(self.primal_value, self.dual_value)

    @property
    def value(self):
        return self.primal_value


def relative_gap(primal, dual):
    scale = max(abs(primal), abs(dual), 1e-300)
    return (primal - dual) / scale


def logsumexp(x, axis):
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - m), axis=axis)) + np.squeeze(m, axis=axis)
    return out


def _cost(c):
    return c.values if isinstance(c, CostMatrix) else np.asarray(c, dtype=float)


def _flags_for(q):
    return [] if q.q <= 2.0 else ["q>2: outside the range where the rate bounds apply"]


def primal_objective(pi, c, cfg):
    """``<C, pi> + eps * D_q(pi, mu (x) nu)`` with the marginals taken from ``pi``."""
    C = _cost(c)
    P = pi.weight_matrix
    if C.shape != P.shape:
        raise ValueError(f"cost shape {C.shape} does not match plan shape {P.shape}")
    ref = np.outer(pi.left.weights, pi.right.weights)
    div = qcalc.tsallis_divergence(cfg.q, np.clip(P, 0.0, None), ref)
    return float(np.sum(C * P)) + cfg.epsilon * div


def dual_objective(h, c, cfg, mu, nu):
    """Dual objective at potentials ``h``; a lower bound on ``OT_{q,eps}``."""
    C = _cost(c)
    eps = cfg.epsilon
    a, b = mu.weights, nu.weights
    Y = (h.h1[:, None] + h.h2[None, :] - C) / eps
    ref = np.outer(a, b)
    pos = ref > 0
    with np.errstate(over="ignore"):
        conj = float(np.sum(ref[pos] * qcalc.f_q_star(cfg.q, Y[pos])))
    return float(h.h1 @ a + h.h2 @ b) - eps * conj


def plan_from_potentials(h1, h2, C, a, b, eps, q):
    """First-order plan ``mu_i nu_j (f_q*)'((h1_i + h2_j - C_ij)/eps)``."""
    Y = (h1[:, None] + h2[None, :] - C) / eps
    with np.errstate(divide="ignore"):
        logP = np.log(a)[:, None] + np.log(b)[None, :] + qcalc.log_f_q_star_prime(q, Y)
    return np.exp(logP)


def round_to_polytope(P, a, b):
    """Project a nonnegative matrix onto Pi(a, b) by the row/column
    shrink-then-rank-one-fill rounding; the output is feasible up to
    floating-point error and differs from ``P`` by at most twice the
    marginal defect in l1.
    """
    P = np.clip(np.asarray(P, dtype=float), 0.0, None)
    r = P.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(r > a, a / r, 1.0)
    P = P * x[:, None]
    s = P.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.where(s > b, b / s, 1.0)
    P = P * y[None, :]
    err_r = np.clip(a - P.sum(axis=1), 0.0, None)
    err_c = np.clip(b - P.sum(axis=0), 0.0, None)
    tot = err_r.sum()
    if tot > 0:
        P = P + np.outer(err_r, err_c) / tot
    return P


def _defect(P, a, b):
    return max(float(np.max(np.abs(P.sum(axis=1) - a))), float(np.max(np.abs(P.sum(axis=0) - b))))


# ---------------------------------------------------------------------------
# dual block coordinate ascent


def _row_update(h_other, C, a, b, eps, q, t0):
    """Maximise the dual over the row potentials with the column ones fixed.

    For each row i solves ``sum_j b_j (f_q*)'((t + s_ij)/eps) = 1`` with
    ``s_ij = h_other_j - C_ij``. The left side is continuous and strictly
    increasing where positive, so a bracketed Newton iteration on its
    logarithm converges; bisection takes over whenever Newton leaves the
    bracket.
    """
    pos_b = b > 0
    S = h_other[None, pos_b] - C[:, pos_b]
    logb = np.log(b[pos_b])
    m = C.shape[0]
    if qcalc._near_one(q):
        # log-sum is affine in t: closed form
        return eps * (1.0 - logsumexp(logb[None, :] + S / eps, axis=1))

    r = q - 1.0
    # brackets: the sum is <= g(max y) and >= b_j g(y_j) for each j
    lo = eps * 1.0 - S.max(axis=1)
    ginv = qcalc.f_q_prime(q, 1.0 / b[pos_b])
    hi = np.min(eps * ginv[None, :] - S, axis=1)
    hi = np.maximum(hi, lo)
    t = np.clip(t0, lo, hi)
    active = np.ones(m, dtype=bool)
    for _ in range(200):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        tt = t[idx]
        Y = (tt[:, None] + S[idx]) / eps
        lg = qcalc.log_f_q_star_prime(q, Y) + logb[None, :]
        F = logsumexp(lg, axis=1)
        # d/dt log g(y) = 1 / (eps (1 + r y)) on the support of g
        w = np.exp(lg - F[:, None])
        base = 1.0 + r * Y
        with np.errstate(divide="ignore", invalid="ignore"):
            dF = np.sum(np.where(w > 0, w / (eps * base), 0.0), axis=1)
        below = F < 0
        lo[idx] = np.where(below, tt, lo[idx])
        hi[idx] = np.where(below, hi[idx], tt)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = tt - F / dF
        bad = ~np.isfinite(newton) | (newton <= lo[idx]) | (newton >= hi[idx])
        nxt = np.where(bad, 0.5 * (lo[idx] + hi[idx]), newton)
        step = np.abs(nxt - tt)
        done = (np.abs(F) <= 1e-15) | (step <= 1e-15 * np.maximum(eps, np.abs(tt)))
        t[idx] = np.where(np.abs(F) <= 1e-15, tt, nxt)
        active[idx] = ~done
    if active.any():
        F = logsumexp(
            qcalc.log_f_q_star_prime(q, (t[active, None] + S[active]) / eps) + logb[None, :], axis=1
        )
        if np.max(np.abs(F)) > 1e-10:
            raise NumericalError(f"dual row update failed to bracket a root (residual {np.max(np.abs(F)):.3g})")
    return t


def _recover(h1, h2, C, a, b, eps, q):
    P = plan_from_potentials(h1, h2, C, a, b, eps, q)
    Pr = round_to_polytope(P, a, b)
    return Pr, _defect(Pr, a, b)


def solve_dual(c, mu, nu, cfg, init=None, check_every=1):
    """Block coordinate ascent on the dual.

    Alternates exact maximisation over ``h1`` (``h2`` fixed) and over ``h2``.
    After every ``check_every`` sweeps a feasible plan is recovered from the
    potentials (first-order formula, then rounding onto Pi(mu, nu)) and the
    duality gap of that plan is the stopping certificate.

    Parameters
    ----------
    init : DualPotentials, optional
        Starting potentials; zero by default.

    Returns
    -------
    SolveReport
        ``converged`` is False (with a warning) when ``max_iter`` sweeps did
        not reach ``cfg.tol_gap``.
    """
    C = _cost(c)
    a, b = mu.weights, nu.weights
    if C.shape != (a.size, b.size):
        raise ValueError(f"cost shape {C.shape} does not match measures ({a.size}, {b.size})")
    q, eps = cfg.q.q, cfg.epsilon
    if init is None:
        h1, h2 = np.zeros(a.size), np.zeros(b.size)
    else:
        h1, h2 = init.h1.copy(), init.h2.copy()

    history = []
    best = None
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        h1 = _row_update(h2, C, a, b, eps, q, h1)
        h2 = _row_update(h1, C.T, b, a, eps, q, h2)
        if it % check_every and it != cfg.max_iter:
            continue
        pots = DualPotentials(h1, h2)
        dval = dual_objective(pots, C, cfg, mu, nu)
        history.append(dval)
        P, defect = _recover(h1, h2, C, a, b, eps, q)
        pi = Coupling(P, mu, nu, check=False)
        pval = primal_objective(pi, C, cfg)
        if best is None or pval - dval < best[0] - best[1]:
            best = (pval, dval, pi, pots, defect)
        if relative_gap(pval, dval) <= cfg.tol_gap and defect <= cfg.tol_marginal:
            converged = True
            break

    pval, dval, pi, pots, defect = best
    if not converged:
        warnings.warn(
            f"solve_dual stopped after {it} sweeps with relative gap {relative_gap(pval, dval):.3g}",
            NotConvergedWarning,
            stacklevel=2,
        )
    return SolveReport(
        coupling=pi,
        potentials=pots,
        primal_value=pval,
        dual_value=dval,
        gap=pval - dval,
        iterations=it,
        converged=converged,
        method="dual",
        marginal_defect=defect,
        flags=_flags_for(cfg.q),
        dual_history=history,
    )


# ---------------------------------------------------------------------------
# primal mirror descent


def _scale_to_marginals(K, a, b, u, v, tol=1e-14, max_iter=10_000):
    """Sinkhorn scaling of a nonnegative kernel; returns (u, v, iterations)."""
    for k in range(1, max_iter + 1):
        Kv = K @ v
        u = np.divide(a, Kv, out=np.zeros_like(a), where=Kv > 0)
        Ku = K.T @ u
        v = np.divide(b, Ku, out=np.zeros_like(b), where=Ku > 0)
        err = np.max(np.abs(u * (K @ v) - a))
        if err <= tol:
            break
    return u, v, k


def _kl(P, Q):
    pos = P > 0
    return float(np.sum(P[pos] * np.log(P[pos] / Q[pos])) - P.sum() + Q.sum())


def solve_primal(c, mu, nu, cfg, eta0=None):
    """Entropic mirror descent on Pi(mu, nu).

    Each step multiplies the plan by ``exp(-eta * grad)`` and restores the
    marginals by alternating row/column scaling, which is the exact KL
    projection onto the polytope. The step ``eta`` adapts by backtracking on
    the relative-smoothness inequality. Scaling exponents of the converged
    step are the dual potentials (divided by ``eta``), so the same gap
    certificate as :func:`solve_dual` applies.
    """
    C = _cost(c)
    a, b = mu.weights, nu.weights
    if C.shape != (a.size, b.size):
        raise ValueError(f"cost shape {C.shape} does not match measures ({a.size}, {b.size})")
    q, eps = cfg.q.q, cfg.epsilon
    ref = np.outer(a, b)
    supp = ref > 0

    def F(P):
        return primal_objective(Coupling(P, mu, nu, check=False), C, cfg)

    def grad(P):
        r = np.divide(P, ref, out=np.zeros_like(P), where=supp)
        with np.errstate(divide="ignore"):
            g = C + eps * qcalc.f_q_prime(q, r)
        # kl gradient is -inf at zero entries; they stay zero under the update
        return np.where(np.isfinite(g), g, 0.0)

    P = ref.copy()
    fP = F(P)
    # crude relative-smoothness constant: eps * q * (max density ratio)^(q-1)
    rmax = 1.0 / max(min(a[a > 0].min(), 1.0), 1e-300)
    eta = eta0 if eta0 is not None else 1.0 / (eps * max(q, 1.0) * max(1.0, rmax) ** max(q - 1.0, 0.0))
    if qcalc._near_one(q) and eta0 is None:
        eta = 1.0 / eps
    u, v = np.ones_like(a), np.ones_like(b)
    converged = False
    best = None
    history = []
    it = 0
    for it in range(1, cfg.max_iter + 1):
        G = grad(P)
        Gs = G - G[supp].min()
        for _ in range(60):
            K = P * np.exp(-eta * Gs)
            u, v, _k = _scale_to_marginals(K, a, b, np.ones_like(a), np.ones_like(b))
            Pn = u[:, None] * K * v[None, :]
            fn = F(Pn)
            model = fP + float(np.sum(G * (Pn - P))) + _kl(Pn, P) / eta
            if fn <= model + 1e-13 * max(1.0, abs(fP)):
                break
            eta *= 0.5
        else:
            raise NumericalError("mirror descent step size collapsed")
        # potentials: eta * G_ij = log u_i + log v_j on the support at a fixed point
        with np.errstate(divide="ignore"):
            lu, lv = np.log(u), np.log(v)
        shift = eta * G[supp].min()
        h1 = np.where(np.isfinite(lu), (lu + shift) / eta, 0.0)
        h2 = np.where(np.isfinite(lv), lv / eta, 0.0)
        P, fP = Pn, fn
        pots = DualPotentials(h1, h2)
        dval = dual_objective(pots, C, cfg, mu, nu)
        history.append(dval)
        if best is None or fP - dval < best[0] - best[1]:
            best = (fP, dval, P, pots)
        if relative_gap(fP, dval) <= cfg.tol_gap:
            converged = True
            break
        eta *= 1.5

    pval, dval, P, pots = best
    defect = _defect(P, a, b)
    if not converged:
        warnings.warn(
            f"solve_primal stopped after {it} steps with relative gap {relative_gap(pval, dval):.3g}",
            NotConvergedWarning,
            stacklevel=2,
        )
    return SolveReport(
        coupling=Coupling(P, mu, nu, check=False),
        potentials=pots,
        primal_value=pval,
        dual_value=dval,
        gap=pval - dval,
        iterations=it,
        converged=converged,
        method="primal",
        marginal_defect=defect,
        flags=_flags_for(cfg.q),
        dual_history=history,
    )


# ---------------------------------------------------------------------------
# classical Sinkhorn (q = 1)


def sinkhorn_kl(c, mu, nu, cfg, check_every=10):
    """Log-domain Sinkhorn for the KL-regularised problem.

    Uses the classical parametrisation ``pi = exp((f_i + g_j - C_ij)/eps) a_i b_j``
    and reports potentials in the dual convention of :func:`dual_objective`
    (``h = f + eps/2`` on each side).
    """
    if not cfg.q.is_kl:
        raise ValueError(f"sinkhorn_kl needs q = 1, got q = {cfg.q.q}")
    C = _cost(c)
    a, b = mu.weights, nu.weights
    eps = cfg.epsilon
    with np.errstate(divide="ignore"):
        la, lb = np.log(a), np.log(b)
    f = np.zeros(a.size)
    g = np.zeros(b.size)
    converged = False
    best = None
    history = []
    it = 0
    for it in range(1, cfg.max_iter + 1):
        f = -eps * logsumexp((g[None, :] - C) / eps + lb[None, :], axis=1)
        g = -eps * logsumexp((f[:, None] - C) / eps + la[:, None], axis=0)
        if it % check_every and it != cfg.max_iter:
            continue
        P = np.exp((f[:, None] + g[None, :] - C) / eps + la[:, None] + lb[None, :])
        P = round_to_polytope(P, a, b)
        pots = DualPotentials(f + eps / 2, g + eps / 2)
        pval = primal_objective(Coupling(P, mu, nu, check=False), C, cfg)
        dval = dual_objective(pots, C, cfg, mu, nu)
        history.append(dval)
        defect = _defect(P, a, b)
        if best is None or pval - dval < best[0] - best[1]:
            best = (pval, dval, P, pots, defect)
        if relative_gap(pval, dval) <= cfg.tol_gap and defect <= cfg.tol_marginal:
            converged = True
            break
    pval, dval, P, pots, defect = best
    if not converged:
        warnings.warn(
            f"sinkhorn_kl stopped after {it} iterations with relative gap {relative_gap(pval, dval):.3g}",
            NotConvergedWarning,
            stacklevel=2,
        )
    return SolveReport(
        coupling=Coupling(P, mu, nu, check=False),
        potentials=pots,
        primal_value=pval,
        dual_value=dval,
        gap=pval - dval,
        iterations=it,
        converged=converged,
        method="sinkhorn",
        marginal_defect=defect,
        dual_history=history,
    )


def solve(c, mu, nu, cfg, method="dual"):
    """Dispatch by method name: ``dual``, ``primal`` or ``sinkhorn``."""
    if method == "dual":
        return solve_dual(c, mu, nu, cfg)
    if method == "primal":
        return solve_primal(c, mu, nu, cfg)
    if method == "sinkhorn":
        return sinkhorn_kl(c, mu, nu, cfg)
    raise ValueError(f"unknown method {method!r}")
