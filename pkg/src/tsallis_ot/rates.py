"""Convergence-rate envelopes for OT_{q,eps} - OT and the epsilon-sweep harness."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
import math
import warnings

import numpy as np

from . import qcalc
from .errors import NotConvergedWarning
from .exact_ot import solve_exact
from .qcalc import QParam, as_qparam
from .solver import SolveConfig, sinkhorn_kl, solve_dual, solve_primal


@dataclass(frozen=True)
class RateParams:
    """Constants of the rate bounds.

    beta : quantisation exponent of the second marginal (>= 1)
    L, C : constants of the cost-stability condition and the quantisation bound
    d : dimension of the uniform-cube instance for the lower bound
    """

    q: QParam
    beta: float = 1.0
    L: float = 1.0
    C: float = 0.25
    d: int = 1

    def __post_init__(self):
        object.__setattr__(self, "q", as_qparam(self.q))
        if not self.beta >= 1:
            raise ValueError(f"beta must be >= 1, got {self.beta}")
        if self.L < 0 or self.C < 0:
            raise ValueError("L and C must be nonnegative")
        if int(self.d) != self.d or self.d < 1:
            raise ValueError("d must be a positive integer")

    def with_q(self, q):
        return RateParams(q, self.beta, self.L, self.C, self.d)


@dataclass
class RateRecord:
    epsilon: float
    gap: float
    upper_env: float
    lower_env: float
    kl_env: float
    solver_gap: float
    converged: bool
    value: float = float("nan")
    ot: float = float("nan")
    flags: list = field(default_factory=list)

    @property
    def flagged(self):
        return bool(self.flags)

    def as_dict(self):
        return asdict(self)


def _exponent(q, beta):
    return 1.0 / ((q - 1.0) * beta + 1.0)


def _require_tsallis(params, what):
    if params.q.is_kl:
        raise ValueError(f"{what} needs q > 1; use kl_envelope for q = 1")


def constants_upper(params):
    """``(K1, K2)`` of the Tsallis upper bound."""
    _require_tsallis(params, "constants_upper")
    q, beta, LC2 = params.q.q, params.beta, 2.0 * params.L * params.C
    e = (q - 1.0) * beta / ((q - 1.0) * beta + 1.0)
    K1 = (LC2 / beta) ** e
    K2 = LC2**e * beta ** _exponent(q, beta)
    return K1, K2


def upper_envelope(eps, params):
    """Closed-form upper bound on ``OT_{q,eps} - OT``.

    ``K1 beta/((q-1)beta+1) eps log_{qt}(1/eps) + (K1-1)/(q-1) eps + K2 eps^qt``
    with ``qt = 1/((q-1)beta+1)``. It equals the minimum over real ``n`` of
    :func:`proof_bound`, so the integer minimum never lies below it.
    """
    _require_tsallis(params, "upper_envelope")
    q, beta = params.q.q, params.beta
    K1, K2 = constants_upper(params)
    qt = _exponent(q, beta)
    lead = K1 * beta * qt * eps * qcalc.q_log(qt, 1.0 / eps)
    return float(lead + (K1 - 1.0) / (q - 1.0) * eps + K2 * eps**qt)


def upper_leading_term(eps, params):
    q, beta = params.q.q, params.beta
    K1, _ = constants_upper(params)
    qt = _exponent(q, beta)
    return float(K1 * beta * qt * eps * qcalc.q_log(qt, 1.0 / eps))


def proof_bound(eps, params, n):
    """``2 L C n^(-1/beta) + eps phi_q(n)`` for a quantisation with ``n`` atoms."""
    n = np.asarray(n, dtype=float)
    return 2.0 * params.L * params.C * n ** (-1.0 / params.beta) + eps * qcalc.phi_q(params.q, n)


def upper_envelope_integer(eps, params, n_max=None):
    """Minimum of :func:`proof_bound` over integer ``n``; returns ``(value, n)``.

    The bound has a single stationary point in ``n``, so the integer minimum
    sits next to the real minimiser. Passing ``n_max`` scans ``1..n_max``
    instead.
    """
    _require_tsallis(params, "upper_envelope_integer")
    q, beta = params.q.q, params.beta
    if n_max is not None:
        ns = np.arange(1, int(n_max) + 1)
    else:
        n_real = (2.0 * params.L * params.C / (beta * eps)) ** (beta / ((q - 1.0) * beta + 1.0))
        lo = max(1, math.floor(n_real))
        ns = np.array([1, lo, lo + 1])
    vals = proof_bound(eps, params, ns)
    k = int(np.argmin(vals))
    return float(vals[k]), int(ns[k])


def kl_envelope(eps, params):
    """KL-regularised bound ``beta eps log(1/eps) + 4 L C eps``."""
    return float(params.beta * eps * math.log(1.0 / eps) + 4.0 * params.L * params.C * eps)


def constants_lower(params):
    """``(K1~, K2~)`` of the lower bound for uniform marginals on [0, 1]^d with l1 cost."""
    _require_tsallis(params, "constants_lower")
    q, d = params.q.q, params.d
    r = q - 1.0
    a = r * d + 1.0
    inner = r / ((r * d + q) * 2.0 ** (a / r)) * (q / r) ** (q / r)
    Kt1 = a / (r * d + q) * inner ** (r / a)
    Kt2 = (1.0 + 2.0 ** (a / r)) * q ** (-q / r)
    return Kt1, Kt2


def sharpness_envelope(eps, params):
    """Lower bound ``K1~ eps^(1/((q-1)d+1)) - K2~ eps``."""
    Kt1, Kt2 = constants_lower(params)
    q, d = params.q.q, params.d
    return float(Kt1 * eps ** (1.0 / ((q - 1.0) * d + 1.0)) - Kt2 * eps)


def geometric_grid(start, ratio, count):
    """``start * ratio**k`` for ``k = 0..count-1``."""
    return [float(start * ratio**k) for k in range(count)]


def parse_grid(text):
    """Parse ``"start:ratio:count"``."""
    try:
        start, ratio, count = text.split(":")
        return geometric_grid(float(start), float(ratio), int(count))
    except ValueError as exc:
        raise ValueError(f"grid must look like start:ratio:count, got {text!r}") from exc


def _envelopes(eps, params):
    if params.q.is_kl:
        return float("nan"), float("nan")
    return upper_envelope(eps, params), sharpness_envelope(eps, params)


def _solve_point(eps, c, mu, nu, cfg, method):
    pcfg = SolveConfig(eps, cfg.q, cfg.max_iter, cfg.tol_gap, cfg.tol_marginal)
    if method == "auto":
        method = "sinkhorn" if pcfg.q.is_kl else "dual"
    fn = {"dual": solve_dual, "primal": solve_primal, "sinkhorn": sinkhorn_kl}[method]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NotConvergedWarning)
        return fn(c, mu, nu, pcfg)


def rate_sweep(instance, params, eps_grid, cfg, method="auto", workers=1):
    """Solve ``OT_{q,eps}`` along ``eps_grid`` and record the gap to ``OT``.

    ``instance`` is ``(mu, nu, cost)``. Points are independent; with
    ``workers > 1`` they run in a thread pool, and the output order always
    follows the grid. A point whose solve does not reach ``cfg.tol_gap`` is
    flagged rather than aborting the sweep.
    """
    mu, nu, c = instance
    grid = [float(e) for e in eps_grid]
    if any(e <= 0 for e in grid):
        raise ValueError("epsilon grid must be positive")
    if any(x < y for x, y in zip(grid, grid[1:])):
        raise ValueError("epsilon grid must be sorted in descending order")
    ot = solve_exact(c, mu, nu).value

    def point(eps):
        flags = []
        try:
            rep = _solve_point(eps, c, mu, nu, cfg, method)
        except Exception as exc:  # noqa: BLE001 - one bad point must not abort the sweep
            up, lo = _envelopes(eps, params)
            return RateRecord(eps, float("nan"), up, lo, kl_envelope(eps, params), float("nan"),
                              False, float("nan"), ot, [f"solver error: {exc}"])
        if not rep.converged:
            flags.append("not converged")
        gap = rep.primal_value - ot
        if gap < -cfg.tol_gap * max(1.0, abs(ot)):
            flags.append("negative gap")
        up, lo = _envelopes(eps, params)
        return RateRecord(eps, gap, up, lo, kl_envelope(eps, params), rep.rel_gap,
                          rep.converged, rep.primal_value, ot, flags)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(point, grid))
    return [point(e) for e in grid]


def slope_fit(records, min_points=4):
    """Least-squares slope of ``log(gap)`` against ``log(eps)``.

    Returns ``(slope, r2)``. Flagged records and nonpositive gaps are
    skipped; fewer than ``min_points`` usable records is an error.
    """
    pts = [(r.epsilon, r.gap) for r in records if not r.flagged and r.gap > 0]
    if len(pts) < min_points:
        raise ValueError(f"slope fit needs at least {min_points} usable records, got {len(pts)}")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), r2


def band_violations(records, upper_slack=1.2, lower_slack=0.8, eps_min=0.0):
    """Count records outside ``[lower_env * lower_slack, upper_env * upper_slack]``.

    The lower side is only tested where the lower envelope is positive, and
    only records with ``epsilon >= eps_min`` are considered.
    """
    bad = 0
    for r in records:
        if r.epsilon < eps_min or r.flagged:
            continue
        if r.gap > r.upper_env * upper_slack:
            bad += 1
        elif r.lower_env > 0 and r.gap < r.lower_env * lower_slack:
            bad += 1
    return bad
