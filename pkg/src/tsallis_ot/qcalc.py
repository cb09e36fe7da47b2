"""Deformed logarithm/exponential calculus and Tsallis divergences.

All functions accept scalars or numpy arrays and broadcast elementwise.
``q = 1`` (or any ``q`` within ``Q_ONE_TOL`` of 1) selects the
logarithmic/exponential limit.
"""

from dataclasses import dataclass

import numpy as np

# Below this distance from 1 the q-formulas lose all precision; use the limits.
Q_ONE_TOL = 1e-8


@dataclass(frozen=True)
class QParam:
    """Tsallis order ``q >= 1``; ``q == 1`` is the Kullback-Leibler case."""

    q: float

    def __post_init__(self):
        q = float(self.q)
        if not np.isfinite(q) or q < 1.0:
            raise ValueError(f"Tsallis order must satisfy q >= 1, got {self.q!r}")
        object.__setattr__(self, "q", q)

    @property
    def is_kl(self):
        return abs(self.q - 1.0) < Q_ONE_TOL

    @property
    def in_rate_range(self):
        """True when 1 < q <= 2, where phi_q is concave and the rate bounds apply."""
        return 1.0 < self.q <= 2.0

    def __float__(self):
        return self.q


def as_qparam(q):
    return q if isinstance(q, QParam) else QParam(q)


def _near_one(q):
    return abs(q - 1.0) < Q_ONE_TOL


def _qlog_any(order, y):
    # (y^(1-order) - 1)/(1-order) for any real order, via expm1 for accuracy
    a = 1.0 - order
    ly = np.log(y)
    if abs(a) < Q_ONE_TOL:
        return ly * (1.0 + 0.5 * a * ly)
    return np.expm1(a * ly) / a


def q_log(q, y):
    """q-logarithm ``(y**(1-q) - 1)/(1-q)``, natural log at ``q = 1``.

    Raises
    ------
    ValueError
        If any ``y <= 0``.
    """
    q = float(q)
    y = np.asarray(y, dtype=float)
    if np.any(~(y > 0)):
        raise ValueError("q_log is defined for y > 0 only")
    out = _qlog_any(q, y)
    return out[()] if out.ndim == 0 else out


def q_exp(q, y):
    """q-exponential ``[1 + (1-q) y]_+ ** (1/(1-q))``; ``exp(y)`` at ``q = 1``.

    For ``q > 1`` the base vanishes for ``y >= 1/(q-1)`` and the negative
    exponent makes the value ``+inf``.
    """
    q = float(q)
    y = np.asarray(y, dtype=float)
    a = 1.0 - q
    if abs(a) < Q_ONE_TOL:
        out = np.exp(y)
    else:
        base = 1.0 + a * y
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = np.where(
                base > 0,
                np.exp(np.log1p(a * y) / a),
                np.inf if a < 0 else 0.0,
            )
    return out[()] if out.ndim == 0 else out


def f_q(q, x):
    """Divergence generator ``(x**q - x)/(q-1)``; ``x log x`` at ``q = 1``.

    Continuously extended by ``f_q(0) = 0``.
    """
    q = float(as_qparam(q))
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise ValueError("f_q is defined for x >= 0 only")
    pos = x > 0
    xs = np.where(pos, x, 1.0)
    out = np.where(pos, xs * _qlog_any(2.0 - q, xs), 0.0)
    return out[()] if out.ndim == 0 else out


def phi_q(q, x):
    """``f_q(x)/x = (x**(q-1) - 1)/(q-1)``; ``log x`` at ``q = 1``."""
    q = float(as_qparam(q))
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("phi_q is defined for x > 0 only")
    out = _qlog_any(2.0 - q, x)
    return out[()] if out.ndim == 0 else out


def f_q_prime(q, x):
    """Derivative of ``f_q``: ``(q x**(q-1) - 1)/(q-1)``; ``1 + log x`` at q = 1.

    This is the inverse of :func:`f_q_star_prime` on its increasing branch.
    """
    q = float(as_qparam(q))
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        if _near_one(q):
            out = 1.0 + np.log(x)
        else:
            # q x^(q-1) - 1 = (q - 1) + q (x^(q-1) - 1)
            out = 1.0 + q * np.where(x > 0, _qlog_any(2.0 - q, np.where(x > 0, x, 1.0)), -1.0 / (q - 1.0))
    return out[()] if out.ndim == 0 else out


def f_q_star(q, y):
    """Legendre conjugate ``sup_{x >= 0} (x y - f_q(x))``.

    Equals ``q**(-q/(q-1)) * [1 + (q-1) y]_+ ** (q/(q-1))`` for ``q > 1`` and
    ``exp(y - 1)`` for ``q = 1``.
    """
    q = float(as_qparam(q))
    y = np.asarray(y, dtype=float)
    if _near_one(q):
        out = np.exp(y - 1.0)
    else:
        out = np.exp(log_f_q_star(q, y))
    return out[()] if out.ndim == 0 else out


def log_f_q_star(q, y):
    """Natural log of :func:`f_q_star`, ``-inf`` on the flat region."""
    q = float(q)
    y = np.asarray(y, dtype=float)
    if _near_one(q):
        return y - 1.0
    r = q - 1.0
    t = r * y
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(t > -1.0, (q / r) * (np.log1p(np.maximum(t, -1.0)) - np.log(q)), -np.inf)


def log_f_q_star_prime(q, y):
    """Natural log of ``(f_q*)'(y) = q**(-1/(q-1)) [1 + (q-1) y]_+ ** (1/(q-1))``.

    ``(f_q*)'`` maps a dual slack to the density ratio of the primal plan.
    """
    q = float(q)
    y = np.asarray(y, dtype=float)
    if _near_one(q):
        return y - 1.0
    r = q - 1.0
    t = r * y
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(t > -1.0, (np.log1p(np.maximum(t, -1.0)) - np.log(q)) / r, -np.inf)


def f_q_star_prime(q, y):
    out = np.exp(log_f_q_star_prime(float(q), y))
    return out[()] if np.ndim(out) == 0 else out


def _weights(m):
    w = getattr(m, "weights", m)
    return np.asarray(w, dtype=float)


def tsallis_divergence(q, mu, nu):
    """Tsallis relative entropy ``D_q(mu, nu) = sum_i nu_i f_q(mu_i/nu_i)``.

    ``mu`` and ``nu`` are weight arrays (any shape) or objects with a
    ``weights`` attribute, indexed over a common support enumeration.
    Cells with ``mu_i = nu_i = 0`` contribute nothing; ``mu_i > 0`` where
    ``nu_i = 0`` gives ``+inf``. At ``q = 1`` this is the KL divergence.
    """
    a = _weights(mu)
    b = _weights(nu)
    if a.shape != b.shape:
        raise ValueError(f"divergence needs a common support indexing, got shapes {a.shape} and {b.shape}")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("divergence arguments must be nonnegative")
    if np.any((a > 0) & (b == 0)):
        return np.inf
    pos = b > 0
    ratio = a[pos] / b[pos]
    val = float(np.sum(b[pos] * f_q(q, ratio)))
    # exact zero is the minimum; clip rounding noise
    return max(val, 0.0)


def tsallis_divergence_qlog(q, mu, nu):
    """Same divergence written as ``sum_i mu_i log_{2-q}(mu_i/nu_i)``."""
    a = _weights(mu)
    b = _weights(nu)
    if np.any((a > 0) & (b == 0)):
        return np.inf
    pos = a > 0
    return float(np.sum(a[pos] * q_log(2.0 - float(q), a[pos] / b[pos])))
