"""Discrete measures, couplings, Markov kernels and cost matrices."""

from dataclasses import dataclass, field

import numpy as np

MASS_TOL = 1e-12
MARGINAL_TOL = 1e-9

COST_FAMILIES = ("l1_sum", "lp_power", "custom")


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Finitely supported probability measure on R^d.

    Parameters
    ----------
    atoms : array-like, shape (n, d) or (n,)
        Support points; a 1-D array is read as n points in R^1.
    weights : array-like, shape (n,)
        Nonnegative masses summing to one.
    check : bool
        Raise ``ValueError`` on invariant violations (default). Pass False
        to build a possibly invalid measure for :func:`validate`.
    """

    atoms: np.ndarray
    weights: np.ndarray
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        atoms = np.array(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        object.__setattr__(self, "atoms", _frozen(atoms))
        object.__setattr__(self, "weights", _frozen(np.ravel(self.weights)))
        if self.check:
            diag = validate(self)
            if not diag.ok:
                raise ValueError("invalid measure: " + "; ".join(diag.messages))

    @classmethod
    def uniform(cls, atoms):
        atoms = np.asarray(atoms, dtype=float)
        n = atoms.shape[0]
        return cls(atoms, np.full(n, 1.0 / n))

    @property
    def size(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.atoms.shape[1]

    def __len__(self):
        return self.size


@dataclass(frozen=True, eq=False)
class Coupling:
    """Transport plan between ``left`` and ``right`` given as a dense matrix."""

    weight_matrix: np.ndarray
    left: DiscreteMeasure
    right: DiscreteMeasure
    tol: float = field(default=MARGINAL_TOL, repr=False)
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "weight_matrix", _frozen(self.weight_matrix))
        if self.check:
            diag = validate(self, tol=self.tol)
            if not diag.ok:
                raise ValueError("invalid coupling: " + "; ".join(diag.messages))

    @property
    def shape(self):
        return self.weight_matrix.shape

    def row_sums(self):
        return self.weight_matrix.sum(axis=1)

    def col_sums(self):
        return self.weight_matrix.sum(axis=0)

    def marginal_defect(self):
        return max(
            float(np.max(np.abs(self.row_sums() - self.left.weights))),
            float(np.max(np.abs(self.col_sums() - self.right.weights))),
        )

    def as_measure(self):
        """The plan as a measure on the product space R^(d1 + d2)."""
        m, n = self.shape
        x = np.repeat(self.left.atoms, n, axis=0)
        y = np.tile(self.right.atoms, (m, 1))
        w = np.clip(self.weight_matrix.ravel(), 0.0, None)
        return DiscreteMeasure(np.hstack([x, y]), w / w.sum(), check=False)


@dataclass(frozen=True, eq=False)
class StochasticKernel:
    """Row-stochastic matrix; row i is the law of the image of atom i."""

    rows: np.ndarray
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "rows", _frozen(np.atleast_2d(self.rows)))
        if self.check:
            diag = validate(self)
            if not diag.ok:
                raise ValueError("invalid kernel: " + "; ".join(diag.messages))

    @classmethod
    def identity(cls, n):
        return cls(np.eye(n))

    @property
    def shape(self):
        return self.rows.shape


@dataclass(frozen=True, eq=False)
class CostMatrix:
    values: np.ndarray
    family: str = "custom"
    p: float = 1.0
    lipschitz: float = None

    def __post_init__(self):
        vals = np.atleast_2d(np.array(self.values, dtype=float))
        if np.any(~np.isfinite(vals)) or np.any(vals < 0):
            raise ValueError("cost values must be finite and nonnegative")
        if self.family not in COST_FAMILIES:
            raise ValueError(f"unknown cost family {self.family!r}")
        object.__setattr__(self, "values", _frozen(vals))

    @property
    def shape(self):
        return self.values.shape


@dataclass
class Diagnostics:
    """Result of :func:`validate`: ``ok`` plus named defect magnitudes."""

    ok: bool = True
    defects: dict = field(default_factory=dict)
    messages: list = field(default_factory=list)

    def fail(self, name, magnitude, message):
        self.ok = False
        self.defects[name] = float(magnitude)
        self.messages.append(message)

    def __bool__(self):
        return self.ok


def validate(obj, tol=None):
    """Check the invariants of a measure, coupling or kernel.

    Never raises on invalid data; every violation is reported with its
    magnitude. ``tol`` overrides the marginal tolerance for couplings and
    the row tolerance for kernels.
    """
    d = Diagnostics()
    if isinstance(obj, DiscreteMeasure):
        w, atoms = obj.weights, obj.atoms
        if w.ndim != 1 or w.size < 1:
            d.fail("size", 0, "measure needs at least one weight")
            return d
        if atoms.shape[0] != w.size:
            d.fail("size", abs(atoms.shape[0] - w.size), f"{atoms.shape[0]} atoms but {w.size} weights")
        if not np.all(np.isfinite(w)) or not np.all(np.isfinite(atoms)):
            d.fail("finite", np.inf, "non-finite entries")
            return d
        if np.any(w < 0):
            d.fail("negative", -w.min(), f"negative weight {w.min():.3g}")
        mass_err = abs(w.sum() - 1.0)
        if mass_err > MASS_TOL:
            d.fail("mass", mass_err, f"weights sum to {w.sum():.17g}, mass error {mass_err:.3g}")
        if atoms.shape[0] == w.size and w.size > 1:
            uniq = np.unique(atoms, axis=0).shape[0]
            if uniq != atoms.shape[0]:
                d.fail("distinct", atoms.shape[0] - uniq, f"{atoms.shape[0] - uniq} repeated atoms")
    elif isinstance(obj, Coupling):
        tol = MARGINAL_TOL if tol is None else tol
        P = obj.weight_matrix
        m, n = obj.left.size, obj.right.size
        if P.shape != (m, n):
            d.fail("shape", 0, f"matrix shape {P.shape} does not match marginals ({m}, {n})")
            return d
        if not np.all(np.isfinite(P)):
            d.fail("finite", np.inf, "non-finite entries")
            return d
        if np.any(P < 0):
            d.fail("negative", -P.min(), f"negative entry {P.min():.3g}")
        row = float(np.max(np.abs(P.sum(axis=1) - obj.left.weights)))
        col = float(np.max(np.abs(P.sum(axis=0) - obj.right.weights)))
        if row > tol:
            d.fail("row_sum", row, f"row-sum defect {row:.3g}")
        if col > tol:
            d.fail("col_sum", col, f"column-sum defect {col:.3g}")
        mass_err = abs(P.sum() - 1.0)
        if mass_err > max(MASS_TOL, tol):
            d.fail("mass", mass_err, f"total mass error {mass_err:.3g}")
    elif isinstance(obj, StochasticKernel):
        tol = MASS_TOL if tol is None else tol
        K = obj.rows
        if K.ndim != 2:
            d.fail("shape", 0, "kernel must be a matrix")
            return d
        if np.any(K < 0):
            d.fail("negative", -K.min(), f"negative entry {K.min():.3g}")
        err = float(np.max(np.abs(K.sum(axis=1) - 1.0)))
        if err > tol:
            d.fail("row_sum", err, f"row-sum defect {err:.3g}")
    else:
        raise TypeError(f"cannot validate {type(obj).__name__}")
    return d


def product_measure(mu, nu):
    """Independent coupling ``mu (x) nu``."""
    return Coupling(np.outer(mu.weights, nu.weights), mu, nu)


def disintegrate(pi):
    """Split a coupling into its left marginal and a Markov kernel.

    Rows of zero-mass left atoms get the right marginal so that the kernel
    is defined everywhere.
    """
    P = np.clip(pi.weight_matrix, 0.0, None)
    rows = P.sum(axis=1)
    K = np.empty_like(P)
    pos = rows > 0
    K[pos] = P[pos] / rows[pos, None]
    K[~pos] = pi.right.weights
    # exact row normalisation; division leaves ~1 ulp defects
    K[pos] /= K[pos].sum(axis=1, keepdims=True)
    return pi.left, StochasticKernel(K)


def compose(mu, k, right):
    """Recompose ``mu (x) K`` as a coupling with the given right marginal."""
    return Coupling(mu.weights[:, None] * k.rows, mu, right, check=False)


def push_kernel(mu, k, atoms=None):
    """Push ``mu`` forward through ``k``: ``(mu K)_j = sum_i mu_i K_ij``.

    ``atoms`` are the support points of the target space; defaults to
    ``0..n-1`` on the real line when the geometry is irrelevant.
    """
    weights = getattr(mu, "weights", mu)
    weights = np.asarray(weights, dtype=float)
    if k.rows.shape[0] != weights.shape[0]:
        raise ValueError(f"kernel has {k.rows.shape[0]} rows, measure has {weights.shape[0]} atoms")
    out = weights @ k.rows
    if atoms is None:
        atoms = np.arange(out.shape[0], dtype=float)
    return DiscreteMeasure(atoms, out, check=False)


def pairwise_distance(x, y):
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)
    return np.sqrt(np.sum((x[:, None, :] - y[None, :, :]) ** 2, axis=-1))


def build_cost(mu, nu, family="l1_sum", p=1.0):
    """Cost matrix between the atoms of ``mu`` and ``nu``.

    ``l1_sum`` gives ``sum_k |x_k - y_k|`` (Lipschitz constant 1 in l1);
    ``lp_power`` gives ``|x - y|_2 ** p``.
    """
    if mu.dim != nu.dim:
        raise ValueError(f"atom dimensions differ: {mu.dim} vs {nu.dim}")
    diff = mu.atoms[:, None, :] - nu.atoms[None, :, :]
    if family == "l1_sum":
        return CostMatrix(np.abs(diff).sum(axis=-1), "l1_sum", 1.0, 1.0)
    if family == "lp_power":
        dist = np.sqrt(np.sum(diff**2, axis=-1))
        vals = dist**p if p != 2 else np.sum(diff**2, axis=-1)
        return CostMatrix(vals, "lp_power", float(p))
    raise ValueError(f"unsupported cost family {family!r}; expected l1_sum or lp_power")


def uniform_grid(n):
    """Cell-midpoint discretisation of the uniform law on [0, 1]."""
    return DiscreteMeasure.uniform((np.arange(n) + 0.5) / n)
