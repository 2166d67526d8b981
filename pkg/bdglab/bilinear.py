"""
Symmetric bilinear forms on X* x X*.

Forms are stored as d x d matrices in the dual coordinate basis, which for coordinate
space is the coordinate basis itself. The module provides the spectral +/- split, the
operator norm sup{|V(x*, x*)| : ||x*||_{X*} <= 1} with certificates where they exist,
and the coordinate test-vector norm used as an equivalent norm on forms.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.optimize import minimize

from .errors import AsymmetricFormError, DimensionMismatchError, EigenDecompositionError
from .norms import INF, NormSpec, aligned_dual_vector, dual_norm, sample_dual_unit_vectors

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12
PSD_TOL = 1e-10
SIGN_VERTEX_MAX_DIM = 12


@dataclass(frozen=True, eq=False)
class SymBilinearForm:
    """A symmetric form V(x*, y*) = x*^T M y*; the stored matrix is read-only."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatchError(f"form matrix must be square, got shape {m.shape}")
        scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
        asym = float(np.max(np.abs(m - m.T))) if m.size else 0.0
        if asym > SYMMETRY_TOL * scale:
            raise AsymmetricFormError(f"max asymmetry {asym:.3e} exceeds {SYMMETRY_TOL:g} x {scale:g}")
        m = 0.5 * (m + m.T)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def zeros(cls, d: int) -> "SymBilinearForm":
        return cls(np.zeros((d, d)))

    @classmethod
    def identity(cls, d: int) -> "SymBilinearForm":
        return cls(np.eye(d))

    @classmethod
    def outer(cls, x) -> "SymBilinearForm":
        """Rank-one form x x^T, i.e. V(x*, y*) = <x, x*><x, y*>."""
        x = np.asarray(x, dtype=float).ravel()
        return cls(np.outer(x, x))

    @classmethod
    def from_increments(cls, increments) -> "SymBilinearForm":
        """sum_j dM_j dM_j^T for a (K, d) array of increments."""
        inc = np.asarray(increments, dtype=float)
        return cls(inc.T @ inc)

    def evaluate(self, xstar, ystar=None) -> float:
        return evaluate(self, xstar, ystar)

    def quadratic(self, xstars) -> np.ndarray:
        """V(x*, x*) for each row of a (n, d) array."""
        xs = np.atleast_2d(np.asarray(xstars, dtype=float))
        if xs.shape[-1] != self.dim:
            raise DimensionMismatchError(f"test vectors of width {xs.shape[-1]} for a form of dim {self.dim}")
        return np.einsum("ni,ij,nj->n", xs, self.matrix, xs)

    def scaled(self, alpha: float) -> "SymBilinearForm":
        return SymBilinearForm(alpha * self.matrix)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.matrix))) if self.matrix.size else 0.0

    def to_list(self) -> List[List[float]]:
        return self.matrix.tolist()

    def _check_same(self, other: "SymBilinearForm") -> None:
        if other.dim != self.dim:
            raise DimensionMismatchError(f"forms of dim {self.dim} and {other.dim}")

    def __add__(self, other: "SymBilinearForm") -> "SymBilinearForm":
        self._check_same(other)
        return SymBilinearForm(self.matrix + other.matrix)

    def __sub__(self, other: "SymBilinearForm") -> "SymBilinearForm":
        self._check_same(other)
        return SymBilinearForm(self.matrix - other.matrix)

    def __neg__(self) -> "SymBilinearForm":
        return SymBilinearForm(-self.matrix)

    def __repr__(self) -> str:
        return f"SymBilinearForm(dim={self.dim}, max_abs={self.max_abs():.4g})"


def evaluate(V: SymBilinearForm, xstar, ystar=None) -> float:
    """V(x*, y*); y* defaults to x*."""
    x = np.asarray(xstar, dtype=float)
    y = x if ystar is None else np.asarray(ystar, dtype=float)
    if x.shape != (V.dim,) or y.shape != (V.dim,):
        raise DimensionMismatchError(
            f"evaluate expects vectors of length {V.dim}, got {x.shape} and {y.shape}"
        )
    return float(x @ V.matrix @ y)


@dataclass(frozen=True, eq=False)
class SpectralSplit:
    plus: SymBilinearForm
    minus: SymBilinearForm
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def is_psd(self) -> bool:
        return self.minus.max_abs() <= PSD_TOL * max(self.plus.max_abs(), self.minus.max_abs())


def _eigh(matrix: np.ndarray):
    if not np.all(np.isfinite(matrix)):
        raise EigenDecompositionError("form has non-finite entries")
    try:
        return np.linalg.eigh(matrix)
    except np.linalg.LinAlgError as e:
        raise EigenDecompositionError(f"eigendecomposition failed: {e}") from e


def spectral_split(V: SymBilinearForm) -> SpectralSplit:
    """V = plus - minus with plus, minus PSD and plus @ minus = 0."""
    lam, U = _eigh(V.matrix)
    pos = np.where(lam >= 0, lam, 0.0)
    neg = np.where(lam < 0, -lam, 0.0)
    plus = (U * pos) @ U.T
    minus = (U * neg) @ U.T
    return SpectralSplit(
        plus=SymBilinearForm(0.5 * (plus + plus.T)),
        minus=SymBilinearForm(0.5 * (minus + minus.T)),
        eigenvalues=lam,
        eigenvectors=U,
    )


def is_psd(V: SymBilinearForm, tol: float = PSD_TOL) -> bool:
    if V.dim == 0:
        return True
    return float(np.linalg.eigvalsh(V.matrix)[0]) >= -tol


def psd_gap(V_t: SymBilinearForm, V_s: SymBilinearForm) -> float:
    """Smallest eigenvalue of V_t - V_s; >= -tol certifies V_s <= V_t."""
    if V_t.dim != V_s.dim:
        raise DimensionMismatchError(f"forms of dim {V_t.dim} and {V_s.dim}")
    return float(np.linalg.eigvalsh(V_t.matrix - V_s.matrix)[0])


def vertiii_norm(V: SymBilinearForm, spec: Optional[NormSpec] = None) -> float:
    """Sum of |V(y, y)| over y in {e_i} and {e_i +- e_j : i < j}."""
    if spec is not None and spec.dim != V.dim:
        raise DimensionMismatchError(f"form of dim {V.dim} against a norm on dim {spec.dim}")
    m = V.matrix
    diag = np.diag(m)
    total = float(np.abs(diag).sum())
    iu, ju = np.triu_indices(V.dim, k=1)
    s = diag[iu] + diag[ju]
    cross = 2.0 * m[iu, ju]
    total += float(np.abs(s + cross).sum() + np.abs(s - cross).sum())
    return total


@dataclass
class OperatorNormBound:
    lower: float
    certified_upper: Optional[float] = None
    exact: bool = False
    argmax: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def value(self) -> float:
        """The conservative value consumers should use: certified when present."""
        return self.certified_upper if self.certified_upper is not None else self.lower


def _ascent(M: np.ndarray, spec: NormSpec, start: np.ndarray, iters: int = 200) -> tuple:
    """Generalized power iteration x* <- argmax over the dual ball of <., M x*>."""
    x = start
    best = float(x @ M @ x)
    best_x = x
    for _ in range(iters):
        g = M @ x
        if not np.any(g):
            break
        nxt = aligned_dual_vector(spec, g)
        val = float(nxt @ M @ nxt)
        if val <= best + 1e-15 * max(1.0, abs(best)):
            if val > best:
                best, best_x = val, nxt
            break
        best, best_x, x = val, nxt, nxt
    return best, best_x


def _polish(V: np.ndarray, spec: NormSpec, x0: np.ndarray) -> tuple:
    def objective(z):
        n = dual_norm(spec, z)
        return -abs(z @ V @ z) / (n * n) if n > 0 else 0.0

    res = minimize(objective, x0, method="Powell", options={"xtol": 1e-10, "ftol": 1e-13})
    z = np.asarray(res.x, dtype=float)
    n = dual_norm(spec, z)
    if n == 0:
        return 0.0, x0
    z = z / n
    return abs(float(z @ V @ z)), z


def _sign_vertices(d: int) -> np.ndarray:
    # first coordinate fixed to +1: the quadratic form is even
    rest = np.array(list(itertools.product((1.0, -1.0), repeat=d - 1)), dtype=float)
    rest = rest.reshape(2 ** (d - 1), d - 1)
    return np.hstack([np.ones((rest.shape[0], 1)), rest])


def _cube_max(M: np.ndarray) -> float:
    verts = _sign_vertices(M.shape[0])
    return float(np.einsum("ni,ij,nj->n", verts, M, verts).max())


def operator_norm(
    V: SymBilinearForm,
    spec: NormSpec,
    budget: int = 64,
    rng: Optional[np.random.Generator] = None,
) -> OperatorNormBound:
    """sup{|V(x*, x*)| : ||x*||_{X*} <= 1}.

    `lower` is the best value found by multistart ascent (always attained by `argmax`).
    `certified_upper` is present for the Euclidean and weighted Euclidean norms (spectral
    radius, exact), for lp(inf) (dual ball l1: max |V_ij|) and for lp(1) in dim <= 12
    (dual ball l_inf: exact vertex maxima of the spectral parts).
    """
    if spec.dim != V.dim:
        raise DimensionMismatchError(f"form of dim {V.dim} against a norm on dim {spec.dim}")
    d = V.dim
    M = V.matrix
    if not np.any(M):
        return OperatorNormBound(lower=0.0, certified_upper=0.0, exact=True, argmax=np.zeros(d))

    if spec.kind in ("lp", "weighted_lp") and spec.p == 2.0:
        c = np.ones(d) if spec.kind == "lp" else np.sqrt(np.asarray(spec.weights))
        lam, U = _eigh(c[:, None] * M * c[None, :])
        i = int(np.argmax(np.abs(lam)))
        rho = float(abs(lam[i]))
        x = c * U[:, i]
        return OperatorNormBound(lower=rho, certified_upper=rho, exact=True, argmax=x)

    rng = rng if rng is not None else np.random.default_rng(0)
    starts = [np.eye(d)[i] / dual_norm(spec, np.eye(d)[i]) for i in range(d)]
    starts.extend(sample_dual_unit_vectors(spec, max(budget, 1), rng))
    lower, arg = 0.0, starts[0]
    for s in (1.0, -1.0):
        for x0 in starts:
            val, x = _ascent(s * M, spec, x0)
            if abs(val) > lower:
                lower, arg = abs(val), x

    certified: Optional[float] = None
    if spec.kind == "lp" and spec.p == INF:
        # dual ball is the l1 ball; 2-sparse vertices first
        for i in range(d):
            if abs(M[i, i]) > lower:
                lower, arg = abs(M[i, i]), np.eye(d)[i]
            for j in range(i + 1, d):
                for sgn in (1.0, -1.0):
                    x = np.zeros(d)
                    x[i], x[j] = 0.5, 0.5 * sgn
                    val = abs(float(x @ M @ x))
                    if val > lower:
                        lower, arg = val, x
        certified = float(np.max(np.abs(M)))
    elif spec.kind == "lp" and spec.p == 1.0 and d <= SIGN_VERTEX_MAX_DIM:
        split = spectral_split(V)
        up = _cube_max(split.plus.matrix)
        down = _cube_max(split.minus.matrix)
        verts = _sign_vertices(d)
        q = np.einsum("ni,ij,nj->n", verts, M, verts)
        k = int(np.argmax(np.abs(q)))
        if abs(q[k]) > lower:
            lower, arg = float(abs(q[k])), verts[k]
        certified = min(max(up, down), float(np.abs(M).sum()))

    if certified is None or lower < certified * (1 - 1e-12):
        val, x = _polish(M, spec, arg)
        if val > lower:
            lower, arg = val, x
    if certified is not None:
        lower = min(lower, certified)
    exact = certified is not None and lower >= certified * (1 - 1e-12)
    logger.debug(
        "operator norm %s dim %d: lower %.6g upper %s (%d starts)",
        spec.label, d, lower, certified, len(starts),
    )
    return OperatorNormBound(lower=lower, certified_upper=certified, exact=exact, argmax=arg)
