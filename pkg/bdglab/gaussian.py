"""
Gaussian characteristics of symmetric forms.

gamma(V) is the L2 norm (E ||xi||^2)^(1/2) of a centered Gaussian vector xi in X whose
covariance form is V. For Euclidean-type norms it is the closed form sqrt(sum_i w_i V_ii);
for rank-one forms it is ||x|| for V = x x^T; otherwise it is a seeded Monte Carlo
estimate with a delta-method standard error. Indefinite forms use the spectral split,
gamma(V) = gamma(V+) + gamma(V-).
"""

import logging
import math
from dataclasses import dataclass
from functools import partial
from typing import Iterable, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from .bilinear import PSD_TOL, SymBilinearForm, operator_norm, spectral_split
from .errors import DimensionMismatchError, EigenDecompositionError, NotPSDError
from .estimators import Moments, pool_moments
from .norms import NormSpec, norm
from .parallel import map_replications

logger = logging.getLogger(__name__)

DEFAULT_SAMPLES = 10_000
BLOCK_SIZE = 16_384
RELATIVE_PSD_TOL = 1e-8


class GammaEstimate(BaseModel):
    value: float = Field(..., ge=0.0)
    stderr: float = Field(0.0, ge=0.0)
    samples: int = Field(0, ge=0)
    exact: bool = False

    @model_validator(mode="after")
    def _exact_has_no_error(self):
        if self.exact and self.stderr != 0.0:
            raise ValueError("an exact estimate carries stderr 0")
        return self


class DefectEstimate(BaseModel):
    """gamma(V+W)^2 - gamma(V)^2 - gamma(W)^2 with its combined standard error."""

    value: float
    stderr: float = Field(0.0, ge=0.0)
    samples: int = 0
    exact: bool = False


@dataclass(frozen=True, eq=False)
class LinearMap:
    """T: R^k (Hilbert coordinates) -> X, stored as a d x k matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        object.__setattr__(self, "matrix", m)

    @property
    def dims(self) -> Tuple[int, int]:
        return self.matrix.shape

    def form(self) -> SymBilinearForm:
        """The covariance form V(x*, y*) = <T* x*, T* y*> = x*^T T T^T y*."""
        t = self.matrix
        return SymBilinearForm(t @ t.T)


def _eig_checked(V: SymBilinearForm):
    m = V.matrix
    if not np.all(np.isfinite(m)):
        raise EigenDecompositionError("form has non-finite entries")
    try:
        lam, U = np.linalg.eigh(m)
    except np.linalg.LinAlgError as e:
        raise EigenDecompositionError(f"eigendecomposition failed: {e}") from e
    scale = float(np.max(np.abs(lam))) if lam.size else 0.0
    floor = -RELATIVE_PSD_TOL * scale
    if lam.size and lam[0] < floor:
        raise NotPSDError(f"smallest eigenvalue {lam[0]:.3e} below {floor:.3e}")
    if lam.size and lam[0] < -1e-12 * scale:
        logger.warning("clipping negative eigenvalue %.3e of a covariance form", lam[0])
    # numerical rank: rounding-level eigenvalues become exact zeros
    return np.where(lam > PSD_TOL * scale, lam, 0.0), U


def psd_factor(V: SymBilinearForm) -> np.ndarray:
    """A = U sqrt(Lambda) with A A^T = V (negative eigenvalues clipped within tolerance)."""
    lam, U = _eig_checked(V)
    return U * np.sqrt(lam)


def sample_gaussian_vector(V: SymBilinearForm, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """One draw (or `size` draws as rows) of xi ~ N(0, V)."""
    A = psd_factor(V)
    if size is None:
        return A @ rng.standard_normal(V.dim)
    return rng.standard_normal((size, V.dim)) @ A.T


def _euclidean_weights(spec: NormSpec) -> Optional[np.ndarray]:
    """w with ||x||^2 = sum_i w_i x_i^2, or None when the norm is not of that type."""
    if spec.kind == "lp" and spec.p == 2.0:
        return np.ones(spec.dim)
    if spec.kind == "weighted_lp" and spec.p == 2.0:
        return np.asarray(spec.weights, dtype=float)
    if spec.kind == "mixed":
        outer = _euclidean_weights(spec.outer)
        inner = _euclidean_weights(spec.inner)
        if outer is not None and inner is not None:
            return np.kron(outer, inner)
    return None


def _block_moments(index: int, rng: np.random.Generator, factor: np.ndarray, spec: NormSpec, samples: int) -> Moments:
    n = min(BLOCK_SIZE, samples - index * BLOCK_SIZE)
    g = rng.standard_normal((n, factor.shape[1]))
    xi = g @ factor.T
    return Moments.from_samples(np.atleast_1d(norm(spec, xi)) ** 2)


def _second_moment(
    V: SymBilinearForm,
    spec: NormSpec,
    samples: int,
    rng: Optional[np.random.Generator],
    mask: Optional[np.ndarray] = None,
    workers: Optional[int] = 1,
) -> Tuple[float, float, bool]:
    """(E ||P xi||^2, stderr, exact) where P zeroes the coordinates where mask is False."""
    if spec.dim != V.dim:
        raise DimensionMismatchError(f"form of dim {V.dim} against a norm on dim {spec.dim}")
    lam, U = _eig_checked(V)
    keep = np.ones(V.dim) if mask is None else np.asarray(mask, dtype=float)

    w = _euclidean_weights(spec)
    if w is not None:
        return float(np.dot(w * keep, np.clip(np.diag(V.matrix), 0.0, None))), 0.0, True

    top = float(lam[-1]) if lam.size else 0.0
    if top <= 0.0:
        return 0.0, 0.0, True
    # rank relative to the top eigenvalue
    big = lam > PSD_TOL * top
    if np.count_nonzero(big) == 1:
        # xi = g * x with E g^2 = 1
        x = U[:, -1] * math.sqrt(lam[-1]) * keep
        return float(norm(spec, x)) ** 2, 0.0, True

    if samples < 2:
        raise ValueError(f"Monte Carlo gamma needs at least 2 samples, got {samples}")
    if rng is None:
        raise ValueError("Monte Carlo gamma needs an explicit rng")
    factor = (U * np.sqrt(lam)) * keep[:, None]
    base = int(rng.integers(2**63 - 1))
    blocks = -(-samples // BLOCK_SIZE)
    fn = partial(_block_moments, factor=factor, spec=spec, samples=samples)
    parts = map_replications(fn, blocks, master_seed=base, stream=0, workers=workers if blocks > 1 else 1)
    m = pool_moments(parts)
    logger.debug("gamma MC %s dim %d: %d samples in %d blocks", spec.label, V.dim, samples, blocks)
    return m.mean, m.stderr, False


def gamma_psd(
    V: SymBilinearForm,
    spec: NormSpec,
    samples: int = DEFAULT_SAMPLES,
    rng: Optional[np.random.Generator] = None,
    mask: Optional[np.ndarray] = None,
    workers: Optional[int] = 1,
) -> GammaEstimate:
    """gamma(V) for a nonnegative form V.

    `mask` restricts xi to a set of coordinates (zeroing the others), which is the
    characteristic of the restricted form measured in the restricted norm.
    """
    mean, se, exact = _second_moment(V, spec, samples, rng, mask, workers)
    value = math.sqrt(max(mean, 0.0))
    stderr = se / (2.0 * value) if value > 0 and not exact else 0.0
    return GammaEstimate(value=value, stderr=stderr, samples=0 if exact else samples, exact=exact)


def _negligible(V: SymBilinearForm, scale: float) -> bool:
    """True when V is rounding noise next to a form of size `scale`."""
    return V.max_abs() <= PSD_TOL * scale


def gamma_general(
    V: SymBilinearForm,
    spec: NormSpec,
    samples: int = DEFAULT_SAMPLES,
    rng: Optional[np.random.Generator] = None,
    workers: Optional[int] = 1,
) -> GammaEstimate:
    """gamma(V+) + gamma(V-) from the spectral split; stderrs add in quadrature."""
    split = spectral_split(V)
    scale = V.max_abs()
    if _negligible(split.minus, scale):
        return gamma_psd(V, spec, samples, rng, workers=workers)
    if _negligible(split.plus, scale):
        return gamma_psd(-V, spec, samples, rng, workers=workers)
    gp = gamma_psd(split.plus, spec, samples, rng, workers=workers)
    gm = gamma_psd(split.minus, spec, samples, rng, workers=workers)
    return GammaEstimate(
        value=gp.value + gm.value,
        stderr=math.hypot(gp.stderr, gm.stderr),
        samples=gp.samples + gm.samples,
        exact=gp.exact and gm.exact,
    )


def gamma_radonifying(
    T: LinearMap,
    spec: NormSpec,
    samples: int = DEFAULT_SAMPLES,
    rng: Optional[np.random.Generator] = None,
) -> GammaEstimate:
    """||T||_{gamma(H, X)} = gamma(T T^T)."""
    if T.dims[0] != spec.dim:
        raise DimensionMismatchError(f"map into dim {T.dims[0]} against a norm on dim {spec.dim}")
    return gamma_psd(T.form(), spec, samples, rng)


def type2_defect(
    V: SymBilinearForm,
    W: SymBilinearForm,
    spec: NormSpec,
    samples: int = DEFAULT_SAMPLES,
    rng: Optional[np.random.Generator] = None,
) -> DefectEstimate:
    """How far gamma^2 is from additive on the pair (V, W); 0 in Euclidean norms."""
    parts = [_second_moment(F, spec, samples, rng) for F in (V + W, V, W)]
    value = parts[0][0] - parts[1][0] - parts[2][0]
    stderr = math.sqrt(sum(p[1] ** 2 for p in parts))
    exact = all(p[2] for p in parts)
    used = sum(0 if p[2] else samples for p in parts)
    return DefectEstimate(value=value, stderr=stderr, samples=used, exact=exact)


class SquareBoundFit(BaseModel):
    """Largest gamma(V)^2 / ||V|| seen over an ensemble of forms."""

    constant: float
    mean_ratio: float
    forms: int = Field(..., ge=0)
    skipped: int = Field(0, ge=0)


def square_bound_ratio(
    V: SymBilinearForm,
    spec: NormSpec,
    samples: int = DEFAULT_SAMPLES,
    rng: Optional[np.random.Generator] = None,
    budget: int = 16,
) -> float:
    """gamma(V)^2 / ||V|| with the certified-or-lower operator norm; nan for the zero form."""
    bound = operator_norm(V, spec, budget=budget, rng=rng)
    if bound.value == 0.0:
        return math.nan
    est = gamma_general(V, spec, samples, rng)
    return est.value**2 / bound.value


def calibrate_square_bound(
    forms: Iterable[SymBilinearForm],
    spec: NormSpec,
    samples: int = DEFAULT_SAMPLES,
    rng: Optional[np.random.Generator] = None,
    budget: int = 16,
) -> SquareBoundFit:
    """Fit K in gamma(V)^2 <= K ||V|| as the worst ratio over `forms`.

    Zero forms carry no information and are counted in `skipped`.
    """
    ratios, skipped = [], 0
    for V in forms:
        r = square_bound_ratio(V, spec, samples, rng, budget)
        if math.isnan(r):
            skipped += 1
        else:
            ratios.append(r)
    if not ratios:
        return SquareBoundFit(constant=math.nan, mean_ratio=math.nan, forms=0, skipped=skipped)
    logger.debug("square bound %s dim %d: K %.4g over %d forms", spec.label, spec.dim, max(ratios), len(ratios))
    return SquareBoundFit(
        constant=max(ratios), mean_ratio=float(np.mean(ratios)), forms=len(ratios), skipped=skipped
    )
