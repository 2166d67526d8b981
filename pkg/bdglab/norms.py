"""
Ambient norms on d-dimensional coordinate space.

A NormSpec describes the Banach space X = (R^d, ||.||). Three kinds are supported:
plain lp, weighted lp and a one-level mixed norm (outer lp-type norm of the inner
norms of equal-size blocks), which realizes finite Banach function spaces such as
l^q(l^r). Every norm is an exact closed form, vectorized over leading axes, and has
an exact dual computed the same way.
"""

import logging
import math
from typing import Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.optimize import minimize

from .errors import DimensionMismatchError

logger = logging.getLogger(__name__)

INF = "inf"
Exponent = Union[Literal["inf"], float]


def _parse_exponent(value) -> Exponent:
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "infinity", "∞"):
            return INF
        value = float(value)
    if value == math.inf:
        return INF
    value = float(value)
    if not value >= 1.0:
        raise ValueError(f"exponent must be in [1, inf], got {value}")
    return value


def conjugate_exponent(p: Exponent) -> Exponent:
    """q with 1/p + 1/q = 1; the pair (1, inf) is handled by tag, not by a large float."""
    p = _parse_exponent(p)
    if p == INF:
        return 1.0
    if p == 1.0:
        return INF
    return p / (p - 1.0)


def p_star(p: float) -> float:
    """max(p, p/(p-1)), the Hilbert-space UMD constant is p* - 1."""
    if p <= 1.0:
        return math.inf
    return max(p, p / (p - 1.0))


class NormSpec(BaseModel):
    """An exact norm on R^dim.

    JSON shape: {"kind": "lp", "p": 2, "dim": 8},
    {"kind": "weighted_lp", "p": 1, "weights": [2, 1], "dim": 2},
    {"kind": "mixed", "outer": {...}, "inner": {...}} (dim = outer.dim * inner.dim).
    """

    model_config = ConfigDict(frozen=True)

    kind: Literal["lp", "weighted_lp", "mixed"] = "lp"
    p: Exponent = 2.0
    dim: int = Field(..., ge=1)
    weights: Optional[Tuple[float, ...]] = None
    outer: Optional["NormSpec"] = None
    inner: Optional["NormSpec"] = None

    @field_validator("p", mode="before")
    @classmethod
    def _exponent(cls, v):
        return _parse_exponent(v)

    @model_validator(mode="before")
    @classmethod
    def _fill_mixed_dim(cls, data):
        if isinstance(data, dict) and data.get("kind") == "mixed" and "dim" not in data:
            outer, inner = data.get("outer"), data.get("inner")
            try:
                od = outer.dim if isinstance(outer, NormSpec) else outer["dim"]
                idim = inner.dim if isinstance(inner, NormSpec) else inner["dim"]
                data = {**data, "dim": od * idim}
            except (KeyError, TypeError, AttributeError):
                pass
        return data

    @model_validator(mode="after")
    def _consistent(self):
        if self.kind == "lp":
            if self.weights is not None or self.outer is not None or self.inner is not None:
                raise ValueError("lp norms take no weights or blocks")
        elif self.kind == "weighted_lp":
            if self.weights is None or len(self.weights) != self.dim:
                raise ValueError("weighted_lp needs one weight per coordinate")
            if not all(w > 0 and math.isfinite(w) for w in self.weights):
                raise ValueError("weights must be strictly positive and finite")
        else:
            if self.outer is None or self.inner is None:
                raise ValueError("mixed norms need outer and inner specs")
            if self.outer.kind == "mixed" or self.inner.kind == "mixed":
                raise ValueError("mixed norms nest one level only")
            if self.dim != self.outer.dim * self.inner.dim:
                raise ValueError(
                    f"mixed dim {self.dim} != {self.outer.dim} blocks x {self.inner.dim}"
                )
        return self

    @property
    def label(self) -> str:
        if self.kind == "lp":
            return f"lp{_fmt(self.p)}"
        if self.kind == "weighted_lp":
            return f"wlp{_fmt(self.p)}"
        return f"{self.outer.label}({self.inner.label})"

    @property
    def is_euclidean(self) -> bool:
        return self.kind == "lp" and self.p == 2.0


def _fmt(p: Exponent) -> str:
    if p == INF:
        return "inf"
    return f"{p:g}"


def lp(p, dim: int) -> NormSpec:
    return NormSpec(kind="lp", p=p, dim=dim)


def weighted_lp(p, weights) -> NormSpec:
    weights = tuple(float(w) for w in weights)
    return NormSpec(kind="weighted_lp", p=p, weights=weights, dim=len(weights))


def mixed(outer: NormSpec, inner: NormSpec) -> NormSpec:
    return NormSpec(kind="mixed", outer=outer, inner=inner, dim=outer.dim * inner.dim)


def parse_norm_label(label: str, dim: int) -> NormSpec:
    """CLI shorthand: lp2, lp1, lpinf, lp3.5 -> lp NormSpec of the given dimension."""
    s = label.strip().lower()
    if not s.startswith("lp"):
        raise ValueError(f"unknown norm label {label!r} (expected lp<p>)")
    return lp(s[2:], dim)


def _check_dim(spec: NormSpec, x: np.ndarray) -> None:
    if x.ndim == 0 or x.shape[-1] != spec.dim:
        raise DimensionMismatchError(
            f"vector of shape {x.shape} does not live in dimension {spec.dim}"
        )


def _lp_raw(x: np.ndarray, p: Exponent) -> np.ndarray:
    a = np.abs(x)
    if p == INF:
        return a.max(axis=-1)
    if p == 1.0:
        return a.sum(axis=-1)
    if p == 2.0:
        return np.sqrt(np.einsum("...i,...i->...", a, a))
    # scale first so large entries do not overflow a ** p
    m = a.max(axis=-1, keepdims=True)
    safe = np.where(m > 0, m, 1.0)
    return safe[..., 0] * ((a / safe) ** p).sum(axis=-1) ** (1.0 / p)


def _scale(spec: NormSpec) -> np.ndarray:
    """c with ||x||_{w,p} = ||c * x||_p."""
    w = np.asarray(spec.weights, dtype=float)
    if spec.p == INF:
        return w
    return w ** (1.0 / spec.p)


def _blocks(spec: NormSpec, x: np.ndarray) -> np.ndarray:
    return x.reshape(x.shape[:-1] + (spec.outer.dim, spec.inner.dim))


def norm(spec: NormSpec, x) -> np.ndarray | float:
    """||x||_X, vectorized over all leading axes of x."""
    x = np.asarray(x, dtype=float)
    _check_dim(spec, x)
    if spec.kind == "lp":
        out = _lp_raw(x, spec.p)
    elif spec.kind == "weighted_lp":
        out = _lp_raw(x * _scale(spec), spec.p)
    else:
        out = norm(spec.outer, norm(spec.inner, _blocks(spec, x)))
    return float(out) if np.ndim(out) == 0 else out


def dual_spec(spec: NormSpec) -> NormSpec:
    """The NormSpec whose norm is the dual norm of `spec` (X* identified with R^d)."""
    if spec.kind == "lp":
        return lp(conjugate_exponent(spec.p), spec.dim)
    if spec.kind == "weighted_lp":
        q = conjugate_exponent(spec.p)
        inv = 1.0 / _scale(spec)
        w = inv if q == INF else inv ** q
        return weighted_lp(q, w)
    return mixed(dual_spec(spec.outer), dual_spec(spec.inner))


def dual_norm(spec: NormSpec, xstar) -> np.ndarray | float:
    """||x*||_{X*} in closed form; mixed duals are taken blockwise."""
    xstar = np.asarray(xstar, dtype=float)
    _check_dim(spec, xstar)
    return norm(dual_spec(spec), xstar)


def _aligned_lp(x: np.ndarray, p: Exponent) -> np.ndarray:
    n = _lp_raw(x, p)
    if n == 0:
        return np.zeros_like(x)
    if p == INF:
        u = np.zeros_like(x)
        i = int(np.argmax(np.abs(x)))
        u[i] = np.sign(x[i])
        return u
    if p == 1.0:
        return np.sign(x)
    y = x / n
    return np.sign(y) * np.abs(y) ** (p - 1.0)


def aligned_dual_vector(spec: NormSpec, x) -> np.ndarray:
    """A norming functional: dual_norm(x*) = 1 and <x, x*> = ||x|| (x* = 0 for x = 0)."""
    x = np.asarray(x, dtype=float)
    _check_dim(spec, x)
    if x.ndim != 1:
        raise DimensionMismatchError("aligned_dual_vector takes a single vector")
    if spec.kind == "lp":
        return _aligned_lp(x, spec.p)
    if spec.kind == "weighted_lp":
        c = _scale(spec)
        return c * _aligned_lp(c * x, spec.p)
    blocks = _blocks(spec, x)
    out = np.zeros_like(blocks)
    for b in range(spec.outer.dim):
        out[b] = aligned_dual_vector(spec.inner, blocks[b])
    a = aligned_dual_vector(spec.outer, norm(spec.inner, blocks))
    return (out * a[:, None]).reshape(x.shape)


def _unit_rows(values: np.ndarray, n: np.ndarray) -> np.ndarray:
    return values / n[:, None]


def sample_dual_unit_vectors(spec: NormSpec, count: int, rng: np.random.Generator) -> np.ndarray:
    """`count` random directions normalized to dual norm 1, shape (count, dim)."""
    if count < 0:
        raise ValueError("count must be nonnegative")
    if count == 0:
        return np.zeros((0, spec.dim))
    g = rng.standard_normal((count, spec.dim))
    return _unit_rows(g, np.atleast_1d(dual_norm(spec, g)))


def sample_unit_vectors(spec: NormSpec, count: int, rng: np.random.Generator) -> np.ndarray:
    """Same as sample_dual_unit_vectors but on the primal unit sphere."""
    if count < 0:
        raise ValueError("count must be nonnegative")
    if count == 0:
        return np.zeros((0, spec.dim))
    g = rng.standard_normal((count, spec.dim))
    return _unit_rows(g, np.atleast_1d(norm(spec, g)))


def dual_norm_by_ascent(
    spec: NormSpec,
    xstar,
    rng: np.random.Generator,
    starts: int = 4096,
) -> float:
    """Estimate sup{<x, x*> : ||x|| <= 1} from sampled unit vectors plus a local polish.

    Cross-check for dual_norm; the objective <x, x*>/||x|| is scale invariant, so the
    polish runs unconstrained and the radial projection is implicit.
    """
    xstar = np.asarray(xstar, dtype=float)
    _check_dim(spec, xstar)
    if not np.any(xstar):
        return 0.0
    candidates = sample_unit_vectors(spec, starts, rng)
    scores = candidates @ xstar
    best = candidates[int(np.argmax(scores))]

    def objective(z):
        n = norm(spec, z)
        return -(z @ xstar) / n if n > 0 else 0.0

    smooth = spec.kind != "mixed" and spec.p not in (1.0, INF)
    if smooth:
        res = minimize(objective, best, method="BFGS", options={"gtol": 1e-12, "maxiter": 500})
    else:
        res = minimize(objective, best, method="Powell", options={"xtol": 1e-12, "ftol": 1e-14})
    value = max(float(-res.fun), float(scores.max()))
    logger.debug("dual norm ascent: %d starts, polish %s, value %.12g", starts, res.message, value)
    return value
