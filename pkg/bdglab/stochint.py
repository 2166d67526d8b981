"""
Elementary stochastic integrals.

Integrals of step integrands against an H-valued (k-dimensional Euclidean) driver, the
integrand-side covariation form sum Phi q Phi^T d[M~], and integrals of a step
integrand against a compensated Poisson random measure with a finite mark set.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .bilinear import SymBilinearForm
from .errors import DimensionMismatchError, GridMismatchError, PredictabilityError
from .martingales import MartingalePath, gen_gaussian_walk

logger = logging.getLogger(__name__)

GRID_TOL = 1e-12

PredictableRule = Callable[[int, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class DriverPath:
    """Driver M~ with its scalar quadratic variation and per-step q (trace <= 1)."""

    path: MartingalePath
    qv: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        K, k = self.path.steps, self.path.dim
        qv = np.asarray(self.qv, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if qv.shape != (K + 1,) or q.shape != (K, k, k):
            raise DimensionMismatchError(f"qv {qv.shape} / q {q.shape} for {K} steps in dim {k}")
        traces = np.trace(q, axis1=1, axis2=2)
        if np.any(traces > 1.0 + 1e-12):
            raise ValueError(f"trace of q exceeds 1 (max {traces.max():.15g})")
        object.__setattr__(self, "qv", qv)
        object.__setattr__(self, "q", q)

    @property
    def times(self) -> np.ndarray:
        return self.path.times

    @property
    def dim(self) -> int:
        return self.path.dim

    @property
    def dqv(self) -> np.ndarray:
        return np.diff(self.qv)


def make_driver_from_path(path: MartingalePath, ensemble_q: bool = False) -> DriverPath:
    """d[M~] = |dM~|^2 per step; q = dM~ dM~^T / |dM~|^2 (rank one) or I/k with ensemble_q."""
    inc = path.increments
    dqv = np.sum(inc * inc, axis=1)
    k = path.dim
    if ensemble_q:
        q = np.broadcast_to(np.eye(k) / k, (inc.shape[0], k, k)).copy()
    else:
        safe = np.where(dqv > 0, dqv, 1.0)
        q = np.einsum("ki,kj->kij", inc, inc) / safe[:, None, None]
        q[dqv == 0] = 0.0
    qv = np.concatenate([[0.0], np.cumsum(dqv)])
    return DriverPath(path=path, qv=qv, q=q)


def make_driver_brownian(
    k: int, K: int, T: float, rng: np.random.Generator, ensemble_q: bool = False
) -> DriverPath:
    """Cylindrical Brownian driver: K steps of N(0, (T/K) I_k) on [0, T]."""
    if T <= 0:
        raise ValueError("horizon must be positive")
    path = gen_gaussian_walk(K, k, np.sqrt(T / K), rng, count=1, T=T)[0]
    return make_driver_from_path(path, ensemble_q=ensemble_q)


@dataclass(frozen=True, eq=False)
class ElementaryProcess:
    """Phi = Phi_j on (t_j, t_{j+1}], zero after the last breakpoint; Phi_j is d x k.

    Either `values` holds the (J, d, k) matrices, or `rule(j, history)` returns Phi_j from
    the driver values on grid points up to t_j.
    """

    breakpoints: np.ndarray
    values: Optional[np.ndarray] = None
    rule: Optional[PredictableRule] = None
    shape: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        b = np.asarray(self.breakpoints, dtype=float)
        if b.ndim != 1 or b.size < 2 or b[0] != 0.0 or np.any(np.diff(b) <= 0):
            raise ValueError("breakpoints must start at 0 and increase strictly")
        object.__setattr__(self, "breakpoints", b)
        if (self.values is None) == (self.rule is None):
            raise ValueError("give exactly one of values or rule")
        if self.values is not None:
            v = np.asarray(self.values, dtype=float)
            if v.ndim == 2:
                v = np.broadcast_to(v, (b.size - 1,) + v.shape).copy()
            if v.ndim != 3 or v.shape[0] != b.size - 1:
                raise DimensionMismatchError(f"{b.size - 1} intervals but values of shape {v.shape}")
            object.__setattr__(self, "values", v)
            object.__setattr__(self, "shape", v.shape[1:])
        elif self.shape is None:
            raise ValueError("rule-based integrands need their (d, k) shape")

    @property
    def intervals(self) -> int:
        return self.breakpoints.size - 1

    @classmethod
    def constant(cls, matrix, horizon: float) -> "ElementaryProcess":
        return cls(breakpoints=np.array([0.0, horizon]), values=np.atleast_2d(matrix)[None])

    @classmethod
    def rank_one(cls, h, x, breakpoints: Sequence[float]) -> "ElementaryProcess":
        """h (x) x on every interval: Phi = x h^T."""
        m = np.outer(np.atleast_1d(x), np.atleast_1d(h))
        return cls(breakpoints=np.asarray(breakpoints, dtype=float), values=m)

    @classmethod
    def zero(cls, d: int, k: int, horizon: float) -> "ElementaryProcess":
        return cls.constant(np.zeros((d, k)), horizon)

    def __add__(self, other: "ElementaryProcess") -> "ElementaryProcess":
        if self.shape != other.shape:
            raise DimensionMismatchError(f"integrands of shape {self.shape} and {other.shape}")
        if self.values is not None and other.values is not None:
            grid = np.union1d(self.breakpoints, other.breakpoints)
            mids = 0.5 * (grid[1:] + grid[:-1])
            return ElementaryProcess(breakpoints=grid, values=self._at(mids) + other._at(mids))
        if not np.array_equal(self.breakpoints, other.breakpoints):
            raise GridMismatchError("rule-based integrands add on identical breakpoints only")
        a, b = self, other

        def rule(j, history):
            return a._value(j, history) + b._value(j, history)

        return ElementaryProcess(breakpoints=self.breakpoints, rule=rule, shape=self.shape)

    def _at(self, times: np.ndarray) -> np.ndarray:
        """Deterministic values at the given times (zero outside (0, t_J])."""
        j = np.searchsorted(self.breakpoints, times, side="left") - 1
        out = np.zeros((times.size,) + self.shape)
        inside = (j >= 0) & (j < self.intervals)
        out[inside] = self.values[j[inside]]
        return out

    def _value(self, j: int, history: np.ndarray) -> np.ndarray:
        if self.values is not None:
            return self.values[j]
        m = np.asarray(self.rule(j, history), dtype=float)
        if m.shape != self.shape:
            raise PredictabilityError(f"rule returned shape {m.shape}, expected {self.shape}")
        return m

    def on_grid(self, driver: DriverPath) -> np.ndarray:
        """(K, d, k): Phi on each driver step (t_{i-1}, t_i]."""
        times = driver.times
        idx = np.searchsorted(times, self.breakpoints)
        idx = np.minimum(idx, times.size - 1)
        near = np.isclose(times[idx], self.breakpoints, rtol=0.0, atol=GRID_TOL * max(1.0, times[-1]))
        if not np.all(near):
            raise GridMismatchError("integrand breakpoints are not driver grid points")
        if self.shape[1] != driver.dim:
            raise DimensionMismatchError(f"integrand acts on dim {self.shape[1]}, driver is {driver.dim}")
        K = driver.path.steps
        out = np.zeros((K,) + self.shape)
        for j in range(self.intervals):
            lo, hi = idx[j], idx[j + 1]
            if hi > lo:
                out[lo:hi] = self._value(j, driver.path.values[: lo + 1])
        return out


def integrate(phi: ElementaryProcess, driver: DriverPath) -> MartingalePath:
    """(Phi . M~)_t = sum_j Phi_j (M~_{t_{j+1} ^ t} - M~_{t_j ^ t}) on the driver grid."""
    mats = phi.on_grid(driver)
    inc = np.einsum("kij,kj->ki", mats, driver.path.increments)
    values = np.vstack([np.zeros((1, phi.shape[0])), np.cumsum(inc, axis=0)])
    return MartingalePath(driver.times, values, "stochastic_integral", leaf=driver.path.leaf)


def integrand_form(phi: ElementaryProcess, driver: DriverPath, upto: Optional[int] = None) -> SymBilinearForm:
    """sum_{i <= upto} Phi_i q_i Phi_i^T d[M~]_i."""
    K = driver.path.steps
    upto = K if upto is None else upto
    if upto < 0 or upto > K:
        raise ValueError(f"upto={upto} outside 0..{K}")
    mats = phi.on_grid(driver)[:upto]
    w = driver.dqv[:upto]
    form = np.einsum("kij,kjl,kml,k->im", mats, driver.q[:upto], mats, w)
    return SymBilinearForm(0.5 * (form + form.T))


@dataclass(frozen=True, eq=False)
class MarkedJumpProcess:
    """Poisson random measure on [0, T] x {0..m-1} with intensity rates[j] dt.

    F[j, i] is the integrand value (a d-vector) for mark j on (b_i, b_{i+1}].
    """

    rates: np.ndarray
    T: float
    jump_times: np.ndarray
    jump_marks: np.ndarray
    breakpoints: np.ndarray
    F: np.ndarray

    def __post_init__(self):
        rates = np.atleast_1d(np.asarray(self.rates, dtype=float))
        if np.any(rates <= 0):
            raise ValueError("mark intensities must be positive")
        b = np.asarray(self.breakpoints, dtype=float)
        F = np.asarray(self.F, dtype=float)
        if F.ndim != 3 or F.shape[0] != rates.size or F.shape[1] != b.size - 1:
            raise DimensionMismatchError(f"F of shape {F.shape} for {rates.size} marks, {b.size - 1} intervals")
        if b[0] != 0.0 or not np.isclose(b[-1], self.T) or np.any(np.diff(b) <= 0):
            raise ValueError("breakpoints must partition [0, T]")
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "jump_times", np.asarray(self.jump_times, dtype=float))
        object.__setattr__(self, "jump_marks", np.asarray(self.jump_marks, dtype=int))

    @property
    def dim(self) -> int:
        return self.F.shape[2]

    @classmethod
    def simulate(cls, rates, T: float, F, breakpoints, rng: np.random.Generator) -> "MarkedJumpProcess":
        rates = np.atleast_1d(np.asarray(rates, dtype=float))
        if np.any(rates <= 0):
            raise ValueError("mark intensities must be positive")
        total = float(rates.sum())
        n = int(rng.poisson(total * T))
        times = np.sort(rng.uniform(0.0, T, size=n))
        marks = rng.choice(rates.size, size=n, p=rates / total)
        return cls(rates=rates, T=T, jump_times=times, jump_marks=marks, breakpoints=breakpoints, F=F)

    def integrand_at(self, marks: np.ndarray, times: np.ndarray) -> np.ndarray:
        i = np.clip(np.searchsorted(self.breakpoints, times, side="left") - 1, 0, self.F.shape[1] - 1)
        return self.F[marks, i]

    def compensator(self, times: np.ndarray) -> np.ndarray:
        """sum_j rate_j int_0^t F(j, s) ds at each time, shape (len(times), d)."""
        b = self.breakpoints
        overlap = np.clip(np.minimum(times[:, None], b[None, 1:]) - b[None, :-1], 0.0, None)
        drift = np.einsum("j,jid->id", self.rates, self.F)
        return overlap @ drift


def poisson_integrate(P: MarkedJumpProcess, horizon: Optional[float] = None, grid: int = 16):
    """(path, form) for int F dN~ on [0, horizon].

    The path lives on the union of a regular grid and the jump times, with the jumps
    recorded on it; the form is the jump sum sum F F^T.
    """
    horizon = P.T if horizon is None else float(horizon)
    if horizon > P.T * (1 + 1e-12) or horizon <= 0:
        raise ValueError(f"horizon {horizon} outside (0, {P.T}]")
    keep = P.jump_times <= horizon
    jt, jm = P.jump_times[keep], P.jump_marks[keep]
    jt_pos = jt > 0.0
    jt, jm = jt[jt_pos], jm[jt_pos]
    sizes = P.integrand_at(jm, jt)
    times = np.union1d(np.linspace(0.0, horizon, grid + 1), jt)
    steps = np.searchsorted(times, jt)
    jumps = np.zeros((times.size - 1, P.dim))
    np.add.at(jumps, steps - 1, sizes)
    values = np.vstack([np.zeros((1, P.dim)), np.cumsum(jumps, axis=0)]) - P.compensator(times)
    values[0] = 0.0
    path = MartingalePath(times, values, "poisson_integral", jump_steps=steps, jump_sizes=sizes)
    form = SymBilinearForm(sizes.T @ sizes) if sizes.size else SymBilinearForm.zeros(P.dim)
    logger.debug("poisson integral to t=%.4g: %d jumps", horizon, jt.size)
    return path, form
