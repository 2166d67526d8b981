"""
Discrete-time martingale generators.

Families: Paley-Walsh trees (exhaustive or sampled leaves), Gaussian walks with
independent increments, a fine-grid Brownian proxy and symmetrized compound Poisson
paths. Time is always a finite grid and "sup over t" is the max over grid points.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterator, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from .errors import DimensionMismatchError, EnumerationLimitError, PredictabilityError
from .gaussian import psd_factor
from .bilinear import SymBilinearForm
from .norms import NormSpec, norm

logger = logging.getLogger(__name__)

EXHAUSTIVE_MAX_DEPTH = 14
SAMPLED_MAX_DEPTH = 20
BROWNIAN_MIN_STEPS = 64
FAMILIES = (
    "paley_walsh",
    "gaussian_walk",
    "brownian_proxy",
    "compound_poisson",
    "transformed",
    "stochastic_integral",
    "poisson_integral",
    "deterministic",
)


@dataclass(frozen=True, eq=False)
class MartingalePath:
    """values[k] = M(t_k), with values[0] = 0 and t_0 = 0.

    For jump families `jump_steps` lists the grid indices k at which a jump happens and
    `jump_sizes` the jumps themselves (defaulting to the grid increments at those steps,
    which differ from the jumps when a continuous compensator is subtracted). `leaf` is
    the tree leaf for Paley-Walsh paths.
    """

    times: np.ndarray
    values: np.ndarray
    family: str
    leaf: Optional[int] = None
    jump_steps: Optional[np.ndarray] = None
    jump_sizes: Optional[np.ndarray] = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if t.ndim != 1 or v.shape[0] != t.shape[0]:
            raise DimensionMismatchError(f"{t.shape[0]} grid points but {v.shape[0]} values")
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("time grid must start at 0 and increase strictly")
        if np.any(v[0] != 0.0):
            raise ValueError("martingale paths start at 0")
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        if self.jump_steps is not None:
            steps = np.asarray(self.jump_steps, dtype=int)
            object.__setattr__(self, "jump_steps", steps)
            if self.jump_sizes is None:
                object.__setattr__(self, "jump_sizes", np.diff(v, axis=0)[steps - 1])
            else:
                sizes = np.asarray(self.jump_sizes, dtype=float).reshape(steps.size, v.shape[1])
                object.__setattr__(self, "jump_sizes", sizes)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def steps(self) -> int:
        return self.values.shape[0] - 1

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]

    @property
    def jumps(self) -> np.ndarray:
        if self.jump_sizes is None:
            return np.zeros((0, self.dim))
        return self.jump_sizes

    def sup_norm(self, spec: NormSpec) -> float:
        return float(np.max(norm(spec, self.values)))

    def terminal_norm(self, spec: NormSpec) -> float:
        return float(norm(spec, self.values[-1]))

    def index_of(self, t: float) -> int:
        """Largest k with t_k <= t."""
        return int(np.searchsorted(self.times, t, side="right") - 1)


@dataclass(frozen=True, eq=False)
class DyadicTree:
    """Paley-Walsh increments: step n+1 from node (n, i) is +-levels[n][i].

    Node i at level n is the integer formed by the first n leaf bits (most significant
    first); bit 0 means the + branch. A level may hold a single row, shared by all nodes.
    """

    levels: Tuple[np.ndarray, ...]

    def __post_init__(self):
        levels = tuple(np.atleast_2d(np.asarray(v, dtype=float)) for v in self.levels)
        if not levels:
            raise ValueError("a tree needs at least one level")
        d = levels[0].shape[1]
        for n, v in enumerate(levels):
            if v.shape[1] != d or v.shape[0] not in (1, 2**n):
                raise DimensionMismatchError(f"level {n} has shape {v.shape}")
        object.__setattr__(self, "levels", levels)

    @property
    def depth(self) -> int:
        return len(self.levels)

    @property
    def dim(self) -> int:
        return self.levels[0].shape[1]

    @classmethod
    def random(cls, depth: int, d: int, scale: float, rng: np.random.Generator) -> "DyadicTree":
        if depth > SAMPLED_MAX_DEPTH:
            raise EnumerationLimitError(f"depth {depth} exceeds {SAMPLED_MAX_DEPTH}")
        return cls(tuple(scale * rng.standard_normal((2**n, d)) for n in range(depth)))

    @classmethod
    def constant(cls, depth: int, x) -> "DyadicTree":
        """Every step is +-x."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return cls(tuple(x[None, :] for _ in range(depth)))

    @classmethod
    def from_function(cls, depth: int, fn: Callable[[int, int], np.ndarray]) -> "DyadicTree":
        """levels[n][i] = fn(n, i)."""
        return cls(tuple(np.array([fn(n, i) for i in range(2**n)], dtype=float) for n in range(depth)))

    def node_vectors(self, n: int, nodes: np.ndarray) -> np.ndarray:
        v = self.levels[n]
        return v[np.zeros_like(nodes)] if v.shape[0] == 1 else v[nodes]

    def increments(self, leaves: np.ndarray) -> np.ndarray:
        """(len(leaves), depth, d) array of increments along the given leaves."""
        leaves = np.asarray(leaves, dtype=np.int64)
        N = self.depth
        out = np.empty((leaves.size, N, self.dim))
        for n in range(N):
            nodes = leaves >> (N - n)
            eps = 1.0 - 2.0 * ((leaves >> (N - n - 1)) & 1)
            out[:, n, :] = eps[:, None] * self.node_vectors(n, nodes)
        return out

    def with_levels(self, n: int, vectors: np.ndarray) -> "DyadicTree":
        levels = list(self.levels)
        levels[n] = np.atleast_2d(vectors)
        return DyadicTree(tuple(levels))


def leaf_bits(leaves: np.ndarray, depth: int) -> np.ndarray:
    """(len(leaves), depth) array of branch bits, first step first."""
    leaves = np.asarray(leaves, dtype=np.int64)
    shifts = np.arange(depth - 1, -1, -1)
    return (leaves[:, None] >> shifts[None, :]) & 1


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Paths with probability weights; exact ensembles enumerate every outcome."""

    paths: Tuple[MartingalePath, ...]
    weights: np.ndarray
    exact: bool = False
    tree: Optional[DyadicTree] = None
    leaves: Optional[np.ndarray] = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(self.paths),):
            raise DimensionMismatchError(f"{len(self.paths)} paths but {w.size} weights")
        object.__setattr__(self, "weights", w / w.sum() if w.size else w)

    @classmethod
    def from_array(
        cls,
        times,
        values: np.ndarray,
        family: str,
        weights=None,
        exact: bool = False,
        tree: Optional[DyadicTree] = None,
        leaves: Optional[np.ndarray] = None,
    ) -> "PathEnsemble":
        n = values.shape[0]
        paths = tuple(
            MartingalePath(times, values[i], family, leaf=None if leaves is None else int(leaves[i]))
            for i in range(n)
        )
        w = np.full(n, 1.0 / n) if weights is None else weights
        return cls(paths=paths, weights=w, exact=exact, tree=tree, leaves=leaves)

    def __iter__(self) -> Iterator[MartingalePath]:
        return iter(self.paths)

    def __len__(self) -> int:
        return len(self.paths)

    def __getitem__(self, i: int) -> MartingalePath:
        return self.paths[i]

    @property
    def common_grid(self) -> bool:
        t0 = self.paths[0].times
        return all(p.times.shape == t0.shape and np.array_equal(p.times, t0) for p in self.paths)

    def stacked(self) -> np.ndarray:
        """(n, K+1, d) values; requires a common grid."""
        if not self.common_grid:
            raise DimensionMismatchError("paths do not share a grid")
        return np.stack([p.values for p in self.paths])

    def expectation(self, values) -> float:
        return float(np.dot(self.weights, np.asarray(values, dtype=float)))


def _check_depth(depth: int, exhaustive: bool) -> None:
    if depth < 1:
        raise ValueError("depth must be at least 1")
    cap = EXHAUSTIVE_MAX_DEPTH if exhaustive else SAMPLED_MAX_DEPTH
    if depth > cap:
        mode = "exhaustive" if exhaustive else "sampled"
        raise EnumerationLimitError(f"depth {depth} exceeds the {mode} cap {cap}")


def gen_paley_walsh(
    depth: int,
    d: int,
    increment_scale: float = 1.0,
    rng: Optional[np.random.Generator] = None,
    exhaustive: bool = True,
    count: Optional[int] = None,
    tree: Optional[DyadicTree] = None,
) -> PathEnsemble:
    """Paley-Walsh martingale on a dyadic tree.

    Node vectors are i.i.d. N(0, increment_scale^2 I_d) unless `tree` is given. Exhaustive
    mode returns all 2^depth leaves with weight 2^-depth; sampled mode draws `count`
    leaves uniformly (rng required).
    """
    _check_depth(depth, exhaustive)
    if tree is None:
        if rng is None:
            raise ValueError("a random tree needs an rng")
        tree = DyadicTree.random(depth, d, increment_scale, rng)
    if tree.depth != depth or tree.dim != d:
        raise DimensionMismatchError(f"tree is {tree.depth} deep in dim {tree.dim}, wanted {depth} / {d}")
    if exhaustive:
        leaves = np.arange(2**depth, dtype=np.int64)
    else:
        if rng is None or count is None or count < 1:
            raise ValueError("sampled mode needs an rng and a positive count")
        leaves = rng.integers(0, 2**depth, size=count, dtype=np.int64)
    inc = tree.increments(leaves)
    values = np.concatenate([np.zeros((leaves.size, 1, d)), np.cumsum(inc, axis=1)], axis=1)
    times = np.arange(depth + 1, dtype=float)
    logger.debug("paley-walsh depth %d dim %d: %d leaves (exhaustive=%s)", depth, d, leaves.size, exhaustive)
    return PathEnsemble.from_array(times, values, "paley_walsh", exact=exhaustive, tree=tree, leaves=leaves)


def _schedule_factors(volatility, K: int, d: int) -> List[np.ndarray]:
    """Per-step factors A_k with A_k A_k^T = Sigma_k."""
    if volatility is None:
        return [np.eye(d)] * K
    vol = np.asarray(volatility, dtype=float)
    if vol.ndim == 0:
        return [float(vol) * np.eye(d)] * K
    if vol.ndim == 2:
        a = psd_factor(SymBilinearForm(vol))
        return [a] * K
    if vol.ndim == 3 and vol.shape[0] == K:
        return [psd_factor(SymBilinearForm(v)) for v in vol]
    raise DimensionMismatchError(f"volatility schedule of shape {vol.shape} for {K} steps in dim {d}")


def gen_gaussian_walk(
    K: int,
    d: int,
    volatility=None,
    rng: Optional[np.random.Generator] = None,
    count: int = 1,
    T: Optional[float] = None,
    family: str = "gaussian_walk",
) -> PathEnsemble:
    """Independent N(0, Sigma_k) increments.

    `volatility` is None (identity), a scalar sigma (Sigma = sigma^2 I), one covariance
    matrix for every step, or a (K, d, d) stack. The grid is 0..K, or K equal steps on
    [0, T] when T is given.
    """
    if K < 1:
        raise ValueError("a walk needs at least one step")
    if rng is None:
        raise ValueError("gen_gaussian_walk needs an rng")
    factors = _schedule_factors(volatility, K, d)
    g = rng.standard_normal((count, K, d))
    if all(f is factors[0] for f in factors):
        inc = g @ factors[0].T
    else:
        inc = np.einsum("nkj,kij->nki", g, np.stack(factors))
    values = np.concatenate([np.zeros((count, 1, d)), np.cumsum(inc, axis=1)], axis=1)
    times = np.arange(K + 1, dtype=float) if T is None else np.linspace(0.0, T, K + 1)
    return PathEnsemble.from_array(times, values, family)


def gen_brownian_proxy(
    K: int,
    d: int,
    T: float,
    rng: np.random.Generator,
    count: int = 1,
    volatility: float = 1.0,
) -> PathEnsemble:
    """Gaussian walk with Sigma_k = volatility^2 (T/K) I on K equal steps of [0, T]."""
    if K < BROWNIAN_MIN_STEPS:
        raise ValueError(f"a Brownian proxy needs at least {BROWNIAN_MIN_STEPS} steps, got {K}")
    if T <= 0:
        raise ValueError("horizon must be positive")
    sigma = volatility * np.sqrt(T / K)
    return gen_gaussian_walk(K, d, sigma, rng, count=count, T=T, family="brownian_proxy")


JumpLaw = Callable[[np.random.Generator, int], np.ndarray]


def gaussian_jumps(d: int, scale: float = 1.0) -> JumpLaw:
    def law(rng: np.random.Generator, n: int) -> np.ndarray:
        return scale * rng.standard_normal((n, d))

    return law


def fixed_jumps(x) -> JumpLaw:
    """Jumps of size +-x (after symmetrization)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))

    def law(rng: np.random.Generator, n: int) -> np.ndarray:
        return np.tile(x, (n, 1))

    return law


def gen_compound_poisson(
    rate: float,
    T: float,
    jump_law: JumpLaw,
    grid=16,
    rng: Optional[np.random.Generator] = None,
    count: int = 1,
) -> PathEnsemble:
    """Symmetrized compound Poisson paths on the union of a regular grid and the jump times.

    `grid` is a number of regular steps or an explicit grid on [0, T]. Each jump J drawn
    from `jump_law` is emitted as +J or -J with probability 1/2.
    """
    if rate <= 0:
        raise ValueError(f"jump rate must be positive, got {rate}")
    if T <= 0:
        raise ValueError("horizon must be positive")
    if rng is None:
        raise ValueError("gen_compound_poisson needs an rng")
    base = np.linspace(0.0, T, int(grid) + 1) if np.isscalar(grid) else np.asarray(grid, dtype=float)
    if base[0] != 0.0 or not np.isclose(base[-1], T):
        raise ValueError("the regular grid must span [0, T]")
    paths = []
    for _ in range(count):
        n = int(rng.poisson(rate * T))
        jt = np.sort(rng.uniform(0.0, T, size=n))
        jt = jt[jt > 0.0]
        sizes = np.asarray(jump_law(rng, jt.size), dtype=float)
        if sizes.ndim != 2 or sizes.shape[0] != jt.size:
            raise DimensionMismatchError(f"jump law returned shape {sizes.shape} for {jt.size} jumps")
        sizes = sizes * rng.choice((-1.0, 1.0), size=jt.size)[:, None]
        d = sizes.shape[1]
        times = np.union1d(base, jt)
        steps = np.searchsorted(times, jt)
        inc = np.zeros((times.size - 1, d))
        np.add.at(inc, steps - 1, sizes)
        values = np.vstack([np.zeros((1, d)), np.cumsum(inc, axis=0)])
        paths.append(MartingalePath(times, values, "compound_poisson", jump_steps=np.unique(steps)))
    return PathEnsemble(paths=tuple(paths), weights=np.full(count, 1.0 / count))


@dataclass(frozen=True)
class PredictableTransform:
    """Step factors a_k (k = 1..K) multiplying the increments d_k.

    `rule(k, history)` sees values[0..k-1] only. Tree transforms instead carry one
    factor per node (`node_factors[n]` has 2^n entries); step n+1 uses the factor of the
    node reached after n steps, which only depends on the first n branch bits.
    """

    kind: Literal["contraction", "sign"] = "contraction"
    rule: Optional[Callable[[int, np.ndarray], float]] = None
    node_factors: Optional[Tuple[np.ndarray, ...]] = None
    steps: Optional[int] = None

    @classmethod
    def constant(cls, factors: Sequence[float], kind: str = "contraction") -> "PredictableTransform":
        f = tuple(float(a) for a in factors)
        return cls(kind=kind, rule=lambda k, history: f[k - 1], steps=len(f))

    @classmethod
    def identity(cls, K: int) -> "PredictableTransform":
        return cls.constant([1.0] * K, kind="sign")

    @classmethod
    def on_tree(cls, node_factors: Sequence[np.ndarray], kind: str = "contraction") -> "PredictableTransform":
        table = tuple(np.atleast_1d(np.asarray(a, dtype=float)) for a in node_factors)
        for n, a in enumerate(table):
            if a.shape[0] not in (1, 2**n):
                raise DimensionMismatchError(f"node factors at level {n} have {a.shape[0]} entries")
        return cls(kind=kind, node_factors=table, steps=len(table))

    def _validate(self, a: np.ndarray) -> None:
        if self.kind == "sign":
            if not np.all(np.isin(a, (-1.0, 1.0))):
                raise PredictabilityError("sign transforms take factors in {-1, 1}")
        elif np.any(np.abs(a) > 1.0 + 1e-12):
            raise PredictabilityError(f"contraction factor {np.max(np.abs(a)):.6g} exceeds 1")

    def factors_for(self, M: MartingalePath, depth: Optional[int] = None) -> np.ndarray:
        K = M.steps
        if self.steps is not None and self.steps != K:
            raise DimensionMismatchError(f"transform has {self.steps} factors for a path of {K} steps")
        if self.node_factors is not None:
            if M.leaf is None:
                raise PredictabilityError("node-indexed transforms apply to tree paths only")
            a = np.array([
                self.node_factors[n][0 if self.node_factors[n].size == 1 else M.leaf >> (K - n)]
                for n in range(K)
            ])
        else:
            a = np.array([float(self.rule(k, M.values[:k])) for k in range(1, K + 1)])
        self._validate(a)
        return a


def apply_transform(M: MartingalePath, tr: PredictableTransform) -> MartingalePath:
    """N with dN_k = a_k dM_k; [<N, x*>] = sum a_k^2 <dM_k, x*>^2."""
    a = tr.factors_for(M)
    inc = M.increments * a[:, None]
    values = np.vstack([np.zeros((1, M.dim)), np.cumsum(inc, axis=0)])
    jumps = None if M.jump_steps is None else M.jumps * a[M.jump_steps - 1][:, None]
    return MartingalePath(
        M.times, values, "transformed", leaf=M.leaf, jump_steps=M.jump_steps, jump_sizes=jumps
    )


def transform_ensemble(ens: PathEnsemble, tr: PredictableTransform) -> PathEnsemble:
    paths = tuple(apply_transform(p, tr) for p in ens)
    return PathEnsemble(paths=paths, weights=ens.weights, exact=ens.exact, tree=ens.tree, leaves=ens.leaves)


class MartingaleCheck(BaseModel):
    exact: bool
    passed: bool
    max_abs_mean: float
    max_t_stat: float = 0.0
    groups: int


def _tree_check(ens: PathEnsemble, tol: float) -> MartingaleCheck:
    vals = ens.stacked()
    K = vals.shape[1] - 1
    inc = np.diff(vals, axis=1)
    leaves = ens.leaves
    w = ens.weights
    worst, groups = 0.0, 0
    scale = max(1.0, float(np.max(np.abs(inc)))) if inc.size else 1.0
    for n in range(K):
        nodes = leaves >> (K - n)
        mass = np.zeros(2**n)
        np.add.at(mass, nodes, w)
        first = np.zeros((2**n, inc.shape[2]))
        np.add.at(first, nodes, w[:, None] * inc[:, n, :])
        seen = mass > 0
        cond = first[seen] / mass[seen][:, None]
        groups += int(seen.sum())
        if cond.size:
            worst = max(worst, float(np.max(np.abs(cond))))
    return MartingaleCheck(exact=True, passed=worst <= tol * scale, max_abs_mean=worst, groups=groups)


def _empirical_check(ens: PathEnsemble, threshold: float) -> MartingaleCheck:
    d = ens[0].dim
    first = np.array([p.increments[0] for p in ens])
    up = np.zeros((len(ens), d))
    down = np.zeros((len(ens), d))
    for i, p in enumerate(ens):
        inc = p.increments
        if inc.shape[0] < 2:
            continue
        prev = inc[:-1, 0] > 0
        up[i] = inc[1:][prev].sum(axis=0)
        down[i] = inc[1:][~prev].sum(axis=0)
    worst_mean, worst_t = 0.0, 0.0
    for stat in (first, up, down):
        mean = stat.mean(axis=0)
        se = stat.std(axis=0, ddof=1) / np.sqrt(stat.shape[0])
        t = np.where(se > 0, np.abs(mean) / np.where(se > 0, se, 1.0), 0.0)
        worst_mean = max(worst_mean, float(np.max(np.abs(mean))))
        worst_t = max(worst_t, float(np.max(t)))
    return MartingaleCheck(
        exact=False, passed=worst_t <= threshold, max_abs_mean=worst_mean, max_t_stat=worst_t, groups=3 * d
    )


def check_martingale(ens: PathEnsemble, tol: float = 1e-12, threshold: float = 4.0) -> MartingaleCheck:
    """Conditional means of increments given the past.

    Exhaustive tree ensembles are checked node by node (exact); other ensembles pool each
    increment by the sign of the previous increment's first coordinate and test the
    pooled means with t-statistics.
    """
    if len(ens) == 0:
        raise ValueError("empty ensemble")
    if ens.exact and ens.leaves is not None:
        return _tree_check(ens, tol)
    if len(ens) < 2:
        raise ValueError("the empirical check needs at least two paths")
    return _empirical_check(ens, threshold)
