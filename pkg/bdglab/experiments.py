"""
Experiment harness.

Each experiment simulates an ensemble, computes both sides of a two-sided moment
inequality per path (E sup ||M||^p against E gamma([[M]])^p and its relatives), and
summarizes them into an ExperimentReport with paired ratio statistics and sub-ensemble
envelopes. Exhaustive tree ensembles give exact expectations (stderr 0 on the outer
level); sampled ensembles use replication-level standard errors.
"""

import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass
from functools import partial
from typing import Any, Callable, Dict, List, Literal, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .bilinear import SymBilinearForm
from .errors import ConfigError, PredictabilityError
from .estimators import envelope, mean_stderr, ratio_of_estimates, ratio_stats, within
from .gaussian import gamma_psd
from .martingales import (
    DyadicTree,
    MartingalePath,
    gaussian_jumps,
    gen_brownian_proxy,
    gen_compound_poisson,
    gen_gaussian_walk,
)
from .norms import NormSpec, lp, norm, p_star
from .parallel import map_replications, replication_rng, stream_id
from .quadvar import covariation_form, is_weakly_subordinate, square_function
from .settings import DEFAULT_MASTER_SEED
from .stochint import (
    ElementaryProcess,
    MarkedJumpProcess,
    integrand_form,
    integrate,
    make_driver_brownian,
    make_driver_from_path,
    poisson_integrate,
)

logger = logging.getLogger(__name__)

ExperimentKind = Literal[
    "bdg_ratio", "ito_ratio", "domination", "lowp_continuous", "independent_increments", "function_space"
]
FamilyName = Literal["paley_walsh", "gaussian_walk", "brownian_proxy", "compound_poisson"]

CSV_COLUMNS = [
    "experiment", "norm", "d", "p", "family", "replications",
    "lhs", "lhs_stderr", "rhs", "rhs_stderr", "ratio", "ratio_stderr",
    "env_min", "env_max", "seed", "wall_ms",
]


class FamilyParams(BaseModel):
    depth: int = Field(8, ge=1, le=20)
    exhaustive: bool = True
    scale: float = Field(1.0, ge=0.0)
    steps: int = Field(64, ge=1)
    steps_list: List[int] = Field(default_factory=lambda: [256, 1024])
    horizon: float = Field(1.0, gt=0.0)
    volatility: float = Field(1.0, ge=0.0)
    rate: float = Field(4.0, gt=0.0)
    jump_scale: float = Field(1.0, ge=0.0)
    grid: int = Field(16, ge=1)
    dims: List[int] = Field(default_factory=lambda: [1, 2, 4, 8])
    driver_dim: int = Field(1, ge=1)


class IntegrandBlock(BaseModel):
    interval: Tuple[float, float]
    matrix: List[List[float]]


class IntegrandSpec(BaseModel):
    """Phi for ito_ratio: a constant matrix, explicit blocks, zero, or a random predictable rule."""

    kind: Literal["constant", "blocks", "zero", "random_predictable"] = "constant"
    matrix: Optional[List[List[float]]] = None
    blocks: List[IntegrandBlock] = Field(default_factory=list)
    intervals: int = Field(4, ge=1)
    scale: float = 1.0


class PoissonBlock(BaseModel):
    mark: int = Field(..., ge=0)
    interval: Tuple[float, float]
    vector: List[float]


class PoissonSpec(BaseModel):
    """F for Poisson integrals: per-mark intensities and {mark, interval, vector} blocks."""

    rates: List[float] = Field(default_factory=lambda: [1.0])
    blocks: List[PoissonBlock] = Field(default_factory=list)

    @field_validator("rates")
    @classmethod
    def _positive(cls, v):
        if not v or any(r <= 0 for r in v):
            raise ValueError("mark intensities must be positive")
        return v


class TransformSpec(BaseModel):
    law: Literal["contraction", "sign"] = "contraction"
    factors: Optional[List[float]] = None


class ExperimentConfig(BaseModel):
    name: str
    experiment: ExperimentKind = "bdg_ratio"
    norm: NormSpec
    family: FamilyName = "paley_walsh"
    family_params: FamilyParams = Field(default_factory=FamilyParams)
    p_list: List[float] = Field(default_factory=lambda: [1.0, 2.0, 4.0])
    replications: int = Field(200, ge=1)
    mc_samples: int = Field(10_000, ge=2)
    master_seed: int = Field(DEFAULT_MASTER_SEED, ge=0)
    output: Optional[str] = None
    sub_ensembles: int = Field(10, ge=1)
    integrand: IntegrandSpec = Field(default_factory=IntegrandSpec)
    poisson: Optional[PoissonSpec] = None
    transform: TransformSpec = Field(default_factory=TransformSpec)
    search_budget: int = Field(1000, ge=1)
    ensemble_q: bool = False

    @field_validator("p_list")
    @classmethod
    def _positive_exponents(cls, v):
        if not v:
            raise ValueError("p_list is empty")
        if any(not (p > 0 and math.isfinite(p)) for p in v):
            raise ValueError("moment exponents must be finite and > 0")
        return v

    @model_validator(mode="after")
    def _small_p_needs_continuity(self):
        if any(p < 1 for p in self.p_list) and self.family != "brownian_proxy":
            raise ValueError("p < 1 is only allowed for the brownian_proxy family")
        return self

    @property
    def dim(self) -> int:
        return self.norm.dim

    def stream(self, part: str = "") -> int:
        return stream_id(f"{self.name}/{self.experiment}/{part}")


class RatioRow(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    p: float
    d: int
    norm: str
    family: str
    replications: int
    lhs: float
    lhs_stderr: float = 0.0
    rhs: float
    rhs_stderr: float = 0.0
    ratio: float
    ratio_stderr: float = 0.0
    env_min: float = math.nan
    env_max: float = math.nan
    terminal: float = math.nan
    terminal_stderr: float = 0.0
    doob_ok: Optional[bool] = None
    degenerate: bool = False
    exact: bool = False
    extra: Dict[str, Any] = Field(default_factory=dict)


class ExperimentReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    name: str
    experiment: str
    run_id: str
    seed: int
    wall_ms: float = 0.0
    config: Dict[str, Any] = Field(default_factory=dict)
    rows: List[RatioRow] = Field(default_factory=list)
    notes: Dict[str, Any] = Field(default_factory=dict)

    def row(self, p: float, **match) -> RatioRow:
        for r in self.rows:
            if r.p == p and all(getattr(r, k) == v or r.extra.get(k) == v for k, v in match.items()):
                return r
        raise KeyError(f"no row with p={p} {match}")

    def to_frame(self) -> pd.DataFrame:
        records = [
            {
                "experiment": self.experiment,
                "norm": r.norm,
                "d": r.d,
                "p": r.p,
                "family": r.family,
                "replications": r.replications,
                "lhs": r.lhs,
                "lhs_stderr": r.lhs_stderr,
                "rhs": r.rhs,
                "rhs_stderr": r.rhs_stderr,
                "ratio": r.ratio,
                "ratio_stderr": r.ratio_stderr,
                "env_min": r.env_min,
                "env_max": r.env_max,
                "seed": self.seed,
                "wall_ms": self.wall_ms,
            }
            for r in self.rows
        ]
        return pd.DataFrame.from_records(records, columns=CSV_COLUMNS)


def run_id_for(config: ExperimentConfig) -> str:
    blob = json.dumps(config.model_dump(mode="json"), sort_keys=True).encode("utf-8")
    return hashlib.sha1(blob).hexdigest()[:12]


@dataclass
class Records:
    """Per-path summaries; `weights` is set for exact (enumerated) ensembles."""

    sup: np.ndarray
    terminal: np.ndarray
    gamma: np.ndarray
    gamma_se: np.ndarray
    square: np.ndarray
    weights: Optional[np.ndarray] = None

    @property
    def exact(self) -> bool:
        return self.weights is not None

    @property
    def size(self) -> int:
        return self.sup.size

    @classmethod
    def from_rows(cls, rows: List[Tuple[float, ...]], weights=None) -> "Records":
        arr = np.asarray(rows, dtype=float).reshape(len(rows), 5)
        return cls(*(arr[:, i] for i in range(5)), weights=weights)


def path_record(
    path: MartingalePath,
    form: SymBilinearForm,
    spec: NormSpec,
    mc_samples: int,
    rng: np.random.Generator,
) -> Tuple[float, float, float, float, float]:
    """(sup ||M||, ||M_T||, gamma(form), its stderr, square function) for one path."""
    g = gamma_psd(form, spec, mc_samples, rng)
    return (
        path.sup_norm(spec),
        path.terminal_norm(spec),
        g.value,
        g.stderr,
        square_function(path, spec),
    )


def _side(values: np.ndarray, weights, inner_se: Optional[np.ndarray] = None) -> Tuple[float, float]:
    mean, se = mean_stderr(values, weights)
    if weights is not None and inner_se is not None:
        se = float(math.sqrt(np.sum((weights * inner_se) ** 2)))
    return mean, se


def summarize(
    rec: Records,
    p: float,
    rhs_kind: Literal["gamma", "square"] = "gamma",
    groups: int = 10,
    **row_fields,
) -> RatioRow:
    """Ratio row for exponent p from per-path records."""
    w = rec.weights
    a = rec.sup**p
    if rhs_kind == "gamma":
        b = rec.gamma**p
        safe = np.where(rec.gamma > 0, rec.gamma, 1.0)
        inner = np.where(rec.gamma > 0, p * safe ** (p - 1.0) * rec.gamma_se, 0.0)
    else:
        b = rec.square**p
        inner = None
    c = rec.terminal**p
    lhs, lhs_se = _side(a, w)
    rhs, rhs_se = _side(b, w, inner)
    term, term_se = _side(c, w)
    degenerate = rhs == 0.0
    if degenerate:
        ratio, ratio_se = math.nan, math.nan
        logger.warning("degenerate ensemble at p=%g: right-hand side is 0", p)
    elif w is not None:
        ratio = lhs / rhs
        ratio_se = ratio * rhs_se / rhs
    else:
        ratio, ratio_se = ratio_stats(a, b)
    env = envelope(a, b, groups, w)
    doob_ok = None
    if p > 1 and not degenerate:
        c_p = (p / (p - 1.0)) ** p
        slack = 4.0 * math.hypot(lhs_se, c_p * term_se) + 1e-12 * max(1.0, lhs)
        doob_ok = bool(lhs <= c_p * term + slack)
    return RatioRow(
        p=p,
        replications=rec.size,
        lhs=lhs,
        lhs_stderr=lhs_se,
        rhs=rhs,
        rhs_stderr=rhs_se,
        ratio=ratio,
        ratio_stderr=ratio_se,
        env_min=env[0],
        env_max=env[1],
        terminal=term,
        terminal_stderr=term_se,
        doob_ok=doob_ok,
        degenerate=degenerate,
        exact=rec.exact,
        **row_fields,
    )


# ---------------------------------------------------------------------------
# path simulation shared by the ratio experiments


def build_tree(config: ExperimentConfig, d: Optional[int] = None) -> DyadicTree:
    fp = config.family_params
    rng = replication_rng(config.master_seed, config.stream("tree"), 0)
    return DyadicTree.random(fp.depth, d or config.dim, fp.scale, rng)


def simulate_path(
    config: ExperimentConfig,
    rng: np.random.Generator,
    d: int,
    tree: Optional[DyadicTree] = None,
    leaf: Optional[int] = None,
    family: Optional[str] = None,
    **overrides,
) -> MartingalePath:
    """One path of the configured family (tree leaf given for exhaustive runs)."""
    fp = config.family_params.model_copy(update=overrides)
    family = family or config.family
    if family == "paley_walsh":
        if leaf is None:
            leaf = int(rng.integers(0, 2**tree.depth))
        inc = tree.increments(np.array([leaf]))[0]
        values = np.vstack([np.zeros((1, d)), np.cumsum(inc, axis=0)])
        return MartingalePath(np.arange(tree.depth + 1, dtype=float), values, "paley_walsh", leaf=leaf)
    if family == "gaussian_walk":
        return gen_gaussian_walk(fp.steps, d, fp.volatility, rng)[0]
    if family == "brownian_proxy":
        return gen_brownian_proxy(fp.steps, d, fp.horizon, rng, volatility=fp.volatility)[0]
    return gen_compound_poisson(fp.rate, fp.horizon, gaussian_jumps(d, fp.jump_scale), fp.grid, rng)[0]


def _bdg_replicate(index: int, rng: np.random.Generator, config: ExperimentConfig, spec: NormSpec,
                   tree: Optional[DyadicTree], exhaustive: bool, family: Optional[str], overrides: dict):
    path = simulate_path(config, rng, spec.dim, tree, index if exhaustive else None, family, **overrides)
    return path_record(path, covariation_form(path), spec, config.mc_samples, rng)


def collect_records(
    config: ExperimentConfig,
    workers: Optional[int] = None,
    spec: Optional[NormSpec] = None,
    family: Optional[str] = None,
    stream: str = "paths",
    **overrides,
) -> Records:
    """Per-path records for the configured family; exhaustive trees enumerate every leaf."""
    spec = spec or config.norm
    family = family or config.family
    tree, exhaustive = None, False
    if family == "paley_walsh":
        fp = config.family_params
        tree = build_tree(config, spec.dim)
        exhaustive = fp.exhaustive
        if exhaustive and fp.depth > 14:
            raise ConfigError(f"exhaustive depth {fp.depth} exceeds 14")
    count = 2**tree.depth if exhaustive else config.replications
    fn = partial(_bdg_replicate, config=config, spec=spec, tree=tree, exhaustive=exhaustive,
                 family=family, overrides=overrides)
    rows = map_replications(fn, count, config.master_seed, config.stream(stream), workers)
    weights = np.full(count, 1.0 / count) if exhaustive else None
    return Records.from_rows(rows, weights)


def _report(config: ExperimentConfig, rows: List[RatioRow], started: float, **notes) -> ExperimentReport:
    return ExperimentReport(
        name=config.name,
        experiment=config.experiment,
        run_id=run_id_for(config),
        seed=config.master_seed,
        wall_ms=(time.perf_counter() - started) * 1000.0,
        config=config.model_dump(mode="json"),
        rows=rows,
        notes=notes,
    )


def _row_fields(config: ExperimentConfig, spec: Optional[NormSpec] = None, family: Optional[str] = None) -> dict:
    spec = spec or config.norm
    return {"d": spec.dim, "norm": spec.label, "family": family or config.family}


# ---------------------------------------------------------------------------
# ratio experiments


def bdg_ratio(config: ExperimentConfig, workers: Optional[int] = None) -> ExperimentReport:
    """E sup ||M||^p against E gamma([[M]]_T)^p for every p in the config."""
    started = time.perf_counter()
    rec = collect_records(config, workers)
    rows = []
    for p in config.p_list:
        row = summarize(rec, p, groups=config.sub_ensembles, **_row_fields(config))
        if row.rhs > 0:
            row.extra["terminal_ratio"] = row.terminal / row.rhs
        rows.append(row)
    logger.info("bdg_ratio %s: %d paths, %d exponents", config.name, rec.size, len(rows))
    return _report(config, rows, started)


def function_space_ratio(config: ExperimentConfig, workers: Optional[int] = None) -> ExperimentReport:
    """E sup ||M||^p against the square-function side E ||(sum |dM|^2)^(1/2)||^p."""
    if any(p < 1 for p in config.p_list):
        raise ConfigError("the square-function comparison is run for p >= 1")
    started = time.perf_counter()
    rec = collect_records(config, workers)
    rows = []
    for p in config.p_list:
        row = summarize(rec, p, rhs_kind="square", groups=config.sub_ensembles, **_row_fields(config))
        g_mean, _ = mean_stderr(rec.gamma**p, rec.weights)
        row.extra["gamma_rhs"] = g_mean
        row.extra["gamma_over_square"] = g_mean / row.rhs if row.rhs > 0 else math.nan
        rows.append(row)
    return _report(config, rows, started)


def build_integrand(config: ExperimentConfig, driver_times: np.ndarray) -> ElementaryProcess:
    """Phi from the config; breakpoints of random predictable integrands sit on the driver grid."""
    spec = config.integrand
    d, k = config.dim, config.family_params.driver_dim
    horizon = float(driver_times[-1])
    if spec.kind == "zero":
        return ElementaryProcess.zero(d, k, horizon)
    if spec.kind == "constant":
        m = np.asarray(spec.matrix if spec.matrix is not None else np.ones((d, k)), dtype=float)
        if m.shape != (d, k):
            raise ConfigError(f"integrand matrix has shape {m.shape}, expected {(d, k)}")
        return ElementaryProcess.constant(spec.scale * m, horizon)
    if spec.kind == "blocks":
        if not spec.blocks:
            raise ConfigError("blocks integrand without blocks")
        ends = sorted({0.0} | {float(e) for b in spec.blocks for e in b.interval})
        grid = np.array(ends)
        values = np.zeros((grid.size - 1, d, k))
        for b in spec.blocks:
            m = np.asarray(b.matrix, dtype=float)
            if m.shape != (d, k):
                raise ConfigError(f"block matrix has shape {m.shape}, expected {(d, k)}")
            lo, hi = np.searchsorted(grid, b.interval[0]), np.searchsorted(grid, b.interval[1])
            values[lo:hi] += spec.scale * m
        return ElementaryProcess(breakpoints=grid, values=values)
    # random_predictable: Phi_j = scale * (1 + tanh(<M~_{t_j}, u>)) * B_j
    rng = replication_rng(config.master_seed, config.stream("integrand"), 0)
    K = driver_times.size - 1
    n = min(spec.intervals, K)
    idx = np.unique(np.linspace(0, K, n + 1).round().astype(int))
    B = rng.standard_normal((idx.size - 1, d, k))
    u = rng.standard_normal(k)
    scale = spec.scale

    def rule(j, history):
        return scale * (1.0 + math.tanh(float(history[-1] @ u))) * B[j]

    return ElementaryProcess(breakpoints=driver_times[idx], rule=rule, shape=(d, k))


def build_poisson(config: ExperimentConfig, rng: np.random.Generator) -> MarkedJumpProcess:
    ps = config.poisson or PoissonSpec(
        rates=[config.family_params.rate],
        blocks=[PoissonBlock(mark=0, interval=(0.0, config.family_params.horizon), vector=[1.0] * config.dim)],
    )
    T = config.family_params.horizon
    ends = sorted({0.0, T} | {float(e) for b in ps.blocks for e in b.interval})
    grid = np.array(ends)
    F = np.zeros((len(ps.rates), grid.size - 1, config.dim))
    for b in ps.blocks:
        if b.mark >= len(ps.rates):
            raise ConfigError(f"mark {b.mark} has no intensity")
        if len(b.vector) != config.dim:
            raise ConfigError(f"jump vector of length {len(b.vector)} in dim {config.dim}")
        lo, hi = np.searchsorted(grid, b.interval[0]), np.searchsorted(grid, b.interval[1])
        F[b.mark, lo:hi] += np.asarray(b.vector, dtype=float)
    return MarkedJumpProcess.simulate(ps.rates, T, F, grid, rng)


def ito_path(index: int, rng: np.random.Generator, config: ExperimentConfig,
             tree: Optional[DyadicTree] = None, exhaustive: bool = False) -> Tuple[MartingalePath, SymBilinearForm]:
    """One integral path and its form: Phi . M~ with sum Phi q Phi^T d[M~], or the Poisson analogue."""
    fp = config.family_params
    if config.family == "compound_poisson":
        return poisson_integrate(build_poisson(config, rng), fp.horizon, fp.grid)
    if config.family == "paley_walsh":
        tree_path = simulate_path(config, rng, fp.driver_dim, tree, index if exhaustive else None)
        driver = make_driver_from_path(tree_path, ensemble_q=config.ensemble_q)
    else:
        driver = make_driver_brownian(fp.driver_dim, fp.steps, fp.horizon, rng, ensemble_q=config.ensemble_q)
    phi = build_integrand(config, driver.times)
    return integrate(phi, driver), integrand_form(phi, driver)


def _ito_replicate(index: int, rng: np.random.Generator, config: ExperimentConfig,
                   tree: Optional[DyadicTree], exhaustive: bool):
    path, form = ito_path(index, rng, config, tree, exhaustive)
    return path_record(path, form, config.norm, config.mc_samples, rng)


def ito_ratio(config: ExperimentConfig, workers: Optional[int] = None) -> ExperimentReport:
    """E sup ||Phi . M~||^p against E gamma(sum Phi q Phi^T d[M~])^p (or the Poisson analogue)."""
    started = time.perf_counter()
    fp = config.family_params
    tree, exhaustive = None, False
    if config.family == "paley_walsh":
        tree = build_tree(config, fp.driver_dim)
        exhaustive = fp.exhaustive
    count = 2**fp.depth if exhaustive else config.replications
    fn = partial(_ito_replicate, config=config, tree=tree, exhaustive=exhaustive)
    rows_raw = map_replications(fn, count, config.master_seed, config.stream("ito"), workers)
    rec = Records.from_rows(rows_raw, np.full(count, 1.0 / count) if exhaustive else None)
    rows = [summarize(rec, p, groups=config.sub_ensembles, **_row_fields(config)) for p in config.p_list]
    return _report(config, rows, started, integrand=config.integrand.kind)


def simulate_ensemble(config: ExperimentConfig, count: Optional[int] = None) -> List[MartingalePath]:
    """Sample paths of the configured family, or integral paths for ito_ratio configs."""
    count = config.replications if count is None else count
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    if config.experiment == "ito_ratio":
        fp = config.family_params
        tree = build_tree(config, fp.driver_dim) if config.family == "paley_walsh" else None
        return [
            ito_path(i, replication_rng(config.master_seed, config.stream("ito"), i), config, tree)[0]
            for i in range(count)
        ]
    tree = build_tree(config) if config.family == "paley_walsh" else None
    return [
        simulate_path(config, replication_rng(config.master_seed, config.stream("paths"), i), config.dim, tree)
        for i in range(count)
    ]


def lowp_continuous(config: ExperimentConfig, workers: Optional[int] = None) -> ExperimentReport:
    """Small-p ratios for the Brownian proxy across grid sizes, plus the time-scaling check."""
    if config.family != "brownian_proxy":
        raise ConfigError("lowp_continuous runs on the brownian_proxy family only")
    if not config.family_params.steps_list:
        raise ConfigError("lowp_continuous needs at least one grid size in steps_list")
    started = time.perf_counter()
    fp = config.family_params
    rows: List[RatioRow] = []
    base: Optional[Records] = None
    for K in fp.steps_list:
        rec = collect_records(config, workers, stream=f"K{K}", steps=K)
        if base is None:
            base = rec
        for p in config.p_list:
            row = summarize(rec, p, groups=config.sub_ensembles, **_row_fields(config))
            row.extra["steps"] = K
            rows.append(row)

    notes: Dict[str, Any] = {"stable": {}, "scaling": {}}
    for p in config.p_list:
        cells = [r for r in rows if r.p == p]
        stable = True
        for a, b in zip(cells, cells[1:]):
            if a.degenerate or b.degenerate:
                continue
            stable &= abs(a.ratio - b.ratio) <= 4.0 * math.hypot(a.ratio_stderr, b.ratio_stderr)
        notes["stable"][str(p)] = bool(stable)

    # horizon x4 on independent streams; in law every path scales by 2
    K0 = fp.steps_list[0]
    wide = collect_records(config, workers, stream=f"K{K0}/T4", steps=K0, horizon=4.0 * fp.horizon)
    for p in config.p_list:
        expected = 2.0**p
        cell: Dict[str, Any] = {"expected": expected}
        passed = True
        for side, attr in (("lhs", "sup"), ("rhs", "gamma")):
            r, se = ratio_of_estimates(
                *mean_stderr(getattr(wide, attr) ** p), *mean_stderr(getattr(base, attr) ** p)
            )
            cell[side], cell[f"{side}_stderr"] = r, se
            passed &= math.isfinite(r) and within(r, expected, se)
        cell["passed"] = bool(passed)
        notes["scaling"][str(p)] = cell
    return _report(config, rows, started, **notes)


def independent_increments_ratio(config: ExperimentConfig, workers: Optional[int] = None) -> ExperimentReport:
    """Ratios for Gaussian walks under lp1, lp_inf and lp2 as d grows, with a tree contrast column."""
    if config.family != "gaussian_walk":
        raise ConfigError("independent_increments runs on the gaussian_walk family only")
    started = time.perf_counter()
    fp = config.family_params
    rows: List[RatioRow] = []
    flatness: Dict[str, Dict[str, float]] = {}
    for exponent in (1.0, "inf", 2.0):
        for d in fp.dims:
            spec = lp(exponent, d)
            rec = collect_records(config, workers, spec=spec, stream=f"{spec.label}/{d}")
            contrast_cfg = config.model_copy(
                update={"family_params": fp.model_copy(update={"exhaustive": False, "depth": min(fp.steps, 12)})}
            )
            tree_rec = collect_records(
                contrast_cfg, workers, spec=spec, family="paley_walsh", stream=f"pw/{spec.label}/{d}"
            )
            for p in config.p_list:
                row = summarize(rec, p, groups=config.sub_ensembles, **_row_fields(config, spec))
                tree_row = summarize(tree_rec, p, groups=config.sub_ensembles, **_row_fields(config, spec))
                row.extra["paley_walsh_ratio"] = tree_row.ratio
                row.extra["paley_walsh_ratio_stderr"] = tree_row.ratio_stderr
                rows.append(row)
        label = lp(exponent, 1).label
        for p in config.p_list:
            ratios = [r.ratio for r in rows if r.norm == label and r.p == p and not r.degenerate]
            if ratios:
                flatness.setdefault(label, {})[str(p)] = max(ratios) / min(ratios)
    return _report(config, rows, started, flatness=flatness)


# ---------------------------------------------------------------------------
# domination


def _node_factor_matrix(table: List[np.ndarray], leaves: np.ndarray, depth: int) -> np.ndarray:
    """(n_leaves, depth) factors: step n+1 uses the entry of the node after n steps."""
    return np.stack([table[n][leaves >> (depth - n)] for n in range(depth)], axis=1)


def _moment_of_sup(inc: np.ndarray, a: np.ndarray, spec: NormSpec, p: float, w: np.ndarray) -> Tuple[float, float]:
    vals = np.cumsum(inc * a[:, :, None], axis=1)
    n = np.asarray(norm(spec, vals))
    sup = np.maximum(n.max(axis=1), 0.0)
    return float(np.dot(w, sup**p)), float(np.dot(w, n[:, -1] ** p))


def _random_rule_factors(rng: np.random.Generator, values: np.ndarray, law: str) -> np.ndarray:
    """Predictable factors a_k = f(M_{k-1}, dM_{k-1}) for every path at once."""
    n, K1, d = values.shape
    u, v = rng.standard_normal(d), rng.standard_normal(d)
    c0, c1, c2 = rng.standard_normal(3) * np.array([1.0, 2.0, 2.0])
    prev = values[:, :-1, :]
    prev_inc = np.concatenate([np.zeros((n, 1, d)), np.diff(prev, axis=1)], axis=1)
    score = c0 + c1 * (prev @ u) + c2 * (prev_inc @ v)
    if law == "sign":
        return np.where(score >= 0, 1.0, -1.0)
    return np.tanh(score)


def domination_check(config: ExperimentConfig, workers: Optional[int] = None) -> ExperimentReport:
    """Worst found E sup ||N||^p / E sup ||M||^p over predictable contractions N of M.

    Tree families search node-sign tables by coordinate ascent with restarts; other families
    evaluate random predictable rules on one fixed ensemble.
    """
    started = time.perf_counter()
    spec, fp = config.norm, config.family_params
    search_rng = replication_rng(config.master_seed, config.stream("search"), 0)
    if config.family == "paley_walsh":
        tree = build_tree(config)
        if fp.exhaustive:
            if fp.depth > 14:
                raise ConfigError(f"exhaustive depth {fp.depth} exceeds 14")
            leaves = np.arange(2**fp.depth, dtype=np.int64)
        else:
            leaves = search_rng.integers(0, 2**fp.depth, size=config.replications, dtype=np.int64)
        inc = tree.increments(leaves)
        w = np.full(leaves.size, 1.0 / leaves.size)
    else:
        if config.family == "compound_poisson":
            raise ConfigError("domination needs a common grid; use a tree or walk family")
        rec_paths = [
            simulate_path(config, replication_rng(config.master_seed, config.stream("paths"), i), spec.dim)
            for i in range(config.replications)
        ]
        inc = np.stack([p.increments for p in rec_paths])
        leaves, tree = None, None
        w = np.full(inc.shape[0], 1.0 / inc.shape[0])
    exact = config.family == "paley_walsh" and fp.exhaustive
    K = inc.shape[1]
    values = np.concatenate([np.zeros((inc.shape[0], 1, spec.dim)), np.cumsum(inc, axis=1)], axis=1)
    ones = np.ones((inc.shape[0], K))

    rows = []
    for p in config.p_list:
        base_sup, base_term = _moment_of_sup(inc, ones, spec, p, w)
        zero_sup, _ = _moment_of_sup(inc, np.zeros_like(ones), spec, p, w)
        evaluations = 0
        best_sup, best_a, best_term_ratio = base_sup, ones, 1.0

        def consider(a: np.ndarray):
            nonlocal evaluations, best_sup, best_a, best_term_ratio
            if np.any(np.abs(a) > 1.0 + 1e-12):
                raise PredictabilityError("non-contractive transform factor")
            evaluations += 1
            s, t = _moment_of_sup(inc, a, spec, p, w)
            if base_term > 0:
                best_term_ratio = max(best_term_ratio, (t / base_term) ** (1.0 / p))
            if s > best_sup:
                best_sup, best_a = s, a
            return s

        if config.transform.factors is not None:
            f = np.asarray(config.transform.factors, dtype=float)
            if f.size != K:
                raise ConfigError(f"{f.size} transform factors for {K} steps")
            consider(np.broadcast_to(f, ones.shape).copy())
        elif tree is not None:
            while evaluations < config.search_budget:
                table = [search_rng.choice((-1.0, 1.0), size=2**n) for n in range(K)]
                current = consider(_node_factor_matrix(table, leaves, K))
                improved = True
                while improved and evaluations < config.search_budget:
                    improved = False
                    for n in range(K):
                        for i in range(2**n):
                            if evaluations >= config.search_budget:
                                break
                            table[n][i] *= -1.0
                            val = consider(_node_factor_matrix(table, leaves, K))
                            if val > current:
                                current, improved = val, True
                            else:
                                table[n][i] *= -1.0
        else:
            while evaluations < config.search_budget:
                consider(_random_rule_factors(search_rng, values, config.transform.law))

        # the worst transform still satisfies the domination hypothesis step by step
        n_check = min(inc.shape[0], 512)
        times = np.arange(K + 1, dtype=float)
        subordinate = all(
            is_weakly_subordinate(
                MartingalePath(times, np.vstack([np.zeros((1, spec.dim)), np.cumsum(inc[i] * best_a[i][:, None], axis=0)]),
                               "transformed"),
                MartingalePath(times, values[i], "transformed"),
            )
            for i in range(n_check)
        )
        ratio = best_sup / base_sup if base_sup > 0 else math.nan
        row = RatioRow(
            p=p,
            replications=inc.shape[0],
            lhs=best_sup,
            rhs=base_sup,
            ratio=ratio,
            terminal=base_term,
            degenerate=base_sup == 0.0,
            exact=exact,
            extra={
                "evaluations": evaluations,
                "identity_ratio": 1.0 if base_sup > 0 else math.nan,
                "zero_ratio": zero_sup / base_sup if base_sup > 0 else math.nan,
                "weakly_subordinate": subordinate,
                "terminal_ratio": best_term_ratio,
                "terminal_bound": p_star(p) - 1.0 if p > 1 else math.nan,
            },
            **_row_fields(config),
        )
        if not exact and base_sup > 0:
            a_sup = np.max(np.asarray(norm(spec, np.cumsum(inc * best_a[:, :, None], axis=1))), axis=1) ** p
            b_sup = np.max(np.asarray(norm(spec, values)), axis=1) ** p
            row.ratio, row.ratio_stderr = ratio_stats(a_sup, b_sup)
            row.lhs, row.lhs_stderr = mean_stderr(a_sup)
            row.rhs, row.rhs_stderr = mean_stderr(b_sup)
        rows.append(row)
        logger.info("domination p=%g: worst ratio %.6g after %d transforms", p, ratio, evaluations)
    return _report(config, rows, started)


# ---------------------------------------------------------------------------
# UMD probe


class UmdProbeResult(BaseModel):
    value: float
    p: float
    depth: int
    dim: int
    norm: str
    evaluations: int
    budget_exhausted: bool
    hilbert_constant: float
    signs: List[List[float]] = Field(default_factory=list, repr=False)
    vectors: List[List[List[float]]] = Field(default_factory=list, repr=False)


class _ProbeState:
    """Terminal values of M and of the signed martingale on every leaf, updated by subtree."""

    def __init__(self, spec: NormSpec, p: float, vectors: List[np.ndarray], signs: List[np.ndarray]):
        self.spec, self.p = spec, p
        self.vectors, self.signs = vectors, signs
        self.N = len(vectors)
        leaves = np.arange(2**self.N, dtype=np.int64)
        self.eps = 1.0 - 2.0 * ((leaves[:, None] >> np.arange(self.N - 1, -1, -1)[None, :]) & 1)
        tree = DyadicTree(tuple(vectors))
        inc = tree.increments(leaves)
        a = _node_factor_matrix(signs, leaves, self.N)
        self.M = inc.sum(axis=1)
        self.S = (inc * a[:, :, None]).sum(axis=1)
        self.m_pow = np.asarray(norm(spec, self.M)) ** p
        self.s_pow = np.asarray(norm(spec, self.S)) ** p

    def value(self) -> float:
        den = self.m_pow.sum()
        return (self.s_pow.sum() / den) ** (1.0 / self.p) if den > 0 else 0.0

    def _span(self, n: int, i: int) -> slice:
        width = 2 ** (self.N - n)
        return slice(i * width, (i + 1) * width)

    def flip(self, n: int, i: int) -> None:
        sl = self._span(n, i)
        step = self.eps[sl, n][:, None] * self.vectors[n][i]
        self.S[sl] -= 2.0 * self.signs[n][i] * step
        self.signs[n][i] *= -1.0
        self.s_pow[sl] = np.asarray(norm(self.spec, self.S[sl])) ** self.p

    def move(self, n: int, i: int, delta: np.ndarray) -> None:
        sl = self._span(n, i)
        step = self.eps[sl, n][:, None] * delta
        self.M[sl] += step
        self.S[sl] += self.signs[n][i] * step
        self.vectors[n][i] = self.vectors[n][i] + delta
        self.m_pow[sl] = np.asarray(norm(self.spec, self.M[sl])) ** self.p
        self.s_pow[sl] = np.asarray(norm(self.spec, self.S[sl])) ** self.p


def umd_probe(
    p: float,
    depth: int,
    d: int,
    spec: NormSpec,
    budget: int = 2000,
    rng: Optional[np.random.Generator] = None,
    warm_start: Optional[UmdProbeResult] = None,
) -> UmdProbeResult:
    """Lower bound for the UMD constant from exhaustive trees.

    Alternates coordinate ascent over node signs with random node-vector moves and returns
    the best (E ||sum eps_n d_n||^p / E ||sum d_n||^p)^(1/p) found. The identity signs give 1,
    so the bound is never below 1. A warm start from a smaller dimension is zero-padded,
    which keeps its value for lp norms.
    """
    if depth > 14:
        raise ConfigError(f"exhaustive depth {depth} exceeds 14")
    if spec.dim != d:
        raise ConfigError(f"norm on dim {spec.dim} for a probe in dim {d}")
    if not p >= 1:
        raise ConfigError("the UMD probe takes p >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)

    if warm_start is not None and warm_start.depth == depth and warm_start.dim <= d:
        pad = d - warm_start.dim
        vectors = [np.pad(np.asarray(v, dtype=float), ((0, 0), (0, pad))) for v in warm_start.vectors]
        signs = [np.asarray(s, dtype=float).copy() for s in warm_start.signs]
    else:
        vectors = [rng.standard_normal((2**n, d)) for n in range(depth)]
        signs = [rng.choice((-1.0, 1.0), size=2**n) for n in range(depth)]

    state = _ProbeState(spec, p, vectors, signs)
    best = state.value()
    best_signs = [s.copy() for s in state.signs]
    best_vectors = [v.copy() for v in state.vectors]
    evaluations, step = 1, 0.5
    converged = False
    while evaluations < budget:
        improved = False
        for n in range(depth):
            for i in range(2**n):
                if evaluations >= budget:
                    break
                state.flip(n, i)
                evaluations += 1
                val = state.value()
                if val > best + 1e-14:
                    best, improved = val, True
                else:
                    state.flip(n, i)
        for _ in range(min(64, budget - evaluations)):
            n = int(rng.integers(0, depth))
            i = int(rng.integers(0, 2**n))
            delta = step * rng.standard_normal(d)
            state.move(n, i, delta)
            evaluations += 1
            val = state.value()
            if val > best + 1e-14:
                best, improved = val, True
            else:
                state.move(n, i, -delta)
        if improved:
            best_signs = [s.copy() for s in state.signs]
            best_vectors = [v.copy() for v in state.vectors]
        else:
            step *= 0.5
            if step < 1e-6:
                converged = True
                break

    # the identity pattern is always admissible
    if best < 1.0:
        best = 1.0
        best_signs = [np.ones(2**n) for n in range(depth)]
    logger.info("umd probe %s d=%d p=%g depth=%d: %.6f after %d evaluations", spec.label, d, p, depth, best, evaluations)
    return UmdProbeResult(
        value=best,
        p=p,
        depth=depth,
        dim=d,
        norm=spec.label,
        evaluations=evaluations,
        budget_exhausted=not converged,
        hilbert_constant=p_star(p) - 1.0,
        signs=[s.tolist() for s in best_signs],
        vectors=[v.tolist() for v in best_vectors],
    )


# ---------------------------------------------------------------------------


EXPERIMENTS: Dict[str, Callable[[ExperimentConfig, Optional[int]], ExperimentReport]] = {
    "bdg_ratio": bdg_ratio,
    "ito_ratio": ito_ratio,
    "domination": domination_check,
    "lowp_continuous": lowp_continuous,
    "independent_increments": independent_increments_ratio,
    "function_space": function_space_ratio,
}


def parse_config(data: Dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid experiment config: {e}") from e


def run_experiment(config: ExperimentConfig, workers: Optional[int] = None) -> ExperimentReport:
    return EXPERIMENTS[config.experiment](config, workers)
