"""
Property suite behind `cli.py verify`.

Each check is registered as a CheckMeta and returns a CheckResult. `quick` shrinks sample
sizes and ensemble counts so the whole suite runs in seconds; the full sizes are the
acceptance sizes.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from .bilinear import SymBilinearForm, psd_gap, spectral_split
from .errors import BdgLabError, ConfigError
from .estimators import combine_stderr, mean_stderr, within
from .experiments import (
    ExperimentConfig,
    FamilyParams,
    bdg_ratio,
    collect_records,
    domination_check,
    lowp_continuous,
)
from .gaussian import GammaEstimate, calibrate_square_bound, gamma_general, gamma_psd, type2_defect
from .martingales import (
    MartingalePath,
    PredictableTransform,
    check_martingale,
    gaussian_jumps,
    gen_brownian_proxy,
    gen_compound_poisson,
    gen_gaussian_walk,
    gen_paley_walsh,
    transform_ensemble,
)
from .norms import INF, lp
from .parallel import replication_rng, stream_id
from .quadvar import covariation_form, covariation_process
from .settings import resolve_workers
from .stochint import (
    ElementaryProcess,
    MarkedJumpProcess,
    integrand_form,
    integrate,
    make_driver_brownian,
    poisson_integrate,
)

logger = logging.getLogger(__name__)

EXACT_TOL = 1e-10
SQUARE_BOUND_SAFETY = 2.0


class CheckResult(BaseModel):
    id: str
    title: str
    passed: bool
    detail: str = ""
    metrics: Dict[str, Any] = Field(default_factory=dict)
    wall_ms: float = 0.0


@dataclass
class CheckContext:
    seed: int
    workers: int = 1
    quick: bool = False

    def rng(self, name: str, index: int = 0) -> np.random.Generator:
        return replication_rng(self.seed, stream_id(f"check/{name}"), index)

    def size(self, full: int, quick: int) -> int:
        return quick if self.quick else full


CheckFn = Callable[[CheckContext], Tuple[bool, str, Dict[str, Any]]]


@dataclass
class CheckMeta:
    id: str
    title: str
    fn: CheckFn
    tags: List[str] = field(default_factory=list)


def random_psd(d: int, rng: np.random.Generator, rank: Optional[int] = None) -> SymBilinearForm:
    A = rng.standard_normal((d, rank or d))
    return SymBilinearForm(A @ A.T)


def random_symmetric(d: int, rng: np.random.Generator) -> SymBilinearForm:
    A = rng.standard_normal((d, d))
    return SymBilinearForm(0.5 * (A + A.T))


def _slack(*estimates: GammaEstimate, scale: float = 1.0) -> float:
    return 4.0 * combine_stderr(*(e.stderr for e in estimates)) + EXACT_TOL * max(1.0, scale)


# ---------------------------------------------------------------------------


def check_gamma_calculus(ctx: CheckContext):
    forms = ctx.size(500, 40)
    samples = ctx.size(100_000, 4_000)
    failures: Dict[str, int] = {}

    def fail(name: str) -> None:
        failures[name] = failures.get(name, 0) + 1

    for branch, exponent in (("lp2", 2.0), ("lpinf", INF)):
        for i in range(forms):
            rng = ctx.rng(f"gamma/{branch}", i)
            d = int(rng.integers(2, 5))
            spec = lp(exponent, d)
            W, A = random_psd(d, rng), random_psd(d, rng)
            V = W + A
            S, T = random_symmetric(d, rng), random_symmetric(d, rng)
            base = int(rng.integers(2**32))

            def g(F, stream, mask=None):
                return gamma_psd(F, spec, samples, np.random.default_rng([base, stream]), mask=mask)

            def gg(F, stream):
                return gamma_general(F, spec, samples, np.random.default_rng([base, stream]))

            # restriction: same draws, coordinates zeroed
            k = int(rng.integers(1, d))
            mask = np.arange(d) < k
            full, restricted = g(V, 1), g(V, 1, mask)
            if restricted.value > full.value + EXACT_TOL * max(1.0, full.value):
                fail("restriction")

            gW, gA, gV = g(W, 2), g(A, 3), g(V, 4)
            if gV.value > gW.value + gA.value + _slack(gV, gW, gA, scale=gV.value):
                fail("triangle")
            if gW.value > gV.value + _slack(gW, gV, scale=gV.value):
                fail("monotonicity")
            if branch == "lp2" and abs(gV.value**2 - gW.value**2 - gA.value**2) > EXACT_TOL * max(1.0, gV.value**2):
                fail("pythagoras")

            gS, gT, gD = gg(S, 5), gg(T, 6), gg(S - T, 7)
            if gS.value - gT.value > gD.value + _slack(gS, gT, gD, scale=gS.value):
                fail("reverse_triangle")

            alpha = float(rng.uniform(0.1, 3.0))
            gScaled = gg(S.scaled(alpha), 5)
            if not within(gScaled.value, math.sqrt(alpha) * gS.value,
                          combine_stderr(gScaled.stderr, math.sqrt(alpha) * gS.stderr), floor=EXACT_TOL):
                fail("scaling")
            gNeg = gg(-S, 9)
            if not within(gNeg.value, gS.value, combine_stderr(gNeg.stderr, gS.stderr), floor=EXACT_TOL):
                fail("symmetry")

            split = spectral_split(S)
            R = random_psd(d, rng)
            gP, gQ = g(split.plus + R, 10), g(split.minus + R, 11)
            if gP.value + gQ.value < gS.value - _slack(gP, gQ, gS, scale=gS.value):
                fail("decomposition")

    passed = not failures
    detail = f"{forms} forms per branch" if passed else f"violations: {failures}"
    return passed, detail, {"forms": forms, "samples": samples, "violations": failures}


def check_closed_form_anchor(ctx: CheckContext):
    samples = ctx.size(1_000_000, 100_000)
    est = gamma_psd(SymBilinearForm.identity(2), lp(INF, 2), samples, ctx.rng("anchor"), workers=ctx.workers)
    target = math.sqrt(1.0 + 2.0 / math.pi)
    mc_ok = within(est.value, target, est.stderr)
    exact_ok = all(
        abs(gamma_psd(SymBilinearForm.identity(d), lp(2, d)).value - math.sqrt(d)) <= 1e-12 * math.sqrt(d)
        for d in range(1, 9)
    )
    detail = f"gamma(I2, lpinf) = {est.value:.5f} +- {est.stderr:.1e} (target {target:.5f})"
    return mc_ok and exact_ok, detail, {"value": est.value, "stderr": est.stderr, "target": target}


def _oracle_config(name: str, d: int, depth: int, replications: int, exhaustive: bool) -> ExperimentConfig:
    return ExperimentConfig(
        name=name,
        norm=lp(2, d),
        family="paley_walsh",
        family_params=FamilyParams(depth=depth, exhaustive=exhaustive),
        p_list=[1.0, 2.0, 4.0],
        replications=replications,
    )


def check_oracle_equivalence(ctx: CheckContext):
    depth = ctx.size(10, 6)
    reps = ctx.size(4000, 600)
    misses = []
    for d in (1, 2, 4):
        exact = collect_records(_oracle_config(f"oracle-d{d}", d, depth, reps, True), ctx.workers)
        sampled = collect_records(_oracle_config(f"oracle-d{d}", d, depth, reps, False), ctx.workers)
        for p in (1.0, 2.0, 4.0):
            for label, e_vals, s_vals in (("sup", exact.sup, sampled.sup), ("gamma", exact.gamma, sampled.gamma)):
                target, _ = mean_stderr(e_vals**p, exact.weights)
                est, se = mean_stderr(s_vals**p)
                if not within(est, target, se):
                    misses.append(f"d={d} p={p:g} {label}: {est:.4g} vs {target:.4g} (se {se:.2g})")
    return not misses, "; ".join(misses) or f"depth {depth}, {reps} sampled leaves", {"misses": misses}


def check_hilbert_identities(ctx: CheckContext):
    depth = ctx.size(10, 6)
    d = 3
    rng = ctx.rng("hilbert")
    ens = gen_paley_walsh(depth, d, rng=rng, exhaustive=True)
    spec = lp(2, d)
    terminal = ens.expectation([p.terminal_norm(spec) ** 2 for p in ens])
    trace = ens.expectation([float(np.trace(covariation_form(p).matrix)) for p in ens])
    ok = abs(terminal - trace) <= 1e-12 * max(1.0, trace)
    worst = 0.0
    for _ in range(ctx.size(20, 5)):
        signs = [rng.choice((-1.0, 1.0), size=2**n) for n in range(depth)]
        signed = transform_ensemble(ens, PredictableTransform.on_tree(signs, kind="sign"))
        value = signed.expectation([p.terminal_norm(spec) ** 2 for p in signed])
        worst = max(worst, abs(value - terminal) / max(1.0, terminal))
    ok &= worst <= 1e-12
    return ok, f"E|M_T|^2 = {terminal:.12g}, E tr[[M]] = {trace:.12g}, sign drift {worst:.1e}", {
        "terminal": terminal, "trace": trace, "sign_drift": worst,
    }


def check_bdg_envelope(ctx: CheckContext):
    reps = ctx.size(200, 60)
    dims = (1, 2, 4, 8) if not ctx.quick else (1, 4)
    cells = {}
    ok = True
    for d in dims:
        cfg = ExperimentConfig(
            name=f"envelope-d{d}",
            norm=lp(2, d),
            family="gaussian_walk",
            family_params=FamilyParams(steps=32),
            p_list=[1.0, 2.0, 4.0],
            replications=reps,
        )
        report = bdg_ratio(cfg, ctx.workers)
        for row in report.rows:
            cells[f"d={d},p={row.p:g}"] = row.ratio
            ok &= 1.0 / 20.0 <= row.ratio <= 20.0
            if d == 1 and row.p == 2.0:
                ok &= 1.0 - 4.0 * row.ratio_stderr <= row.ratio <= 4.0 + 4.0 * row.ratio_stderr
    return ok, ", ".join(f"{k}: {v:.3f}" for k, v in cells.items()), {"ratios": cells}


def _random_integrand(rng: np.random.Generator, times: np.ndarray, d: int, k: int) -> ElementaryProcess:
    K = times.size - 1
    cuts = np.sort(rng.choice(np.arange(1, K), size=min(3, K - 1), replace=False))
    idx = np.concatenate([[0], cuts, [K]])
    if rng.random() < 0.5:
        return ElementaryProcess(breakpoints=times[idx], values=rng.standard_normal((idx.size - 1, d, k)))
    B = rng.standard_normal((idx.size - 1, d, k))
    u = rng.standard_normal(k)
    return ElementaryProcess(
        breakpoints=times[idx],
        rule=lambda j, history: (1.0 + np.tanh(history[-1] @ u)) * B[j],
        shape=(d, k),
    )


def check_ito_identity(ctx: CheckContext):
    pairs = ctx.size(1000, 100)
    worst = 0.0
    for i in range(pairs):
        rng = ctx.rng("ito", i)
        d, k = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        driver = make_driver_brownian(k, int(rng.integers(8, 33)), 1.0, rng)
        phi = _random_integrand(rng, driver.times, d, k)
        lhs = covariation_form(integrate(phi, driver)).matrix
        rhs = integrand_form(phi, driver).matrix
        worst = max(worst, float(np.max(np.abs(lhs - rhs))) / max(1.0, float(np.max(np.abs(rhs)))))
    return worst <= 1e-10, f"{pairs} pairs, max relative gap {worst:.2e}", {"max_gap": worst}


def check_poisson_integral(ctx: CheckContext):
    paths = ctx.size(10_000, 2_000)
    rate, t, d = 3.0, 1.0, 2
    x = np.array([1.0, -0.5])
    xstar = ctx.rng("poisson/xstar").standard_normal(d)
    F = np.broadcast_to(x, (1, 1, d)).copy()
    form_vals, terminal = np.empty(paths), np.empty(paths)
    for i in range(paths):
        rng = ctx.rng("poisson", i)
        P = MarkedJumpProcess.simulate([rate], t, F, np.array([0.0, t]), rng)
        path, form = poisson_integrate(P, t)
        form_vals[i] = form.evaluate(xstar)
        terminal[i] = float(path.terminal @ xstar)
    target = rate * t * float(x @ xstar) ** 2
    m, se = mean_stderr(form_vals)
    mt, set_ = mean_stderr(terminal)
    ok = within(m, target, se) and within(mt, 0.0, set_)
    return ok, f"E form = {m:.4f} (target {target:.4f}), E <N_T, x*> = {mt:.4f} +- {set_:.3f}", {
        "form_mean": m, "target": target, "terminal_mean": mt,
    }


def check_domination(ctx: CheckContext):
    cfg = ExperimentConfig(
        name="verify-domination",
        experiment="domination",
        norm=lp(2, 2),
        family="paley_walsh",
        family_params=FamilyParams(depth=ctx.size(10, 6), exhaustive=True),
        p_list=[2.0],
        search_budget=ctx.size(1000, 200),
    )
    row = domination_check(cfg, ctx.workers).rows[0]
    ok = row.ratio <= 4.0 * (1 + 1e-6) and row.extra["evaluations"] >= cfg.search_budget
    ok &= bool(row.extra["weakly_subordinate"])
    return ok, f"worst ratio {row.ratio:.4f} over {row.extra['evaluations']} transforms", {
        "ratio": row.ratio, "evaluations": row.extra["evaluations"],
    }


def check_lowp_continuous(ctx: CheckContext):
    cfg = ExperimentConfig(
        name="verify-lowp",
        experiment="lowp_continuous",
        norm=lp(2, 1),
        family="brownian_proxy",
        family_params=FamilyParams(steps_list=[256, 1024] if not ctx.quick else [64, 256]),
        p_list=[0.5],
        replications=ctx.size(400, 80),
        mc_samples=2,
    )
    report = lowp_continuous(cfg, ctx.workers)
    scaling = report.notes["scaling"]["0.5"]
    ok = bool(report.notes["stable"]["0.5"])
    ok &= bool(scaling["passed"])
    ok &= all(0.1 <= r.env_min and r.env_max <= 10.0 for r in report.rows)
    ratios = {str(r.extra["steps"]): r.ratio for r in report.rows}
    return ok, f"ratios by K {ratios}, scaling {scaling['lhs']:.6f}", {"ratios": ratios, "scaling": scaling}


def _family_samples(ctx: CheckContext, n: int) -> Iterator[MartingalePath]:
    rng = ctx.rng("psd-families")
    yield from gen_paley_walsh(8, 3, rng=rng, exhaustive=False, count=n)
    yield from gen_gaussian_walk(32, 3, np.diag([1.0, 0.5, 2.0]), rng, count=n)
    yield from gen_brownian_proxy(64, 3, 1.0, rng, count=n)
    yield from gen_compound_poisson(5.0, 1.0, gaussian_jumps(3), 16, rng, count=n)


def check_psd_increasing(ctx: CheckContext):
    n = ctx.size(10_000, 500)
    worst = math.inf
    for path in _family_samples(ctx, n):
        proc = covariation_process(path)
        gaps = proc.increment_gaps()
        if gaps.size:
            worst = min(worst, float(gaps.min()))
        worst = min(worst, psd_gap(proc.final, proc.at(0)))
    return worst >= -EXACT_TOL, f"{4 * n} paths, smallest increment eigenvalue {worst:.2e}", {"min_gap": worst}


def check_determinism(ctx: CheckContext):
    cfg = ExperimentConfig(
        name="verify-determinism",
        norm=lp(INF, 2),
        family="gaussian_walk",
        family_params=FamilyParams(steps=8),
        p_list=[1.0, 2.0],
        replications=ctx.size(64, 16),
        mc_samples=ctx.size(4000, 500),
    )
    a = bdg_ratio(cfg, workers=1).to_frame()
    b = bdg_ratio(cfg, workers=max(2, ctx.workers)).to_frame()
    cols = ["lhs", "lhs_stderr", "rhs", "rhs_stderr", "ratio", "ratio_stderr", "env_min", "env_max"]
    gap = float(np.max(np.abs(a[cols].to_numpy() - b[cols].to_numpy()) / np.maximum(1.0, np.abs(a[cols].to_numpy()))))
    return gap <= 1e-12, f"max relative difference across worker counts {gap:.1e}", {"gap": gap}


def check_square_bound(ctx: CheckContext):
    """gamma(V)^2 <= K ||V||: K = d (PSD) and 2d (indefinite) in lp(2), calibrated elsewhere."""
    forms = ctx.size(100, 20)
    samples = ctx.size(20_000, 4_000)
    metrics: Dict[str, Any] = {}
    ok = True

    for d in (2, 3, 5):
        rng = ctx.rng("square/lp2", d)
        psd = calibrate_square_bound((random_psd(d, rng) for _ in range(forms)), lp(2, d))
        general = calibrate_square_bound((random_symmetric(d, rng) for _ in range(forms)), lp(2, d))
        ok &= psd.constant <= d * (1 + EXACT_TOL) and general.constant <= 2 * d * (1 + EXACT_TOL)
        metrics[f"lp2/{d}"] = {"psd": psd.constant, "general": general.constant}

    d = 3
    for spec in (lp(INF, d), lp(1, d)):

        def ensemble(rng: np.random.Generator) -> Iterator[SymBilinearForm]:
            for i in range(forms):
                yield random_psd(d, rng) if i % 2 == 0 else random_symmetric(d, rng)

        fit_rng, held_rng = ctx.rng(f"square/{spec.label}/fit"), ctx.rng(f"square/{spec.label}/held")
        fit = calibrate_square_bound(ensemble(fit_rng), spec, samples, fit_rng)
        held = calibrate_square_bound(ensemble(held_rng), spec, samples, held_rng)
        ok &= math.isfinite(fit.constant) and held.constant <= SQUARE_BOUND_SAFETY * fit.constant
        metrics[spec.label] = {"fit": fit.constant, "held_out": held.constant}

    detail = ", ".join(f"{s} K {metrics[s]['fit']:.3f} held-out {metrics[s]['held_out']:.3f}" for s in ("lpinf", "lp1"))
    return bool(ok), detail, metrics


def check_type2_defect(ctx: CheckContext):
    samples = ctx.size(200_000, 40_000)
    rng = ctx.rng("type2")
    V = SymBilinearForm.outer([1.0, 0.0])
    W = SymBilinearForm.outer([0.0, 1.0])
    hilbert = type2_defect(V, W, lp(2, 2), samples, rng)
    sup = type2_defect(V, W, lp(INF, 2), samples, rng)
    ok = hilbert.exact and abs(hilbert.value) <= 1e-12 and abs(sup.value) > 4.0 * sup.stderr
    return ok, f"lp2 defect {hilbert.value:.1e}, lpinf defect {sup.value:.4f} +- {sup.stderr:.4f}", {
        "lp2": hilbert.value, "lpinf": sup.value, "lpinf_stderr": sup.stderr,
    }


def check_martingale_property(ctx: CheckContext):
    rng = ctx.rng("martingale")
    n = ctx.size(4000, 500)
    results = {
        "paley_walsh": check_martingale(gen_paley_walsh(ctx.size(10, 6), 2, rng=rng, exhaustive=True)),
        "gaussian_walk": check_martingale(gen_gaussian_walk(16, 2, None, rng, count=n)),
        "compound_poisson": check_martingale(gen_compound_poisson(4.0, 1.0, gaussian_jumps(2), 8, rng, count=n)),
    }
    ok = all(r.passed for r in results.values())
    return ok, ", ".join(f"{k}: {'ok' if r.passed else 'FAIL'}" for k, r in results.items()), {
        k: r.model_dump() for k, r in results.items()
    }


CHECKS: List[CheckMeta] = [
    CheckMeta("gamma_calculus", "Gaussian characteristic calculus", check_gamma_calculus, ["gaussian"]),
    CheckMeta("closed_form_anchor", "gamma(I2) under lp(inf) and gamma(I_d) under lp(2)", check_closed_form_anchor, ["gaussian"]),
    CheckMeta("oracle_equivalence", "Exhaustive trees against sampled leaves", check_oracle_equivalence, ["martingales"]),
    CheckMeta("hilbert_identities", "Hilbert p=2 identities on exhaustive trees", check_hilbert_identities, ["martingales"]),
    CheckMeta("bdg_envelope", "BDG ratio envelope, lp(2)", check_bdg_envelope, ["experiments"]),
    CheckMeta("ito_identity", "Pathwise Ito identity for elementary integrands", check_ito_identity, ["stochint"]),
    CheckMeta("poisson_integral", "Compensated Poisson integral", check_poisson_integral, ["stochint"]),
    CheckMeta("domination", "Domination under predictable contractions", check_domination, ["experiments"]),
    CheckMeta("lowp_continuous", "Small-p ratios for the Brownian proxy", check_lowp_continuous, ["experiments"]),
    CheckMeta("psd_increasing", "Covariation forms increase in the PSD order", check_psd_increasing, ["quadvar"]),
    CheckMeta("determinism", "Reports independent of the worker count", check_determinism, ["parallel"]),
    CheckMeta("square_bound", "gamma(V)^2 bounded by a multiple of the operator norm", check_square_bound, ["gaussian"]),
    CheckMeta("type2_defect", "Pythagoras holds in lp(2) and fails in lp(inf)", check_type2_defect, ["gaussian"]),
    CheckMeta("martingale_property", "Generated families are martingales", check_martingale_property, ["martingales"]),
]


def get_check_by_id(check_id: str) -> CheckMeta:
    for check in CHECKS:
        if check.id == check_id:
            return check
    raise ConfigError(f"Check {check_id} not found")


def run_checks(
    seed: int,
    workers: Optional[int] = None,
    quick: bool = False,
    only: Optional[Sequence[str]] = None,
) -> List[CheckResult]:
    """Run the registered checks (all, or the ids in `only`) in registry order."""
    selected = [get_check_by_id(c) for c in only] if only else CHECKS
    ctx = CheckContext(seed=seed, workers=resolve_workers(workers), quick=quick)
    results = []
    for meta in selected:
        started = time.perf_counter()
        try:
            passed, detail, metrics = meta.fn(ctx)
        except BdgLabError as e:
            logger.exception("check %s raised", meta.id)
            passed, detail, metrics = False, f"{type(e).__name__}: {e}", {}
        results.append(
            CheckResult(
                id=meta.id,
                title=meta.title,
                passed=bool(passed),
                detail=detail,
                metrics=metrics,
                wall_ms=(time.perf_counter() - started) * 1000.0,
            )
        )
        logger.info("check %s: %s (%s)", meta.id, "passed" if passed else "FAILED", detail)
    return results
