"""Independent verifiers for the analytic quantities, and the Monte-Carlo harness.

The brute-force oracles here never call the closed forms they are compared
against: score moments are enumerated over every possible test row and
activity pattern, and outcomes are recomputed from a dense sampling matrix.
"""

from __future__ import annotations

import configparser
import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Callable, Sequence

import numpy as np
from scipy.stats import binomtest

from . import bounds
from .core_model import Parameters, ParameterError, sample_ground_truth, trial_rng
from .stage1_decoder import decode_dilution, decode_stage1, expected_scores, h_value
from .stage1_design import (
    Stage1Config,
    choose_stage1_params,
    realize_sampling_matrix,
    reps_per_family,
    run_tests,
    sample_contact_matrix,
    sample_representatives,
)
from .stage2 import C_IN_DEFAULT, Strategy, run_stage2

EXHAUSTIVE_CAP = 10**6


# ---------------------------------------------------------------- reports


@dataclass(frozen=True, slots=True)
class Check:
    name: str
    point: tuple
    analytic: float
    oracle: float
    tolerance: float
    passed: bool
    stderr: float | None = None
    z: float | None = None


@dataclass
class VerificationReport:
    title: str
    checks: list[Check] = field(default_factory=list)

    def add(self, name, point, analytic, oracle, tolerance, passed, stderr=None, z=None):
        self.checks.append(
            Check(name, tuple(point), float(analytic), float(oracle), tolerance, bool(passed), stderr, z)
        )

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def summary(self) -> str:
        bad = len(self.failures())
        status = "PASS" if bad == 0 else "FAIL"
        return f"{status} {self.title}: {len(self.checks) - bad}/{len(self.checks)} checks"

    def to_json(self, include_checks: bool = True) -> dict:
        out = {"title": self.title, "passed": self.passed, "n_checks": len(self.checks),
               "n_failures": len(self.failures())}
        rows = self.checks if include_checks else self.failures()
        out["checks"] = [
            {**asdict(c), "point": [list(kv) for kv in c.point]} for c in rows
        ]
        return out


def _sorted(report: VerificationReport) -> VerificationReport:
    report.checks.sort(key=lambda c: (c.name, c.point))
    return report


# ------------------------------------------------------------------ grids


def _ints(spec: str) -> list[int]:
    out = []
    for part in spec.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-")
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return out


def _floats(spec: str) -> list[float]:
    return [float(v) for v in spec.split(",") if v.strip()]


def load_grids(path=None) -> dict:
    """Grid specs from an INI file; the packaged defaults when path is None."""
    cp = configparser.ConfigParser()
    if path is None:
        cp.read_string(resources.files("commgt").joinpath("grids.ini").read_text())
    else:
        with open(path) as fh:
            cp.read_file(fh)
    g = {}
    s = cp["moment_bounds"]
    g["moment_bounds"] = dict(F=_ints(s["F"]), alphas=_floats(s["alphas"]), tolerance=float(s["tolerance"]))
    s = cp["exhaustive"]
    g["exhaustive"] = dict(F=_ints(s["F"]), k_f=_ints(s["k_f"]), alphas=_floats(s["alphas"]),
                           tolerance=float(s["tolerance"]))
    s = cp["g_monotone"]
    g["g_monotone"] = dict(U_max=int(s["U_max"]), rho_T_max=int(s["rho_T_max"]),
                             upsilons=_floats(s["upsilons"]), tolerance=float(s["tolerance"]))
    s = cp["regime_bounds"]
    g["regime_bounds"] = dict(points=int(s["points"]), seed=int(s["seed"]), k_f=_ints(s["k_f"]),
                              multiples=_ints(s["multiples"]), M=_ints(s["M"]),
                              tolerance=float(s["tolerance"]))
    s = cp["outcome_equivalence"]
    g["outcome_equivalence"] = dict(trials=int(s["trials"]), seed=int(s["seed"]),
                                    max_tests=int(s["max_tests"]))
    s = cp["score_moments"]
    g["score_moments"] = dict(
        p=Parameters(F=int(s["F"]), M=int(s["M"]), k_f=int(s["k_f"]), k_m=int(s["k_m"]),
                          rho_T=int(s["rho_T"])),
        tests=int(s["tests"]), seed=int(s["seed"]), sigmas=float(s["sigmas"]),
    )
    return g


# -------------------------------------------------------- exhaustive moments


def exhaustive_score_moments(F: int, k_f: int, rho: int, alpha: float) -> tuple[float, float]:
    """Per-test expected scores (healthy, infected) by full enumeration.

    Families 0..k_f-1 are the infected ones (the design is exchangeable);
    the healthy family probed is F-1 and the infected one is 0.
    """
    if k_f >= F:
        raise ValueError("need a healthy family (k_f < F)")
    if math.comb(F, rho) * 2**k_f > EXHAUSTIVE_CAP:
        raise ValueError("instance too large for enumeration")
    healthy, infected = F - 1, 0
    patterns = []
    for active in itertools.product((False, True), repeat=k_f):
        ell = sum(active)
        patterns.append((active, alpha**ell * (1 - alpha) ** (k_f - ell)))
    rows = list(itertools.combinations(range(F), rho))
    mp = mm = 0.0
    for row in rows:
        members = set(row)
        for active, w in patterns:
            positive = any(active[j] and j in members for j in range(k_f))
            if positive:
                mp += w * (healthy in members)
                mm += w * (infected in members)
    return mp / len(rows), mm / len(rows)


def verify_exhaustive(F: Sequence[int], k_f: Sequence[int], alphas: Sequence[float],
                      tolerance: float = 1e-12) -> VerificationReport:
    rep = VerificationReport("closed-form score moments vs enumeration")
    for FF, kk, a in itertools.product(F, k_f, alphas):
        for rho in range(1, max(FF // (2 * kk), 1) + 1):
            m = expected_scores(FF, kk, rho, a, 1)
            ep, em = exhaustive_score_moments(FF, kk, rho, a)
            pt = (("F", FF), ("k_f", kk), ("rho", rho), ("alpha", a))
            rep.add("mu_p", pt, m.mu_p, ep, tolerance, abs(m.mu_p - ep) <= tolerance)
            rep.add("mu_m", pt, m.mu_m, em, tolerance, abs(m.mu_m - em) <= tolerance)
    return _sorted(rep)


# ---------------------------------------------------------- moment bounds


def moment_bound_points(F: Sequence[int], alphas: Sequence[float]):
    for FF in F:
        for kk in range(2, FF // 2 + 1):
            for rho in range(1, FF // (2 * kk) + 1):
                for a in alphas:
                    yield FF, kk, rho, a


def verify_moment_bounds(F: Sequence[int], alphas: Sequence[float], tolerance: float = 1e-9,
                        T1: int = 1) -> VerificationReport:
    """The four score-moment inequalities at every grid point (per test when T1 = 1)."""
    rep = VerificationReport("score moment inequalities")
    for FF, kk, rho, a in moment_bound_points(F, alphas):
        pt = (("F", FF), ("k_f", kk), ("rho", rho), ("alpha", a))
        h = [h_value(x, FF, rho, a) for x in range(kk + 1)]
        base = 1 - rho / FF
        hi = max(h[1:])
        rep.add("h_x upper", pt, hi, base + a * rho / FF, tolerance, hi <= base + a * rho / FF + tolerance)
        mp = T1 * (h[kk] - base)
        mm = T1 * (a + (1 - a) * h[kk - 1] - base)
        rep.add("mu_p upper", pt, mp, T1 * a * rho / FF, tolerance, mp <= T1 * a * rho / FF + tolerance)
        rep.add("mu_m upper", pt, mm, T1 * 2 * a * rho / FF, tolerance,
                mm <= T1 * 2 * a * rho / FF + tolerance)
        gap = T1 * a * rho * math.exp(-2) / (2 * FF)
        rep.add("gap lower", pt, mm - mp, gap, tolerance, mm - mp >= gap - tolerance)
    return _sorted(rep)


# ---------------------------------------------------- g monotonicity


def verify_g_monotone(U_max: int, rho_T_max: int, upsilons: Sequence[float],
                        tolerance: float = 1e-12) -> VerificationReport:
    """g(rho) = rho (1 - v^(rho_T/rho)) is non-decreasing on 1..U_max with argmax U."""
    rep = VerificationReport("g(rho) monotonicity")
    rho = np.arange(1, U_max + 1, dtype=float)
    for rho_T in range(1, rho_T_max + 1):
        for v in upsilons:
            g = rho * (1.0 - v ** (rho_T / rho))
            worst = float(np.min(np.diff(g))) if U_max > 1 else 0.0
            pt = (("rho_T", rho_T), ("upsilon", v))
            rep.add("non-decreasing", pt, worst, -tolerance, tolerance, worst >= -tolerance)
            # argmax over [U] with >= tie-breaking, for every U at once
            arg_ok = all(
                bounds.argmax_g(U, v, rho_T, tolerance) == U for U in (1, U_max // 2 or 1, U_max)
            )
            run_max = np.maximum.accumulate(g)
            prefix_ok = bool(np.all(g >= run_max - tolerance))
            rep.add("argmax = U", pt, float(arg_ok and prefix_ok), 1.0, tolerance, arg_ok and prefix_ok)
    return _sorted(rep)


# --------------------------------------------------------- regime bounds


def random_regime_points(points: int, seed: int, k_f: Sequence[int], multiples: Sequence[int],
                         M: Sequence[int]) -> list[Parameters]:
    """Random instances with 2k_f | F covering both rho_T regimes."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < points:
        kk = int(rng.choice(k_f))
        F = 2 * kk * int(rng.choice(multiples))
        MM = int(rng.choice(M))
        km = int(rng.integers(1, MM + 1))
        boundary = F * MM / (kk * km)
        rho_T = int(max(1, round(math.exp(rng.uniform(0, math.log(4 * boundary + 1))))))
        out.append(Parameters(F=F, M=MM, k_f=kk, k_m=km, rho_T=rho_T))
    return out


def verify_regime_bounds(points: int, seed: int, k_f, multiples, M,
                         tolerance: float = 1e-12) -> VerificationReport:
    rep = VerificationReport("f(rho_hat) regime bounds and t1 envelope")
    for p in random_regime_points(points, seed, k_f, multiples, M):
        pt = (("F", p.F), ("M", p.M), ("k_f", p.k_f), ("k_m", p.k_m), ("rho_T", p.rho_T))
        rh = bounds.rho_hat(p.F, p.k_f, p.rho_T)
        f = bounds.f_of_rho(rh, p.rho_T, p.k_m, p.M)
        lb = bounds.regime_lower_bound(p)
        slack = tolerance * max(1.0, abs(lb))
        rep.add(f"regime {bounds.regime(p)}", pt, f, lb, tolerance, f >= lb - slack)
        t1 = bounds.t1_theorem(p)
        env = bounds.corollary_constant(p) * bounds.corollary_bound(p)[0]
        rep.add("t1 envelope", pt, t1, env, tolerance, t1 <= env * (1 + tolerance))
    return _sorted(rep)


# ---------------------------------------------------- outcome equivalence


def random_tiny_parameters(rng: np.random.Generator) -> Parameters:
    kk = int(rng.integers(2, 4))
    F = int(rng.integers(2 * kk, 2 * kk + 6))
    M = int(rng.integers(1, 7))
    km = int(rng.integers(1, M + 1))
    rho_T = int(rng.integers(1, 3 * M + 1))
    return Parameters(F=F, M=M, k_f=kk, k_m=km, rho_T=rho_T)


def check_outcome_equivalence(p: Parameters, T1: int, rng: np.random.Generator) -> tuple[int, bool]:
    """(number of mismatching tests, whether M^(s) == M^(c) when it must)."""
    truth = sample_ground_truth(p, rng)
    rho = bounds.rho_hat(p.F, p.k_f, p.rho_T)
    r = reps_per_family(p.rho_T, rho, p.M)
    matrix = sample_contact_matrix(T1, p.F, rho, rng)
    plan = sample_representatives(matrix, p.M, r, rng)
    direct = run_tests(truth, matrix, plan)
    dense_s = realize_sampling_matrix(truth, matrix, plan).to_dense()
    via_sampling = (dense_s & truth.family_indicator()[None, :]).any(axis=1)
    mismatches = int(np.count_nonzero(direct != via_sampling))
    identical = True
    if r == p.M or p.k_m == p.M:
        identical = bool(np.array_equal(dense_s, matrix.to_dense()))
    return mismatches, identical


def verify_outcome_equivalence(p: Parameters | None, trials: int, seed: int,
                               max_tests: int = 12) -> VerificationReport:
    """Member-level outcomes vs the sampling-matrix product; p=None draws random tiny instances."""
    rep = VerificationReport("outcome equivalence")
    for trial in range(trials):
        rng = trial_rng(seed, trial)
        q = random_tiny_parameters(rng) if p is None else p
        T1 = int(rng.integers(1, max_tests + 1))
        bad, identical = check_outcome_equivalence(q, T1, rng)
        pt = (("trial", trial), ("F", q.F), ("M", q.M), ("k_m", q.k_m), ("rho_T", q.rho_T))
        rep.add("mismatches", pt, bad, 0, 0, bad == 0 and identical)
    return rep


# ------------------------------------------------------ Monte-Carlo moments


def verify_score_moments_mc(p: Parameters, tests: int, seed: int, sigmas: float = 4.0) -> VerificationReport:
    """Empirical per-test scores against the closed forms, one long design."""
    rep = VerificationReport("Monte-Carlo score moments")
    rng = trial_rng(seed, 0)
    cfg = choose_stage1_params(p, T1=tests)
    truth = sample_ground_truth(p, rng)
    report = decode_stage1(truth, cfg, rng)
    m = expected_scores(p.F, p.k_f, cfg.rho, cfg.alpha, 1)
    x = truth.family_indicator()
    for name, mask, mu in (("healthy", ~x, m.mu_p), ("infected", x, m.mu_m)):
        est = report.scores[mask].mean() / tests
        # averaging correlated Bernoulli means never increases the variance
        se = math.sqrt(mu * (1 - mu) / tests)
        z = (est - mu) / se
        pt = (("F", p.F), ("M", p.M), ("k_f", p.k_f), ("k_m", p.k_m), ("rho_T", p.rho_T))
        rep.add(f"mean score {name}", pt, mu, est, sigmas * se, abs(z) <= sigmas, se, z)
    return rep


# ------------------------------------------------------------ trials


@dataclass(frozen=True)
class TrialResult:
    trial: int
    T1: int
    T2: int
    stage1_exact: bool
    end_to_end_exact: bool | None
    false_positives: int
    misses: int
    max_pool_size: int
    declared: tuple[int, ...]
    strategy: str | None = None

    @property
    def T(self) -> int:
        return self.T1 + self.T2

    def as_dict(self) -> dict:
        d = asdict(self)
        d["T"] = self.T
        d["declared"] = list(self.declared)
        return d


@dataclass(frozen=True)
class ErrorRate:
    errors: int
    trials: int
    rate: float
    lo: float
    hi: float
    results: tuple[TrialResult, ...] = ()

    def as_dict(self) -> dict:
        return {"errors": self.errors, "trials": self.trials, "rate": self.rate,
                "wilson_lo": self.lo, "wilson_hi": self.hi}


def wilson_interval(errors: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    ci = binomtest(errors, trials).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def run_trial(p: Parameters, config: Stage1Config, trial: int, *, seed: int, stage2: bool = False,
              c_in: float = C_IN_DEFAULT, strategy: Strategy | None = None) -> TrialResult:
    rng = trial_rng(seed, trial)
    truth = sample_ground_truth(p, rng)
    rep = decode_stage1(truth, config, rng)
    T2, e2e, strat, pool = 0, None, None, rep.max_pool_size
    if stage2:
        s2 = run_stage2(rep.declared, truth, p, rng, strategy=strategy, c_in=c_in)
        T2, e2e, strat = s2.tests_used, s2.exact(truth), s2.strategy.value
        pool = max(pool, s2.max_pool_size)
    return TrialResult(trial, config.T1, T2, rep.exact, e2e, len(rep.false_positives),
                       len(rep.misses), pool, tuple(sorted(rep.declared)), strat)


def run_dilution_trial(n: int, k: int, config: Stage1Config, trial: int, *, seed: int) -> TrialResult:
    rep = decode_dilution(n, k, config, trial_rng(seed, trial))
    return TrialResult(trial, config.T1, 0, rep.exact, None, len(rep.false_positives),
                       len(rep.misses), rep.max_pool_size, tuple(sorted(rep.declared)))


def run_trials(fn: Callable[[int], TrialResult], trials: int, threads: int = 1) -> list[TrialResult]:
    """Results in trial order whatever the thread count; each trial owns its stream."""
    if threads <= 1:
        return [fn(t) for t in range(trials)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(trials)))


def summarize(results: Sequence[TrialResult], end_to_end: bool = False) -> ErrorRate:
    if end_to_end:
        errors = sum(not r.end_to_end_exact for r in results)
    else:
        errors = sum(not r.stage1_exact for r in results)
    n = len(results)
    lo, hi = wilson_interval(errors, n)
    return ErrorRate(errors, n, errors / n, lo, hi, tuple(results))


def mc_error_rate(p: Parameters, trials: int, *, seed: int | None = None,
                  config: Stage1Config | None = None, stage2: bool = False,
                  c_in: float = C_IN_DEFAULT, threads: int = 1) -> ErrorRate:
    """Empirical error rate of the full pipeline with a 95% Wilson interval."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    config = choose_stage1_params(p) if config is None else config
    if not config.feasible:
        raise ParameterError(f"T1 formula {config.t1_formula:.3g} exceeds the cap")
    seed = p.seed if seed is None else seed
    results = run_trials(
        lambda t: run_trial(p, config, t, seed=seed, stage2=stage2, c_in=c_in), trials, threads
    )
    return summarize(results, end_to_end=stage2)


def reports_json(reports: Sequence[VerificationReport], include_checks: bool = False) -> str:
    return json.dumps([r.to_json(include_checks) for r in reports], indent=2, sort_keys=True)
