"""Scoring, the d-threshold decoder and closed-form score moments."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core_model import GroundTruth, uniform_subsets
from .stage1_design import (
    ContactMatrix,
    Stage1Config,
    dilution_realize,
    run_tests,
    sample_contact_matrix,
    sample_representatives,
)

BOUND_SLACK = 1e-9


class HypothesisError(ValueError):
    """The closed-form inequalities are only proven for k_f >= 2, rho <= floor(F/2k_f)."""


def binom(a: int, b: int) -> int:
    if a < 0 or b < 0 or b > a:
        return 0
    return math.comb(a, b)


def h_value(x: int, F: int, rho: int, alpha: float) -> float:
    """P[not (f selected and no active infected family selected)], x infected families.

    Each of the x families is active with probability alpha; binomials are
    exact integers.
    """
    if x < 0 or not 1 <= rho <= F:
        raise ValueError(f"need x >= 0 and 1 <= rho <= F (x={x}, rho={rho}, F={F})")
    total = binom(F, rho)
    acc = 0.0
    for ell in range(x + 1):
        w = math.comb(x, ell) * alpha**ell * (1.0 - alpha) ** (x - ell)
        acc += w * (1.0 - binom(F - ell - 1, rho - 1) / total)
    return acc


@dataclass(frozen=True)
class ScoreMoments:
    mu_p: float
    mu_m: float
    h: tuple[float, ...]
    gap_lower_bound: float
    mu_p_per_test: float
    mu_m_per_test: float


def expected_scores(
    F: int, k_f: int, rho: int, alpha: float, T1: int, *, strict: bool = True
) -> ScoreMoments:
    """Expected scores of a healthy (mu_p) and an infected (mu_m) family.

    The equalities hold for any rho; with ``strict`` the hypotheses
    k_f >= 2, F >= 2k_f, rho <= floor(F/2k_f) are required and the four
    bounds on h_x, mu_p, mu_m and their gap are checked.
    """
    if strict and not (k_f >= 2 and F >= 2 * k_f and 1 <= rho <= F // (2 * k_f)):
        raise HypothesisError(
            f"moment bounds need k_f >= 2 and 1 <= rho <= floor(F/2k_f) "
            f"(F={F}, k_f={k_f}, rho={rho})"
        )
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1] (got {alpha})")
    h = tuple(h_value(x, F, rho, alpha) for x in range(k_f + 1))
    base = 1.0 - rho / F
    mp = h[k_f] - base
    mm = alpha + (1.0 - alpha) * h[k_f - 1] - base
    gap_pt = alpha * rho * math.exp(-2.0) / (2 * F)
    if strict:
        upper = base + alpha * rho / F
        if any(hx > upper + BOUND_SLACK for hx in h[1:]):
            raise ArithmeticError("h_x exceeds (1 - rho/F) + alpha rho/F")
        if mp > alpha * rho / F + BOUND_SLACK or mm > 2 * alpha * rho / F + BOUND_SLACK:
            raise ArithmeticError("expected score above its upper bound")
        if not mm > mp or mm - mp < gap_pt - BOUND_SLACK:
            raise ArithmeticError("expected score gap below its lower bound")
    return ScoreMoments(
        mu_p=T1 * mp,
        mu_m=T1 * mm,
        h=h,
        gap_lower_bound=T1 * gap_pt,
        mu_p_per_test=mp,
        mu_m_per_test=mm,
    )


def score(matrix: ContactMatrix, outcomes: np.ndarray) -> np.ndarray:
    """S_f = number of positive tests that selected f."""
    outcomes = np.asarray(outcomes, dtype=bool)
    if outcomes.shape != (matrix.T1,):
        raise ValueError(f"expected {matrix.T1} outcomes, got shape {outcomes.shape}")
    return np.bincount(matrix.support[outcomes].ravel(), minlength=matrix.F)


def threshold_decode(scores, d: float) -> frozenset[int]:
    return frozenset(np.flatnonzero(np.asarray(scores) >= d).tolist())


@dataclass(frozen=True)
class ScoreReport:
    scores: np.ndarray
    threshold: float
    declared: frozenset[int]
    false_positives: frozenset[int] | None = None
    misses: frozenset[int] | None = None
    T1: int = 0
    max_pool_size: int = 0

    @property
    def exact(self) -> bool:
        if self.false_positives is None:
            raise ValueError("no ground truth attached")
        return not self.false_positives and not self.misses

    def to_json(self) -> dict:
        out = {
            "T1": self.T1,
            "threshold": self.threshold,
            "scores": self.scores.tolist(),
            "declared": sorted(self.declared),
            "max_pool_size": self.max_pool_size,
        }
        if self.false_positives is not None:
            out["false_positives"] = sorted(self.false_positives)
            out["misses"] = sorted(self.misses)
        return out


def _report(scores, d, truth_set, T1, pool) -> ScoreReport:
    declared = threshold_decode(scores, d)
    return ScoreReport(
        scores=scores,
        threshold=d,
        declared=declared,
        false_positives=declared - truth_set,
        misses=truth_set - declared,
        T1=T1,
        max_pool_size=pool,
    )


def decode_stage1(
    truth: GroundTruth, config: Stage1Config, rng: np.random.Generator
) -> ScoreReport:
    """Design, pool, test, score and threshold one first-stage run."""
    matrix = sample_contact_matrix(config.T1, truth.F, config.rho, rng)
    plan = sample_representatives(matrix, truth.M, config.r, rng)
    outcomes = run_tests(truth, matrix, plan)
    pool = int(plan.pool_sizes(matrix, truth.M).max(initial=0))
    return _report(score(matrix, outcomes), config.d, truth.infected_families, config.T1, pool)


def decode_dilution(
    n: int, k: int, config: Stage1Config, rng: np.random.Generator
) -> ScoreReport:
    """One run of the scheme on the classical dilution model with n items, k defective."""
    defective = frozenset(uniform_subsets(rng, 1, n, k)[0].tolist())
    matrix = sample_contact_matrix(config.T1, n, config.rho, rng)
    sampling = dilution_realize(matrix, defective, config.alpha, rng)
    x = np.zeros(n, dtype=bool)
    x[list(defective)] = True
    outcomes = sampling.logical_product(x)
    return _report(score(matrix, outcomes), config.d, defective, config.T1, config.rho)
