"""Closed-form test counts, baseline order terms and comparison ratios.

Order terms are evaluated with unit constants and natural logarithms.
``rho_T = math.inf`` stands for "no sparsity constraint".
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from .core_model import Parameters
from .stage1_design import activity_probability, reps_per_family, rho_hat, t1_formula

ONE_MINUS_INV_E = 1.0 - math.exp(-1.0)
LINEAR_KM_FRACTION = 0.5


def f_of_rho(rho: int, rho_T: float, k_m: int, M: int) -> float:
    if not (1 <= rho <= rho_T) or not (1 <= k_m <= M):
        raise ValueError(f"need 1 <= rho <= rho_T and 1 <= k_m <= M")
    base = 1.0 - k_m / M
    if rho_T == math.inf:
        return float(rho) if base < 1 else 0.0
    return rho * (1.0 - base ** (rho_T / (2 * rho)))


def g_of_rho(rho: int, upsilon: float, rho_T: float) -> float:
    if not 0 < upsilon < 1:
        raise ValueError(f"upsilon must lie in (0, 1) (got {upsilon})")
    return rho * (1.0 - upsilon ** (rho_T / rho))


def argmax_g(U: int, upsilon: float, rho_T: float, slack: float = 1e-12) -> int:
    """Maximiser of g over 1..U; later indices win ties within ``slack``."""
    if U < 1:
        raise ValueError("U must be >= 1")
    best, best_val = 1, g_of_rho(1, upsilon, rho_T)
    for rho in range(2, U + 1):
        v = g_of_rho(rho, upsilon, rho_T)
        if v >= best_val - slack:
            best, best_val = rho, max(v, best_val)
    return best


def t_hat(N: int, k: int, rho_U: float, N_tilde: int) -> float:
    """max{N/rho_U, k ln N} * ln(N_tilde)/ln(N)."""
    return max(N / rho_U, k * math.log(N)) * (math.log(N_tilde) / math.log(N))


def baseline_counts(p: Parameters) -> dict[str, float]:
    n = p.n
    linear = p.k_m >= LINEAR_KM_FRACTION * p.M
    return {
        "T_hat": t_hat(n, p.k_f * p.k_m, math.inf, n),
        "T_nC_S": t_hat(n, p.k_f * p.k_m, p.rho_T, n),
        "T_C_nS_I": p.k_f * math.log(n),
        "T_C_nS_II": float(p.k_f * p.M) if linear else p.k_f * p.k_m * math.log(n),
        "T_C_S_I": t_hat(p.F, p.k_f, p.rho_T / p.M, n),
    }


def t1_at(p: Parameters, rho: int) -> float:
    """Real-valued first-stage count at family sparsity rho (r = floor(rho_T/rho))."""
    alpha = activity_probability(p.M, p.k_m, reps_per_family(p.rho_T, rho, p.M))
    return t1_formula(p.zeta, p.lam, p.F, p.n, rho, alpha)


def t1_theorem(p: Parameters) -> float:
    rh = rho_hat(p.F, p.k_f, p.rho_T)
    return p.zeta * (1 + p.lam) * p.F * math.log(p.n) / f_of_rho(rh, p.rho_T, p.k_m, p.M)


def regime(p: Parameters) -> str:
    return "I" if p.rho_T >= p.F * p.M / (p.k_f * p.k_m) else "II"


def regime_lower_bound(p: Parameters) -> float:
    """Lower bound on f(rho_hat): (F/2k_f)(1 - 1/e) in regime I, rho_T k_m/(4M) in II.

    Derived under 2k_f | F.
    """
    if regime(p) == "I":
        return p.F / (2 * p.k_f) * ONE_MINUS_INV_E
    return p.rho_T * p.k_m / (4 * p.M)


def corollary_bound(p: Parameters) -> tuple[float, str]:
    """max{FM/(rho_T k_m), k_f} ln n and the regime."""
    value = max(p.F * p.M / (p.rho_T * p.k_m), p.k_f) * math.log(p.n)
    return value, regime(p)


def corollary_constant(p: Parameters) -> float:
    return p.zeta * (1 + p.lam) * max(2 / ONE_MINUS_INV_E, 4.0)


def t2_linear(p: Parameters) -> float:
    return float(p.k_f * p.M)


def t2_sublinear(p: Parameters) -> tuple[float, str]:
    """Per-branch inner-GT order term; branch "sparse" when rho_T < M/k_m."""
    if p.rho_T < p.M / p.k_m:
        return p.k_f * (p.M / p.rho_T) * math.log(p.n) / math.log(p.M), "sparse"
    return p.k_f * p.k_m * math.log(p.n), "dense"


def first_stage_branch(p: Parameters) -> str:
    """Order of T_I / T_C,S,I; the first matching condition wins."""
    n, lf = p.n, math.log(p.F)
    if p.rho_T < n / (p.k_m * p.k_f):
        return "log(F)/M"
    if p.rho_T >= n / (p.k_f * lf):
        return "1"
    return "rho_T*k_f*log(F)/n"


def comparison_ratios(p: Parameters) -> dict[str, float | str]:
    base = baseline_counts(p)
    t1, _ = corollary_bound(p)
    return {
        "total_vs_no_community": (t1 + t2_linear(p)) / base["T_nC_S"],
        "first_stage_vs_sparse_community": t1 / base["T_C_S_I"],
        "first_stage_branch": first_stage_branch(p),
    }


@dataclass(frozen=True)
class BoundReport:
    rho_hat: int
    t1_exact: float
    t1_theorem: float
    t1_corollary: float
    f_rhohat: float
    regime: str
    regime_bound: float
    baselines: dict
    ratios: dict
    t2_linear: float
    t2_sublinear: float
    t2_sublinear_branch: str

    def as_dict(self) -> dict:
        return asdict(self)

    def flat(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if not isinstance(v, dict)}
        out.update({f"baseline_{k}": v for k, v in self.baselines.items()})
        out.update({f"ratio_{k}": v for k, v in self.ratios.items()})
        return out


def bound_report(p: Parameters) -> BoundReport:
    rh = rho_hat(p.F, p.k_f, p.rho_T)
    cor, reg = corollary_bound(p)
    t2s, branch = t2_sublinear(p)
    return BoundReport(
        rho_hat=rh,
        t1_exact=t1_at(p, rh),
        t1_theorem=t1_theorem(p),
        t1_corollary=cor,
        f_rhohat=f_of_rho(rh, p.rho_T, p.k_m, p.M),
        regime=reg,
        regime_bound=regime_lower_bound(p),
        baselines=baseline_counts(p),
        ratios=comparison_ratios(p),
        t2_linear=t2_linear(p),
        t2_sublinear=t2s,
        t2_sublinear_branch=branch,
    )


def dilution_order_terms(n: int, k: int, alpha: float) -> dict[str, float]:
    """k ln(n)/alpha for this design against k ln(n)/alpha^2 for the earlier NLI design."""
    return {
        "order_term": k * math.log(n) / alpha,
        "nli_prior_order_term": k * math.log(n) / alpha**2,
    }
