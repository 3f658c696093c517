"""First-stage test design: parameter choice, contact matrix, representatives.

A contact matrix row is stored as the sorted list of the ``rho`` families it
selects (``support``), which is far smaller than a dense or bit-packed row
when ``rho`` is much less than ``F``. ``TestPlan.reps[t, s]`` holds the
representative members of family ``support[t, s]`` in test ``t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core_model import GroundTruth, Parameters, ParameterError, uniform_subsets

T1_CAP_DEFAULT = 10_000_000


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def activity_probability(M: int, k_m: int, r: int) -> float:
    """Probability that r uniformly chosen members hit at least one of k_m infected.

    Product form of 1 - C(M-k_m, r)/C(M, r); no large binomials.
    """
    if not (1 <= k_m <= M) or r < 1:
        raise ValueError(f"need 1 <= k_m <= M and r >= 1 (M={M}, k_m={k_m}, r={r})")
    if r > M - k_m:
        return 1.0
    miss = 1.0
    for j in range(1, r + 1):
        miss *= (M - k_m - j + 1) / (M - j + 1)
    return 1.0 - miss


def rho_hat(F: int, k_f: int, rho_T: float) -> int:
    return int(min(rho_T, F // (2 * k_f)))


def reps_per_family(rho_T: float, rho: int, M: int) -> int:
    """floor(rho_T / rho), clipped to the family size."""
    if rho_T == math.inf:
        return M
    return min(int(rho_T) // rho, M)


def t1_formula(zeta: float, lam: float, F: int, n: int, rho: int, alpha: float) -> float:
    """Real-valued first-stage test count zeta (1+lam) F ln(n) / (rho alpha)."""
    return zeta * (1.0 + lam) * F * math.log(n) / (rho * alpha)


@dataclass(frozen=True)
class Stage1Config:
    rho: int
    r: int
    alpha: float
    T1: int
    d: float
    zeta: float
    t1_formula: float
    feasible: bool = True

    def as_dict(self) -> dict:
        return {
            "rho": self.rho,
            "r": self.r,
            "alpha": self.alpha,
            "T1": self.T1,
            "d": self.d,
            "zeta": self.zeta,
            "t1_formula": self.t1_formula,
            "feasible": self.feasible,
            "log_base": "e",
        }


def _finish_config(F, k_f, rho, r, alpha, zeta, formula, T1, t1_cap) -> Stage1Config:
    from .stage1_decoder import expected_scores

    feasible = True
    if T1 is None:
        if not math.isfinite(formula) or formula > t1_cap:
            T1, feasible = t1_cap, False
        else:
            T1 = math.ceil(formula)
    m = expected_scores(F, k_f, rho, alpha, T1)
    return Stage1Config(
        rho=rho, r=r, alpha=alpha, T1=int(T1), d=(m.mu_m + m.mu_p) / 2,
        zeta=zeta, t1_formula=formula, feasible=feasible,
    )


def choose_stage1_params(
    p: Parameters,
    *,
    rho: int | None = None,
    T1: int | None = None,
    t1_cap: int = T1_CAP_DEFAULT,
) -> Stage1Config:
    """Family sparsity rho_hat, r, alpha, T1 and the midpoint threshold d.

    ``rho`` and ``T1`` may be forced; a forced rho above floor(F/2k_f) is
    refused by the score moments.
    """
    if not math.isfinite(p.rho_T):
        raise ParameterError("simulation needs a finite rho_T")
    if rho is None:
        rho = rho_hat(p.F, p.k_f, p.rho_T)
    if not 1 <= rho <= min(p.rho_T, p.F):
        raise ParameterError(f"rho={rho} outside [1, min(rho_T, F)]")
    r = reps_per_family(p.rho_T, rho, p.M)
    alpha = activity_probability(p.M, p.k_m, r)
    formula = t1_formula(p.zeta, p.lam, p.F, p.n, rho, alpha)
    return _finish_config(p.F, p.k_f, rho, r, alpha, p.zeta, formula, T1, t1_cap)


def choose_dilution_params(
    n: int,
    k: int,
    alpha: float,
    *,
    lam: float = 0.5,
    zeta: float | None = None,
    rho_T: float = math.inf,
    T1: int | None = None,
    t1_cap: int = T1_CAP_DEFAULT,
) -> Stage1Config:
    """Classical dilution model: n items, k defective, alpha given.

    Each item is its own "family" of one member, so r = 1 and the design is
    the community design with F = n.
    """
    if k < 2 or n < 2 * k:
        raise ParameterError(f"need k >= 2 and n >= 2k (n={n}, k={k})")
    if not 0 < alpha <= 1:
        raise ParameterError(f"alpha must lie in (0, 1] (got {alpha})")
    zeta = 64.0 * math.exp(4.0) if zeta is None else zeta
    rho = rho_hat(n, k, rho_T)
    formula = t1_formula(zeta, lam, n, n, rho, alpha)
    return _finish_config(n, k, rho, 1, alpha, zeta, formula, T1, t1_cap)


@dataclass(frozen=True)
class ContactMatrix:
    """T1 rows over F columns, each selecting exactly ``rho`` columns."""

    support: np.ndarray
    F: int

    def __post_init__(self):
        object.__setattr__(self, "support", _frozen(self.support))
        if self.support.ndim != 2:
            raise ValueError("support must be a (T1, rho) array")

    @property
    def T1(self) -> int:
        return self.support.shape[0]

    @property
    def rho(self) -> int:
        return self.support.shape[1]

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.T1, self.F), dtype=bool)
        np.put_along_axis(dense, self.support.astype(np.intp), True, axis=1)
        return dense

    def row_weights(self) -> np.ndarray:
        return self.to_dense().sum(axis=1)

    def selections(self) -> np.ndarray:
        """Number of tests selecting each column."""
        return np.bincount(self.support.ravel(), minlength=self.F)


@dataclass(frozen=True)
class TestPlan:
    reps: np.ndarray
    outcomes: np.ndarray | None = None

    __test__ = False  # not a pytest class

    def __post_init__(self):
        object.__setattr__(self, "reps", _frozen(self.reps))
        if self.outcomes is not None:
            object.__setattr__(self, "outcomes", _frozen(np.asarray(self.outcomes, dtype=bool)))

    @property
    def r(self) -> int:
        return self.reps.shape[2]

    def with_outcomes(self, outcomes: np.ndarray) -> "TestPlan":
        return replace(self, outcomes=outcomes)

    def pooled_ids(self, matrix: ContactMatrix, M: int) -> np.ndarray:
        """Global member ids pooled in each test, shape (T1, rho * r)."""
        ids = matrix.support.astype(np.int64)[:, :, None] * M + self.reps
        return ids.reshape(matrix.T1, matrix.rho * self.r)

    def pool_sizes(self, matrix: ContactMatrix, M: int) -> np.ndarray:
        """Number of distinct members pooled in each test."""
        ids = np.sort(self.pooled_ids(matrix, M), axis=1)
        if ids.shape[1] == 0:
            return np.zeros(ids.shape[0], dtype=np.int64)
        return 1 + np.count_nonzero(np.diff(ids, axis=1), axis=1)

    def to_json(self, matrix: ContactMatrix) -> dict:
        """Debug form: test -> family -> member ids. Not a stable format."""
        tests = []
        for t in range(matrix.T1):
            fams = {int(f): self.reps[t, s].tolist() for s, f in enumerate(matrix.support[t])}
            rec = {"test": t, "families": fams}
            if self.outcomes is not None:
                rec["outcome"] = int(self.outcomes[t])
            tests.append(rec)
        return {"T1": matrix.T1, "F": matrix.F, "rho": matrix.rho, "r": self.r, "tests": tests}


@dataclass(frozen=True)
class SamplingMatrix:
    """Effective design: contact entries of inactive infected families zeroed.

    ``keep[t, s]`` tells whether entry ``support[t, s]`` survives.
    """

    support: np.ndarray
    keep: np.ndarray
    F: int

    def __post_init__(self):
        object.__setattr__(self, "support", _frozen(self.support))
        object.__setattr__(self, "keep", _frozen(np.asarray(self.keep, dtype=bool)))
        if self.keep.shape != self.support.shape:
            raise ValueError("keep must match support")

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.support.shape[0], self.F), dtype=bool)
        rows = np.nonzero(self.keep)[0]
        dense[rows, self.support[self.keep]] = True
        return dense

    def logical_product(self, x: np.ndarray) -> np.ndarray:
        """Boolean matrix-vector product (AND/OR) with the family indicator x."""
        return (self.keep & np.asarray(x, dtype=bool)[self.support]).any(axis=1)


def sample_contact_matrix(T1: int, F: int, rho: int, rng: np.random.Generator) -> ContactMatrix:
    if not 1 <= rho <= F:
        raise ValueError(f"rho={rho} outside [1, F={F}]")
    return ContactMatrix(uniform_subsets(rng, T1, F, rho), F)


def sample_representatives(
    matrix: ContactMatrix, M: int, r: int, rng: np.random.Generator
) -> TestPlan:
    """Independent uniform r-subsets of each selected family, per test."""
    if not 1 <= r <= M:
        raise ValueError(f"r={r} outside [1, M={M}]")
    reps = uniform_subsets(rng, matrix.T1 * matrix.rho, M, r)
    return TestPlan(reps.reshape(matrix.T1, matrix.rho, r))


def _check_plan(truth: GroundTruth, matrix: ContactMatrix, plan: TestPlan) -> None:
    if plan.reps.shape[:2] != matrix.support.shape:
        raise ValueError("test plan does not match contact matrix")
    if matrix.F != truth.F:
        raise ValueError("contact matrix width differs from number of families")


def run_tests(truth: GroundTruth, matrix: ContactMatrix, plan: TestPlan) -> np.ndarray:
    """A test is positive iff some pooled member is infected."""
    _check_plan(truth, matrix, plan)
    infected = truth.infected_mask().ravel()
    hits = infected[plan.pooled_ids(matrix, truth.M)]
    return hits.any(axis=1)


def realize_sampling_matrix(
    truth: GroundTruth, matrix: ContactMatrix, plan: TestPlan
) -> SamplingMatrix:
    """Zero out entries where an infected family's representatives miss all its infected members."""
    _check_plan(truth, matrix, plan)
    keep = np.ones(matrix.support.shape, dtype=bool)
    for f, bad in truth.infected_members.items():
        t, s = np.nonzero(matrix.support == f)
        active = np.isin(plan.reps[t, s], list(bad)).any(axis=1)
        keep[t, s] = active
    return SamplingMatrix(matrix.support, keep, matrix.F)


def dilution_realize(
    matrix: ContactMatrix, defective, alpha: float, rng: np.random.Generator
) -> SamplingMatrix:
    """Keep each defective entry independently with probability alpha."""
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1] (got {alpha})")
    isdef = np.zeros(matrix.F, dtype=bool)
    isdef[list(defective)] = True
    keep = np.ones(matrix.support.shape, dtype=bool)
    idx = np.nonzero(isdef[matrix.support])
    if alpha < 1:
        keep[idx] = rng.random(idx[0].size) < alpha
    return SamplingMatrix(matrix.support, keep, matrix.F)


def contact_json(matrix: ContactMatrix) -> dict:
    return {"T1": matrix.T1, "F": matrix.F, "rows": matrix.support.tolist()}
