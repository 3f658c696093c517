"""Second stage: recover infected members inside declared families.

Two strategies. Individual testing spends M tests per family. The inner
group test pools members with a random constant-row-weight design and
decodes with COMP, which never clears an infected member.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .core_model import GroundTruth, Parameters
from .stage1_design import ContactMatrix, sample_contact_matrix

C_IN_DEFAULT = 3.0


class Strategy(str, enum.Enum):
    INDIVIDUAL = "individual"
    INNER_GT = "inner_gt"


def inner_pool_size(M: int, k_m: int, rho_T: float) -> int:
    return int(min(rho_T, max(1, M // (k_m + 1))))


def inner_test_count(M: int, k_m: int, rho_T: float, n: int, c_in: float = C_IN_DEFAULT) -> int:
    return math.ceil(c_in * max(M / rho_T, k_m) * math.log(n))


def stage2_strategy(p: Parameters, c_in: float = C_IN_DEFAULT) -> Strategy:
    """Whichever strategy needs fewer tests per family."""
    if inner_test_count(p.M, p.k_m, p.rho_T, p.n, c_in) < p.M:
        return Strategy.INNER_GT
    return Strategy.INDIVIDUAL


def individual_testing(family: int, truth: GroundTruth) -> tuple[frozenset[int], int]:
    return truth.infected_members.get(family, frozenset()), truth.M


def inner_gt_design(
    M: int, k_m: int, rho_T: float, n: int, rng: np.random.Generator, c_in: float = C_IN_DEFAULT
) -> ContactMatrix:
    w = inner_pool_size(M, k_m, rho_T)
    return sample_contact_matrix(inner_test_count(M, k_m, rho_T, n, c_in), M, w, rng)


def comp_decode(design: ContactMatrix, outcomes) -> tuple[frozenset[int], frozenset[int]]:
    """Return (possible defectives, untested members).

    A member is cleared iff it appears in a negative test. Members in no test
    at all cannot be cleared and are reported separately.
    """
    outcomes = np.asarray(outcomes, dtype=bool)
    if outcomes.shape != (design.T1,):
        raise ValueError(f"expected {design.T1} outcomes, got shape {outcomes.shape}")
    tested = np.zeros(design.F, dtype=bool)
    tested[design.support.ravel()] = True
    cleared = np.zeros(design.F, dtype=bool)
    cleared[design.support[~outcomes].ravel()] = True
    positive = np.flatnonzero(tested & ~cleared)
    return frozenset(positive.tolist()), frozenset(np.flatnonzero(~tested).tolist())


def inner_tests(design: ContactMatrix, infected: Iterable[int]) -> np.ndarray:
    bad = np.zeros(design.F, dtype=bool)
    bad[list(infected)] = True
    return bad[design.support].any(axis=1)


@dataclass(frozen=True)
class Stage2Result:
    recovered_members: Mapping[int, frozenset[int]]
    tests_used: int
    strategy: Strategy
    undetermined: Mapping[int, frozenset[int]] = field(default_factory=dict)
    max_pool_size: int = 0

    @property
    def complete(self) -> bool:
        """False if some member was never tested (COMP could not clear it)."""
        return not any(self.undetermined.values())

    def exact(self, truth: GroundTruth) -> bool:
        if not self.complete:
            return False
        for f, got in self.recovered_members.items():
            if got != truth.infected_members.get(f, frozenset()):
                return False
        return set(self.recovered_members) >= set(truth.infected_families)

    def to_json(self) -> dict:
        return {
            "strategy": self.strategy.value,
            "tests_used": self.tests_used,
            "max_pool_size": self.max_pool_size,
            "recovered_members": {str(f): sorted(s) for f, s in sorted(self.recovered_members.items())},
            "undetermined": {str(f): sorted(s) for f, s in sorted(self.undetermined.items()) if s},
        }


def run_stage2(
    declared: Iterable[int],
    truth: GroundTruth,
    p: Parameters,
    rng: np.random.Generator,
    *,
    strategy: Strategy | None = None,
    c_in: float = C_IN_DEFAULT,
) -> Stage2Result:
    if strategy is None:
        strategy = stage2_strategy(p, c_in)
    recovered, undetermined = {}, {}
    used = pool = 0
    for f in sorted(declared):
        if strategy is Strategy.INDIVIDUAL:
            recovered[f], cost = individual_testing(f, truth)
            used += cost
            pool = max(pool, 1)
            continue
        design = inner_gt_design(p.M, p.k_m, p.rho_T, p.n, rng, c_in)
        outcomes = inner_tests(design, truth.infected_members.get(f, ()))
        recovered[f], undetermined[f] = comp_decode(design, outcomes)
        used += design.T1
        pool = max(pool, design.rho)
    return Stage2Result(recovered, used, strategy, undetermined, pool)
