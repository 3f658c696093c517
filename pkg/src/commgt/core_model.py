"""Problem parameters, ground-truth sampling and member indexing.

Families and members are 0-based everywhere in the library. Member ``i`` of
family ``f`` has global id ``f * M + i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from numbers import Integral, Real
from types import MappingProxyType
from typing import Mapping

import numpy as np

ZETA_DEFAULT = 64.0 * math.exp(4.0)

# Rows per chunk when sampling many subsets at once; bounds the scratch mask.
_CHUNK_CELLS = 1 << 23


class ParameterError(ValueError):
    """Raised when problem parameters violate a model constraint."""


def _is_int(x) -> bool:
    return isinstance(x, Integral) and not isinstance(x, bool)


def validate_params(p: "Parameters") -> None:
    """Raise :class:`ParameterError` naming the first violated constraint."""
    for name in ("F", "M", "k_f", "k_m"):
        v = getattr(p, name)
        if not _is_int(v) or v < 1:
            raise ParameterError(f"{name} must be a positive integer (got {v!r})")
    if not (_is_int(p.rho_T) or p.rho_T == math.inf) or p.rho_T < 1:
        raise ParameterError(f"rho_T must be a positive integer or inf (got {p.rho_T!r})")
    if p.k_f < 2:
        raise ParameterError(f"k_f >= 2 violated (k_f={p.k_f})")
    if p.F < 2 * p.k_f:
        raise ParameterError(f"F >= 2k_f violated (F={p.F}, k_f={p.k_f})")
    if p.k_m > p.M:
        raise ParameterError(f"k_m <= M violated (k_m={p.k_m}, M={p.M})")
    if not isinstance(p.lam, Real) or not p.lam > 0 or math.isinf(p.lam):
        raise ParameterError(f"lambda must be a positive real (got {p.lam!r})")
    if p.zeta_override is not None and not p.zeta_override > 0:
        raise ParameterError(f"zeta must be positive (got {p.zeta_override!r})")
    if not _is_int(p.seed) or not 0 <= p.seed < 2**64:
        raise ParameterError(f"seed must be a 64-bit unsigned integer (got {p.seed!r})")


@dataclass(frozen=True)
class Parameters:
    """All problem constants of the symmetric community model.

    ``rho_T`` may be ``math.inf`` for the formula evaluators; simulations
    require a finite budget.
    """

    F: int
    M: int
    k_f: int
    k_m: int
    rho_T: int | float
    lam: float = 0.5
    zeta_override: float | None = None
    seed: int = 0

    def __post_init__(self):
        validate_params(self)

    @property
    def n(self) -> int:
        return self.F * self.M

    @property
    def zeta(self) -> float:
        return ZETA_DEFAULT if self.zeta_override is None else float(self.zeta_override)


@dataclass(frozen=True)
class GroundTruth:
    """Hidden infection state: infected families and their infected members."""

    F: int
    M: int
    infected_families: frozenset[int]
    infected_members: Mapping[int, frozenset[int]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "infected_families", frozenset(self.infected_families))
        members = {int(f): frozenset(int(i) for i in s) for f, s in self.infected_members.items()}
        object.__setattr__(self, "infected_members", MappingProxyType(members))
        if set(members) != set(self.infected_families):
            raise ValueError("infected_members keys must equal infected_families")
        for f, s in members.items():
            if not 0 <= f < self.F:
                raise ValueError(f"family {f} out of range")
            if any(not 0 <= i < self.M for i in s):
                raise ValueError(f"member index out of range in family {f}")

    def check(self, p: Parameters) -> None:
        if len(self.infected_families) != p.k_f:
            raise ValueError("number of infected families differs from k_f")
        if any(len(s) != p.k_m for s in self.infected_members.values()):
            raise ValueError("infected family with a member count other than k_m")

    def family_indicator(self) -> np.ndarray:
        x = np.zeros(self.F, dtype=bool)
        x[list(self.infected_families)] = True
        return x

    def infected_mask(self) -> np.ndarray:
        """Boolean (F, M) array, True at infected members."""
        mask = np.zeros((self.F, self.M), dtype=bool)
        for f, s in self.infected_members.items():
            mask[f, list(s)] = True
        return mask

    def member_ids(self) -> frozenset[int]:
        return frozenset(f * self.M + i for f, s in self.infected_members.items() for i in s)


def global_member_id(p: Parameters, f: int, i: int) -> int:
    if not 0 <= f < p.F:
        raise IndexError(f"family {f} outside [0, {p.F})")
    if not 0 <= i < p.M:
        raise IndexError(f"member {i} outside [0, {p.M})")
    return f * p.M + i


def member_of(p: Parameters, g: int) -> tuple[int, int]:
    """Inverse of :func:`global_member_id`."""
    if not 0 <= g < p.n:
        raise IndexError(f"member id {g} outside [0, {p.n})")
    return divmod(g, p.M)


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Independent stream for one trial, derived from (seed, trial) only."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial,)))


def _subset_masks(rng: np.random.Generator, count: int, n: int, k: int) -> np.ndarray:
    """Flat boolean mask of ``count`` independent uniform k-subsets of range(n).

    Vectorised Floyd sampling: step ``j`` draws ``t`` in [0, j] per row and
    takes ``j`` instead when ``t`` is already chosen.
    """
    mask = np.zeros(count * n, dtype=bool)
    base = np.arange(count, dtype=np.int64) * n
    for j in range(n - k, n):
        t = rng.integers(0, j + 1, size=count, dtype=np.int64)
        t += base
        hit = mask[t]
        t[hit] = base[hit] + j
        mask[t] = True
    return mask


def uniform_subsets(rng: np.random.Generator, count: int, n: int, k: int) -> np.ndarray:
    """``count`` i.i.d. uniform k-subsets of range(n) as a sorted (count, k) int32 array."""
    if not 0 <= k <= n:
        raise ValueError(f"subset size {k} outside [0, {n}]")
    out = np.empty((count, k), dtype=np.int32)
    if count == 0 or k == 0:
        return out
    complement = k > n - k
    kk = n - k if complement else k
    chunk = max(1, _CHUNK_CELLS // n)
    for lo in range(0, count, chunk):
        hi = min(count, lo + chunk)
        mask = _subset_masks(rng, hi - lo, n, kk)
        if complement:
            np.logical_not(mask, out=mask)
        cols = np.flatnonzero(mask).reshape(hi - lo, k)
        cols -= np.arange(hi - lo, dtype=np.int64)[:, None] * n
        out[lo:hi] = cols
    return out


def uniform_subset(rng: np.random.Generator, n: int, k: int) -> frozenset[int]:
    return frozenset(uniform_subsets(rng, 1, n, k)[0].tolist())


def sample_ground_truth(p: Parameters, rng: np.random.Generator) -> GroundTruth:
    families = uniform_subsets(rng, 1, p.F, p.k_f)[0].tolist()
    members = uniform_subsets(rng, p.k_f, p.M, p.k_m)
    return GroundTruth(
        F=p.F,
        M=p.M,
        infected_families=frozenset(families),
        infected_members={f: frozenset(row.tolist()) for f, row in zip(families, members)},
    )
