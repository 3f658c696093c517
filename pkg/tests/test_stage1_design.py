import itertools
import json
import math
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from commgt.core_model import GroundTruth, ParameterError, Parameters, sample_ground_truth, trial_rng
from commgt.stage1_design import (
    ContactMatrix,
    TestPlan,
    activity_probability,
    choose_dilution_params,
    choose_stage1_params,
    contact_json,
    dilution_realize,
    realize_sampling_matrix,
    rho_hat,
    run_tests,
    sample_contact_matrix,
    sample_representatives,
)


def params(**kw):
    base = dict(F=20, M=6, k_f=2, k_m=2, rho_T=6, zeta_override=4.0)
    base.update(kw)
    return Parameters(**base)


def alpha_oracle(M, k_m, r):
    # exact rational 1 - C(M-k_m, r)/C(M, r)
    miss = Fraction(math.comb(M - k_m, r), math.comb(M, r)) if r <= M - k_m else Fraction(0)
    return float(1 - miss)


# ------------------------------------------------------------ parameters


def test_rho_hat_small_population():
    cfg = choose_stage1_params(params(F=4, M=12, k_f=2, rho_T=10))
    assert (cfg.rho, cfg.r) == (1, 10)


def test_rho_hat_budget_bound():
    cfg = choose_stage1_params(params(F=100, M=6, k_f=2, rho_T=16))
    assert (cfg.rho, cfg.r) == (16, 1)


def test_reps_clipped_to_family_size():
    cfg = choose_stage1_params(params(F=4, M=3, k_f=2, rho_T=10))
    assert (cfg.rho, cfg.r, cfg.alpha) == (1, 3, 1.0)


def test_default_zeta_in_config():
    p = Parameters(F=40, M=8, k_f=2, k_m=4, rho_T=8)
    cfg = choose_stage1_params(p)
    assert cfg.zeta == pytest.approx(64 * math.e**4)
    assert cfg.T1 == math.ceil(cfg.zeta * 1.5 * 40 * math.log(320) / (8 * 0.5))
    assert cfg.T1 == 302343


@pytest.mark.parametrize("M, k_m, r, expected", [(4, 2, 1, 0.5), (7, 3, 7, 1.0), (10, 10, 1, 1.0)])
def test_activity_probability_examples(M, k_m, r, expected):
    assert activity_probability(M, k_m, r) == expected


@given(M=st.integers(1, 200), data=st.data())
def test_activity_probability_matches_binomials(M, data):
    k_m = data.draw(st.integers(1, M))
    r = data.draw(st.integers(1, M))
    assert activity_probability(M, k_m, r) == pytest.approx(alpha_oracle(M, k_m, r), abs=1e-12)


@pytest.mark.parametrize("M, k_m, r", [(4, 0, 1), (4, 5, 1), (4, 2, 0)])
def test_activity_probability_domain(M, k_m, r):
    with pytest.raises(ValueError):
        activity_probability(M, k_m, r)


@settings(max_examples=200)
@given(k_f=st.integers(2, 6), extra=st.integers(0, 40), M=st.integers(1, 20),
       rho_T=st.integers(1, 60), data=st.data())
def test_config_invariants(k_f, extra, M, rho_T, data):
    F = 2 * k_f + extra
    k_m = data.draw(st.integers(1, M))
    p = Parameters(F=F, M=M, k_f=k_f, k_m=k_m, rho_T=rho_T, zeta_override=1.0)
    cfg = choose_stage1_params(p)
    assert 1 <= cfg.rho <= min(rho_T, F // (2 * k_f))
    assert 1 <= cfg.r and cfg.rho * cfg.r <= rho_T
    assert cfg.r == min(rho_T // cfg.rho, M)
    assert cfg.alpha == pytest.approx(alpha_oracle(M, k_m, cfg.r), abs=1e-12)
    assert cfg.T1 == math.ceil(cfg.t1_formula)
    assert cfg.d > 0


def test_t1_non_increasing_in_budget():
    for F, M, k_f, k_m in itertools.product((8, 20, 41), (1, 4, 9), (2, 3), (1, 3)):
        if k_m > M or F < 2 * k_f:
            continue
        prev = math.inf
        for rho_T in range(1, 3 * F):
            T1 = choose_stage1_params(Parameters(F=F, M=M, k_f=k_f, k_m=k_m, rho_T=rho_T,
                                                 zeta_override=1.0)).T1
            assert T1 <= prev, (F, M, k_f, k_m, rho_T)
            prev = T1


def test_t1_cap_flags_infeasible():
    cfg = choose_stage1_params(params(), t1_cap=10)
    assert cfg.T1 == 10 and not cfg.feasible
    assert choose_stage1_params(params()).feasible


def test_forced_rho_and_T1():
    cfg = choose_stage1_params(params(), rho=2, T1=7)
    assert (cfg.rho, cfg.r, cfg.T1) == (2, 3, 7)
    with pytest.raises(ParameterError):
        choose_stage1_params(params(), rho=7)


def test_infinite_budget_rejected_for_simulation():
    with pytest.raises(ParameterError, match="finite"):
        choose_stage1_params(params(rho_T=math.inf))


def test_as_dict_reports_log_base():
    d = choose_stage1_params(params()).as_dict()
    assert d["log_base"] == "e"
    json.dumps(d)


def test_dilution_params():
    cfg = choose_dilution_params(512, 4, 0.5)
    assert (cfg.rho, cfg.r, cfg.alpha) == (64, 1, 0.5)
    assert cfg.T1 == math.ceil(64 * math.e**4 * 1.5 * 512 * math.log(512) / (64 * 0.5))
    assert choose_dilution_params(512, 4, 0.5, rho_T=10).rho == 10
    with pytest.raises(ParameterError):
        choose_dilution_params(7, 4, 0.5)
    with pytest.raises(ParameterError):
        choose_dilution_params(512, 4, 0.0)


def test_dilution_formula_scales_inversely_with_alpha():
    a = choose_dilution_params(512, 4, 0.5, zeta=3.0).t1_formula
    b = choose_dilution_params(512, 4, 1.0, zeta=3.0).t1_formula
    assert a == 2 * b


# --------------------------------------------------------- contact matrix


def test_full_rows_when_rho_equals_F():
    m = sample_contact_matrix(50, 6, 6, trial_rng(0, 0))
    assert m.to_dense().all()


def test_row_patterns_uniform():
    m = sample_contact_matrix(60_000, 4, 2, trial_rng(1, 0))
    counts = Counter(map(tuple, m.support.tolist()))
    assert len(counts) == 6
    p = 1 / 6
    sigma = math.sqrt(60_000 * p * (1 - p))
    assert all(abs(c - 60_000 * p) <= 3 * sigma for c in counts.values())


@given(T1=st.integers(0, 40), F=st.integers(1, 30), data=st.data(), seed=st.integers(0, 10**9))
def test_row_weight_is_rho(T1, F, data, seed):
    rho = data.draw(st.integers(1, F))
    m = sample_contact_matrix(T1, F, rho, trial_rng(seed, 0))
    assert m.T1 == T1 and m.rho == rho
    assert np.all(m.row_weights() == rho)
    assert m.selections().sum() == T1 * rho


def test_contact_matrix_rejects_bad_rho():
    with pytest.raises(ValueError):
        sample_contact_matrix(3, 4, 5, trial_rng(0, 0))
    with pytest.raises(ValueError):
        sample_contact_matrix(3, 4, 0, trial_rng(0, 0))


def test_contact_matrix_is_read_only():
    m = sample_contact_matrix(3, 4, 2, trial_rng(0, 0))
    with pytest.raises(ValueError):
        m.support[0, 0] = 3


def test_contact_json_round_trip():
    m = sample_contact_matrix(3, 5, 2, trial_rng(0, 0))
    d = json.loads(json.dumps(contact_json(m)))
    assert d["rows"] == m.support.tolist() and d["F"] == 5


# --------------------------------------------------------- representatives


def test_full_family_when_r_equals_M():
    m = sample_contact_matrix(20, 6, 3, trial_rng(2, 0))
    plan = sample_representatives(m, 4, 4, trial_rng(2, 1))
    assert np.all(plan.reps == np.arange(4))


def test_member_marginal_one_third():
    m = sample_contact_matrix(30_000, 4, 1, trial_rng(3, 0))
    plan = sample_representatives(m, 3, 1, trial_rng(3, 1))
    counts = np.bincount(plan.reps.ravel(), minlength=3)
    sigma = math.sqrt(30_000 * (1 / 3) * (2 / 3))
    assert np.all(np.abs(counts - 10_000) <= 3 * sigma)


def test_reps_only_for_selected_pairs():
    m = sample_contact_matrix(5, 8, 3, trial_rng(4, 0))
    plan = sample_representatives(m, 5, 2, trial_rng(4, 1))
    assert plan.reps.shape == (5, 3, 2)
    d = plan.to_json(m)
    for t, rec in enumerate(d["tests"]):
        assert sorted(rec["families"]) == m.support[t].tolist()


def test_reps_reject_bad_r():
    m = sample_contact_matrix(2, 4, 2, trial_rng(0, 0))
    with pytest.raises(ValueError):
        sample_representatives(m, 3, 4, trial_rng(0, 1))


# ------------------------------------------------------------- outcomes


def test_tests_without_infected_families_are_negative():
    truth = GroundTruth(F=6, M=3, infected_families={0, 1}, infected_members={0: {0}, 1: {2}})
    m = ContactMatrix(np.array([[2, 3], [4, 5], [0, 5]]), 6)
    plan = TestPlan(np.zeros((3, 2, 1), dtype=np.int32))
    assert run_tests(truth, m, plan).tolist() == [False, False, True]


def test_full_family_reps_make_infected_tests_positive():
    p = params(F=12, M=4, k_m=1, rho_T=8)
    rng = trial_rng(5, 0)
    truth = sample_ground_truth(p, rng)
    m = sample_contact_matrix(200, p.F, 2, rng)
    plan = sample_representatives(m, p.M, p.M, rng)
    expected = truth.family_indicator()[m.support].any(axis=1)
    assert np.array_equal(run_tests(truth, m, plan), expected)


def test_two_family_outcome_distribution_exhaustive():
    # both families infected with one of two members; one test selects both with r = 1
    truth = GroundTruth(F=2, M=2, infected_families={0, 1}, infected_members={0: {0}, 1: {1}})
    m = ContactMatrix(np.array([[0, 1]]), 2)
    configs = list(itertools.product(range(2), repeat=2))
    positives = 0
    for a, b in configs:
        plan = TestPlan(np.array([[[a], [b]]]))
        out = bool(run_tests(truth, m, plan)[0])
        assert out == (a == 0 or b == 1)
        positives += out
    assert Fraction(positives, len(configs)) == Fraction(3, 4)
    # sampled representatives reproduce the enumerated rate
    big = ContactMatrix(np.tile([0, 1], (40_000, 1)), 2)
    plan = sample_representatives(big, 2, 1, trial_rng(6, 0))
    rate = run_tests(truth, big, plan).mean()
    assert abs(rate - 0.75) <= 3 * math.sqrt(0.75 * 0.25 / 40_000)


def test_plan_mismatch_rejected():
    truth = GroundTruth(F=4, M=2, infected_families={0, 1}, infected_members={0: {0}, 1: {1}})
    m = ContactMatrix(np.array([[0, 1]]), 4)
    with pytest.raises(ValueError):
        run_tests(truth, m, TestPlan(np.zeros((2, 2, 1), dtype=np.int32)))


@settings(max_examples=100)
@given(seed=st.integers(0, 2**32), k_f=st.integers(2, 4), extra=st.integers(0, 10),
       M=st.integers(1, 8), rho_T=st.integers(1, 24), data=st.data())
def test_pool_sizes_respect_budget(seed, k_f, extra, M, rho_T, data):
    k_m = data.draw(st.integers(1, M))
    p = Parameters(F=2 * k_f + extra, M=M, k_f=k_f, k_m=k_m, rho_T=rho_T, zeta_override=1.0)
    cfg = choose_stage1_params(p, T1=30)
    rng = trial_rng(seed, 0)
    m = sample_contact_matrix(cfg.T1, p.F, cfg.rho, rng)
    plan = sample_representatives(m, p.M, cfg.r, rng)
    sizes = plan.pool_sizes(m, p.M)
    assert np.all(sizes == cfg.rho * cfg.r)
    assert np.all(sizes <= rho_T)


# -------------------------------------------------------- sampling matrix


def _instance(seed, **kw):
    p = params(**kw)
    rng = trial_rng(seed, 0)
    truth = sample_ground_truth(p, rng)
    cfg = choose_stage1_params(p, T1=300)
    m = sample_contact_matrix(cfg.T1, p.F, cfg.rho, rng)
    plan = sample_representatives(m, p.M, cfg.r, rng)
    return p, truth, cfg, m, plan


@pytest.mark.parametrize("kw", [dict(F=8, M=3, rho_T=6), dict(M=4, k_m=4, rho_T=6)])
def test_sampling_equals_contact_when_always_active(kw):
    p, truth, cfg, m, plan = _instance(7, **kw)
    assert cfg.alpha == 1.0
    s = realize_sampling_matrix(truth, m, plan)
    assert np.array_equal(s.to_dense(), m.to_dense())


@given(seed=st.integers(0, 2**32))
@settings(max_examples=30)
def test_sampling_matrix_structure(seed):
    p, truth, cfg, m, plan = _instance(seed)
    s = realize_sampling_matrix(truth, m, plan)
    dense_s, dense_c = s.to_dense(), m.to_dense()
    assert np.all(dense_s <= dense_c)
    healthy = ~truth.family_indicator()
    assert np.array_equal(dense_s[:, healthy], dense_c[:, healthy])
    x = truth.family_indicator()
    assert np.array_equal(s.logical_product(x), run_tests(truth, m, plan))


def test_activity_frequency_matches_alpha():
    p = params(F=40, M=10, k_f=4, k_m=3, rho_T=10)
    rng = trial_rng(8, 0)
    truth = sample_ground_truth(p, rng)
    cfg = choose_stage1_params(p, rho=5, T1=40_000)
    m = sample_contact_matrix(cfg.T1, p.F, cfg.rho, rng)
    plan = sample_representatives(m, p.M, cfg.r, rng)
    s = realize_sampling_matrix(truth, m, plan)
    infected_entries = truth.family_indicator()[m.support]
    kept = s.keep[infected_entries]
    se = math.sqrt(cfg.alpha * (1 - cfg.alpha) / kept.size)
    assert abs(kept.mean() - cfg.alpha) <= 3 * se


# ------------------------------------------------------------- dilution


def test_dilution_alpha_one_is_identity():
    m = sample_contact_matrix(100, 20, 4, trial_rng(9, 0))
    s = dilution_realize(m, {1, 5}, 1.0, trial_rng(9, 1))
    assert np.array_equal(s.to_dense(), m.to_dense())


def test_dilution_keeps_half_and_spares_healthy():
    m = sample_contact_matrix(50_000, 20, 4, trial_rng(10, 0))
    defective = {2, 11, 17}
    s = dilution_realize(m, defective, 0.5, trial_rng(10, 1))
    isdef = np.isin(m.support, list(defective))
    kept = s.keep[isdef]
    assert abs(kept.mean() - 0.5) <= 3 * math.sqrt(0.25 / kept.size)
    assert s.keep[~isdef].all()


def test_dilution_rejects_bad_alpha():
    m = sample_contact_matrix(2, 4, 2, trial_rng(0, 0))
    with pytest.raises(ValueError):
        dilution_realize(m, {0}, 0.0, trial_rng(0, 1))
