"""Sequential SAA driver: quantiles, bound estimators, gap loop, VSS."""

import csv
import math

import numpy as np
import pytest
import scipy.special
import scipy.stats

from hydrobid.lp import LpBuilder, INF
from hydrobid.lshaped import SecondStage, TwoStageProgram, solve_lshaped
from hydrobid.saa import (ConfidenceInterval, SaaConfig, SaaError, eev,
                          evaluate_candidate, expected_value_solution,
                          lower_bound, negate_interval, normal_quantile,
                          regularized_incomplete_beta, result_to_dict,
                          run_saa, t_interval, t_quantile, upper_bound, vss,
                          z_interval)
from toys import (NEWSVENDOR_UNIFORM_OPTIMUM, PINBALL_EEV, PINBALL_OPTIMUM,
                  PINBALL_VSS, newsvendor_family, newsvendor_profit,
                  pinball_family, pinball_profit, pinball_target,
                  two_point_demand, uniform_demand)


# ---- quantile oracles ----------------------------------------------------------

def test_incomplete_beta_identity_line():
    for x in (0.0, 0.1, 0.37, 0.5, 0.9, 1.0):
        assert regularized_incomplete_beta(1.0, 1.0, x) == pytest.approx(x, abs=1e-14)


def test_incomplete_beta_symmetry():
    rng = np.random.default_rng(3)
    for _ in range(50):
        a, b = rng.uniform(0.2, 30.0, size=2)
        x = rng.uniform(0.01, 0.99)
        total = (regularized_incomplete_beta(a, b, x)
                 + regularized_incomplete_beta(b, a, 1.0 - x))
        assert total == pytest.approx(1.0, abs=1e-12)


def test_incomplete_beta_matches_reference():
    rng = np.random.default_rng(7)
    for _ in range(200):
        a, b = rng.uniform(0.3, 80.0, size=2)
        x = rng.uniform(0.0, 1.0)
        assert regularized_incomplete_beta(a, b, x) == pytest.approx(
            scipy.special.betainc(a, b, x), abs=1e-10)


def test_incomplete_beta_rejects_bad_parameters():
    with pytest.raises(SaaError):
        regularized_incomplete_beta(0.0, 1.0, 0.5)


def test_t_quantile_table_value():
    # classic two-sided 95% value for 9 degrees of freedom
    assert t_quantile(0.975, 9) == pytest.approx(2.262157163, abs=1e-6)


def test_t_quantile_matches_reference_over_df_sweep():
    for df in range(2, 121):
        for q in (0.9, 0.95, 0.975, 0.995):
            assert t_quantile(q, df) == pytest.approx(
                scipy.stats.t.ppf(q, df), abs=1e-6), (q, df)


def test_t_quantile_symmetry_and_center():
    assert t_quantile(0.5, 7) == 0.0
    assert t_quantile(0.025, 9) == pytest.approx(-t_quantile(0.975, 9), abs=1e-12)


def test_t_quantile_cauchy_quartile():
    # df=1 is Cauchy, whose upper quartile is tan(pi/4) = 1
    assert t_quantile(0.75, 1) == pytest.approx(1.0, abs=1e-9)


def test_t_quantile_approaches_normal():
    assert t_quantile(0.975, 10_000) == pytest.approx(1.959963985, abs=1e-3)


def test_t_quantile_rejects_bad_arguments():
    with pytest.raises(SaaError):
        t_quantile(0.0, 5)
    with pytest.raises(SaaError):
        t_quantile(1.0, 5)
    with pytest.raises(SaaError):
        t_quantile(0.9, 0)


def test_normal_quantile_known_values():
    assert normal_quantile(0.5) == pytest.approx(0.0, abs=1e-12)
    assert normal_quantile(0.975) == pytest.approx(1.959963984540054, abs=1e-9)
    assert normal_quantile(0.841344746068543) == pytest.approx(1.0, abs=1e-9)


def test_normal_quantile_matches_reference():
    for q in np.linspace(1e-6, 1.0 - 1e-6, 501):
        assert normal_quantile(float(q)) == pytest.approx(
            scipy.stats.norm.ppf(q), abs=1e-9), q


# ---- intervals -----------------------------------------------------------------

def test_confidence_interval_validation():
    with pytest.raises(SaaError):
        ConfidenceInterval(2.0, 1.0, 0.95)
    with pytest.raises(SaaError):
        ConfidenceInterval(0.0, 1.0, 1.0)


def test_negate_interval_flips_and_orders():
    ci = negate_interval(ConfidenceInterval(-3.0, 5.0, 0.9))
    assert (ci.lo, ci.hi, ci.level) == (-5.0, 3.0, 0.9)


def test_t_interval_hand_computed():
    values = [3.1, 2.7, 3.4, 2.9, 3.0, 3.3, 2.8, 3.2, 3.05, 2.95]
    est = t_interval(values, alpha=0.05)
    sd = np.std(values, ddof=1)
    hw = scipy.stats.t.ppf(0.975, 9) * sd / math.sqrt(10)
    assert est.value == pytest.approx(np.mean(values), abs=1e-12)
    assert est.halfwidth == pytest.approx(hw, abs=1e-9)
    assert est.batch_values == tuple(values)


def test_z_interval_uses_normal_quantile():
    values = [1.0, 2.0, 4.0, 5.0]
    est = z_interval(values, alpha=0.05)
    hw = scipy.stats.norm.ppf(0.975) * np.std(values, ddof=1) / 2.0
    assert est.halfwidth == pytest.approx(hw, abs=1e-9)


def test_intervals_need_two_values():
    with pytest.raises(SaaError):
        t_interval([1.0])
    with pytest.raises(SaaError):
        z_interval([1.0])


# ---- the toy families hold their advertised optima -----------------------------

def test_newsvendor_family_against_direct_solve():
    result = solve_lshaped(newsvendor_family([60.0]))
    assert result.objective == pytest.approx(120.0, abs=1e-7)
    assert result.x[0] == pytest.approx(60.0, abs=1e-7)


def test_pinball_family_against_closed_form():
    result = solve_lshaped(pinball_family([40.0, 60.0]))
    assert result.objective == pytest.approx(PINBALL_OPTIMUM, abs=1e-7)
    assert result.x[0] == pytest.approx(60.0, abs=1e-7)
    mean_result = solve_lshaped(pinball_family([50.0]))
    assert mean_result.x[0] == pytest.approx(50.0, abs=1e-7)
    eev_true = 0.5 * (pinball_profit(50.0, 40.0) + pinball_profit(50.0, 60.0))
    assert eev_true == pytest.approx(PINBALL_EEV, abs=1e-12)


def test_evaluate_candidate_is_negated_profit():
    program = newsvendor_family([60.0])
    value = evaluate_candidate(program, np.array([50.0]), 60.0)
    assert value == pytest.approx(-newsvendor_profit(50.0, 60.0), abs=1e-9)
    assert value == pytest.approx(-100.0, abs=1e-9)


# ---- lower bound ---------------------------------------------------------------

def test_lower_bound_degenerate_sampler_collapses():
    est = lower_bound(newsvendor_family, lambda rng: 60.0, n=4, m_batches=3,
                      rng=np.random.default_rng(0))
    assert est.value == pytest.approx(-120.0, abs=1e-7)
    assert est.ci.width == pytest.approx(0.0, abs=1e-9)
    assert est.batch_values == pytest.approx((-120.0,) * 3, abs=1e-7)
    assert est.candidate[0] == pytest.approx(60.0, abs=1e-6)


def test_lower_bound_candidate_solves_the_sampled_instance():
    # fixed demand pool, so every batch sees the same instance whose
    # optimum sits at the ceil(0.8 n)-th order statistic
    pool = [40.0, 80.0, 50.0, 70.0, 35.0, 85.0]
    state = {"i": 0}

    def sampler(rng):
        d = pool[state["i"] % len(pool)]
        state["i"] += 1
        return d

    est = lower_bound(newsvendor_family, sampler, n=6, m_batches=2,
                      rng=np.random.default_rng(1))
    assert est.candidate[0] == pytest.approx(80.0, abs=1e-6)
    best = max(np.mean([newsvendor_profit(x, d) for d in pool]) for x in pool)
    assert est.value == pytest.approx(-best, abs=1e-7)


def test_lower_bound_reports_failing_batch():
    def broken_family(demands):
        program = newsvendor_family(demands)

        def second_stage(d):
            b = LpBuilder()
            b.add_var("runaway", 0.0, INF, obj=1.0)
            return SecondStage(b, ())

        return TwoStageProgram(program.first_stage, second_stage,
                               program.scenarios, program.probabilities)

    with pytest.raises(SaaError, match="batch 0"):
        lower_bound(broken_family, lambda rng: 60.0, n=2, m_batches=2,
                    rng=np.random.default_rng(0))


def test_lower_bound_is_biased_above_the_optimum():
    # max orientation: E[SAA optimum] >= true optimum, so the negated batch
    # means must not drift above -108 by more than sampling error
    reps = []
    for r in range(40):
        est = lower_bound(newsvendor_family, uniform_demand, n=8, m_batches=2,
                          rng=np.random.default_rng(100 + r))
        reps.append(est.value)
    se = np.std(reps, ddof=1) / math.sqrt(len(reps))
    assert np.mean(reps) <= -NEWSVENDOR_UNIFORM_OPTIMUM + 2.0 * se


def test_lower_bound_tightens_with_sample_size():
    small, large = [], []
    for r in range(16):
        small.append(lower_bound(newsvendor_family, uniform_demand, n=8,
                                 m_batches=2,
                                 rng=np.random.default_rng(500 + r)).value)
        large.append(lower_bound(newsvendor_family, uniform_demand, n=32,
                                 m_batches=2,
                                 rng=np.random.default_rng(800 + r)).value)
    pooled = math.sqrt(np.var(small, ddof=1) / 16 + np.var(large, ddof=1) / 16)
    assert np.mean(small) <= np.mean(large) + 2.0 * pooled


# ---- upper bound ---------------------------------------------------------------

def test_upper_bound_degenerate_sampler_is_exact():
    est = upper_bound(newsvendor_family, np.array([50.0]), lambda rng: 60.0,
                      t_batches=2, n_eval=3, rng=np.random.default_rng(0))
    assert est.value == pytest.approx(-100.0, abs=1e-9)
    assert est.ci.width == pytest.approx(0.0, abs=1e-9)


def test_upper_bound_estimates_the_candidate_value():
    # E profit(50, D) for D ~ U(30, 90) is 91.666...
    expected = -(-50.0 + 140.0 + 5.0 / 3.0)
    est = upper_bound(newsvendor_family, np.array([50.0]), uniform_demand,
                      t_batches=4, n_eval=400, rng=np.random.default_rng(5))
    assert est.ci.lo <= expected <= est.ci.hi
    assert est.value >= -NEWSVENDOR_UNIFORM_OPTIMUM + 10.0


def test_upper_bound_halfwidth_scales_one_over_sqrt_n():
    sizes = [9, 36, 144]
    mean_log_hw = []
    for n_eval in sizes:
        logs = []
        for r in range(30):
            est = upper_bound(newsvendor_family, np.array([78.0]),
                              uniform_demand, t_batches=3, n_eval=n_eval,
                              rng=np.random.default_rng(1000 + r))
            logs.append(math.log(est.halfwidth))
        mean_log_hw.append(np.mean(logs))
    slope = np.polyfit(np.log(sizes), mean_log_hw, 1)[0]
    assert slope == pytest.approx(-0.5, abs=0.1)


# ---- EEV and the expected-value problem ----------------------------------------

def test_eev_degenerate_sampler_is_exact():
    est = eev(newsvendor_family, np.array([60.0]), lambda rng: 60.0, n_eev=4,
              rng=np.random.default_rng(0))
    assert est.value == pytest.approx(-120.0, abs=1e-9)
    assert est.ci.width == pytest.approx(0.0, abs=1e-9)


def test_eev_halfwidth_uses_the_normal_quantile():
    est = eev(newsvendor_family, np.array([60.0]), two_point_demand, n_eev=40,
              rng=np.random.default_rng(2))
    sd = np.std(est.batch_values, ddof=1)
    assert est.halfwidth == pytest.approx(
        scipy.stats.norm.ppf(0.975) * sd / math.sqrt(40), rel=1e-9)
    assert len(est.batch_values) == 40


def test_expected_value_solution_orders_the_mean_demand():
    x_bar = expected_value_solution(newsvendor_family, lambda rng: 60.0,
                                    n_mean_samples=5,
                                    rng=np.random.default_rng(0),
                                    mean=lambda ds: float(np.mean(ds)))
    assert x_bar[0] == pytest.approx(60.0, abs=1e-6)


def test_expected_value_solution_two_point_mean():
    x_bar = expected_value_solution(newsvendor_family, two_point_demand,
                                    n_mean_samples=2000,
                                    rng=np.random.default_rng(11),
                                    mean=lambda ds: float(np.mean(ds)))
    assert x_bar[0] == pytest.approx(60.0, abs=2.0)


# ---- VSS interval arithmetic ---------------------------------------------------

def test_vss_disjoint_intervals_subtract():
    out = vss(ConfidenceInterval(10.0, 11.0, 0.95),
              ConfidenceInterval(5.0, 6.0, 0.95))
    assert out is not None
    assert (out.lo, out.hi) == (4.0, 6.0)
    assert out.level == pytest.approx(0.90)


def test_vss_overlapping_intervals_are_not_significant():
    assert vss(ConfidenceInterval(10.0, 12.0, 0.95),
               ConfidenceInterval(11.0, 13.0, 0.95)) is None
    assert vss(ConfidenceInterval(10.0, 12.0, 0.95),
               ConfidenceInterval(12.0, 13.0, 0.95)) is None


# ---- configuration -------------------------------------------------------------

def test_saa_config_validation():
    with pytest.raises(SaaError):
        SaaConfig(n0=1)
    with pytest.raises(SaaError):
        SaaConfig(m_batches=1)
    with pytest.raises(SaaError):
        SaaConfig(tolerance=0.0)
    with pytest.raises(SaaError):
        SaaConfig(n_cap=8, n0=16)
    with pytest.raises(SaaError):
        SaaConfig(alpha=1.5)


def test_saa_config_defaults_match_the_procedure():
    cfg = SaaConfig()
    assert cfg.n0 == 16 and cfg.growth == 2
    assert cfg.m_batches == 10 and cfg.t_batches == 10
    assert cfg.n_eval == 1000 and cfg.n_eev == 5000
    assert cfg.alpha == 0.05


# ---- sequential driver ---------------------------------------------------------

def small_cfg(**overrides):
    base = dict(n0=8, m_batches=3, t_batches=3, n_eval=32, n_eev=16,
                tolerance=0.5)
    base.update(overrides)
    return SaaConfig(**base)


def float_mean(values):
    return float(np.mean(values))


def test_run_saa_degenerate_terminates_at_n0():
    cfg = SaaConfig(n0=4, m_batches=2, t_batches=2, n_eval=3, n_eev=4,
                    tolerance=1e-6)
    result = run_saa(newsvendor_family, lambda rng: 60.0, cfg, seed=1,
                     mean=float_mean)
    assert result.converged
    assert result.n_final == 4
    assert len(result.trace) == 1
    assert result.trace[0].rel_gap == pytest.approx(0.0, abs=1e-9)
    assert result.vrp_ci.lo == pytest.approx(120.0, abs=1e-7)
    assert result.vrp_ci.hi == pytest.approx(120.0, abs=1e-7)
    assert result.eev_ci.lo == pytest.approx(120.0, abs=1e-7)
    assert result.candidate[0] == pytest.approx(60.0, abs=1e-6)
    assert result.expected_solution[0] == pytest.approx(60.0, abs=1e-6)
    assert result.vss_ci is None and not result.significant


def test_run_saa_covers_the_true_optimum():
    hits = 0
    for seed in range(15):
        result = run_saa(newsvendor_family, uniform_demand, small_cfg(),
                         seed=seed, mean=float_mean)
        if result.vrp_ci.lo <= NEWSVENDOR_UNIFORM_OPTIMUM <= result.vrp_ci.hi:
            hits += 1
    assert hits >= 12


def test_run_saa_pinball_vss_is_significant():
    cfg = SaaConfig(n0=16, m_batches=4, t_batches=4, n_eval=50, n_eev=200,
                    tolerance=0.5)
    result = run_saa(pinball_family, pinball_target, cfg, seed=3,
                     mean=float_mean)
    assert result.significant and result.vss_ci is not None
    assert result.vss_ci.lo <= PINBALL_VSS <= result.vss_ci.hi
    assert result.vss_ci.lo > 20.0
    assert result.vss_ci.level == pytest.approx(0.90)
    assert result.candidate[0] == pytest.approx(60.0, abs=1e-6)
    # the mean target is itself estimated from n_eev draws of {40, 60}
    assert result.expected_solution[0] == pytest.approx(50.0, abs=3.0)
    assert result.vrp_ci.lo <= PINBALL_OPTIMUM <= result.vrp_ci.hi
    assert result.eev_ci.lo <= PINBALL_EEV <= result.eev_ci.hi


def test_run_saa_negative_gap_continues():
    # find a seed whose first iteration has upper < lower; the loop must
    # double n instead of stopping, tolerance notwithstanding
    for seed in range(40):
        result = run_saa(newsvendor_family, uniform_demand,
                         small_cfg(tolerance=0.9, n_cap=16), seed=seed,
                         mean=float_mean)
        first = result.trace[0]
        if first.upper < first.lower:
            assert len(result.trace) == 2
            assert result.trace[1].n == 2 * first.n
            return
    pytest.fail("no negative-gap seed found in the scan")


def test_run_saa_cap_stops_and_flags():
    cfg = SaaConfig(n0=8, m_batches=2, t_batches=2, n_eval=8, n_eev=8,
                    tolerance=1e-12, n_cap=16)
    result = run_saa(newsvendor_family, uniform_demand, cfg, seed=4,
                     mean=float_mean)
    assert not result.converged
    assert result.n_final == 16
    assert len(result.trace) == 2
    assert [row.n for row in result.trace] == [8, 16]


def test_run_saa_trace_file(tmp_path):
    path = tmp_path / "trace.csv"
    cfg = small_cfg()
    run_saa(newsvendor_family, uniform_demand, cfg, seed=9,
            mean=float_mean, trace_path=str(path))
    first = path.read_bytes()
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iteration", "n", "lower", "upper", "halfwidth_lower",
                       "halfwidth_upper", "rel_gap"]
    assert all(float(r[6]) >= 0.0 for r in rows[1:])
    run_saa(newsvendor_family, uniform_demand, cfg, seed=9,
            mean=float_mean, trace_path=str(path))
    assert path.read_bytes() == first


def test_run_saa_is_deterministic_in_the_seed():
    cfg = small_cfg(n_eval=16, n_eev=16)
    a = run_saa(newsvendor_family, uniform_demand, cfg, seed=5, mean=float_mean)
    b = run_saa(newsvendor_family, uniform_demand, cfg, seed=5, mean=float_mean)
    c = run_saa(newsvendor_family, uniform_demand, cfg, seed=6, mean=float_mean)
    assert a.trace == b.trace
    assert (a.vrp_ci, a.eev_ci) == (b.vrp_ci, b.eev_ci)
    assert a.trace != c.trace


def test_threaded_bounds_match_serial():
    rng_args = dict(n=8, m_batches=4)
    serial = lower_bound(newsvendor_family, uniform_demand, threads=1,
                         rng=np.random.default_rng(21), **rng_args)
    threaded = lower_bound(newsvendor_family, uniform_demand, threads=3,
                           rng=np.random.default_rng(21), **rng_args)
    assert serial.batch_values == threaded.batch_values
    u_serial = upper_bound(newsvendor_family, np.array([70.0]), uniform_demand,
                           t_batches=4, n_eval=16, threads=1,
                           rng=np.random.default_rng(22))
    u_threaded = upper_bound(newsvendor_family, np.array([70.0]), uniform_demand,
                             t_batches=4, n_eval=16, threads=3,
                             rng=np.random.default_rng(22))
    assert u_serial.batch_values == u_threaded.batch_values


def test_result_to_dict_shape():
    cfg = SaaConfig(n0=4, m_batches=2, t_batches=2, n_eval=3, n_eev=4,
                    tolerance=1e-6)
    result = run_saa(newsvendor_family, lambda rng: 60.0, cfg, seed=1,
                     mean=float_mean)
    doc = result_to_dict(result)
    assert set(doc) == {"vrp_ci", "eev_ci", "vss_ci", "significant",
                        "n_final", "converged"}
    assert doc["vss_ci"] is None
    assert doc["vrp_ci"]["level"] == pytest.approx(0.95)
