"""Cohort statistics: normality, transforms, mixed ANOVA, bootstrap."""

import numpy as np
import pytest
from scipy.stats import norm

from anova_oracle import mixed_anova_oracle
from needlemetrics.stats import (
    TooFewValuesError,
    TransformInfeasibleError,
    UnderdeterminedDesignError,
    apply_transform,
    bonferroni,
    bootstrap_ci,
    early_late,
    effect_sizes,
    lilliefors,
    mixed_anova_2x2,
    post_hoc_comparisons,
    recommend_transform,
)


def _normal_quantiles(n=50):
    return norm.ppf(np.arange(1, n + 1) / (n + 1))


class TestLilliefors:
    def test_normal_quantiles_not_rejected(self):
        _, p = lilliefors(_normal_quantiles())
        assert p > 0.05

    def test_lognormal_rejected(self):
        _, p = lilliefors(np.exp(_normal_quantiles()))
        assert p < 0.05

    def test_too_few_values(self):
        with pytest.raises(TooFewValuesError):
            lilliefors([1.0, 2.0, 3.0])

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(1)
        values = rng.normal(size=40)
        assert lilliefors(values, seed=7) == lilliefors(values, seed=7)


class TestTransforms:
    def test_log_on_nonpositive_infeasible(self):
        with pytest.raises(TransformInfeasibleError):
            apply_transform([1.0, 0.0, 2.0], "log")

    def test_log_applied(self):
        out = apply_transform([1.0, np.e], "log")
        assert np.allclose(out, [0.0, 1.0])

    def test_recommend_log_for_lognormal_cells(self):
        rng = np.random.default_rng(2)
        cells = [np.exp(rng.normal(0, 1.2, size=60)) for _ in range(4)]
        assert recommend_transform(cells) == "log"

    def test_recommend_none_for_normal_cells(self):
        rng = np.random.default_rng(3)
        cells = [rng.normal(10, 1, size=60) for _ in range(4)]
        assert recommend_transform(cells) == "none"


class TestEarlyLate:
    def test_trial_number_arithmetic(self):
        values = {tn: float(tn) for tn in range(1, 81)}
        assert early_late(values) == (5.5, 75.5)

    def test_exclusions_shrink_the_window(self):
        values = {tn: float(tn) for tn in range(1, 81) if tn not in (3, 7)}
        early, late = early_late(values)
        expect = np.mean([1, 2, 4, 5, 6, 8, 9, 10])
        assert early == expect
        assert late == 75.5

    def test_empty_window_flagged(self):
        values = {tn: float(tn) for tn in range(11, 81)}
        early, late = early_late(values)
        assert early is None
        assert late == 75.5


class TestMixedAnova:
    def test_paper_shaped_cohort_df(self):
        rng = np.random.default_rng(4)
        res = mixed_anova_2x2(
            rng.normal(size=6), rng.normal(size=6),
            rng.normal(size=9), rng.normal(size=9),
        )
        for eff in (res.expertise, res.trial, res.interaction):
            assert (eff.df_num, eff.df_den) == (1, 13)

    def test_all_equal_cells(self):
        ones = np.ones(5)
        res = mixed_anova_2x2(ones, ones, ones, ones)
        for eff in (res.expertise, res.trial, res.interaction):
            assert eff.f == 0.0 and eff.p == 1.0

    def test_underdetermined_group(self):
        with pytest.raises(UnderdeterminedDesignError):
            mixed_anova_2x2([1.0], [2.0], [1.0, 2.0], [2.0, 3.0])

    def test_matches_sums_of_squares_oracle(self):
        rng = np.random.default_rng(10)
        for _ in range(60):
            n1 = int(rng.integers(2, 9))
            n2 = int(rng.integers(2, 9))
            cells = [rng.normal(rng.normal(0, 2), rng.uniform(0.5, 2), size=n)
                     for n in (n1, n1, n2, n2)]
            res = mixed_anova_2x2(*cells)
            oracle = mixed_anova_oracle(*cells)
            for name, eff in (("expertise", res.expertise), ("trial", res.trial),
                              ("interaction", res.interaction)):
                f_o, p_o = oracle[name]
                assert abs(eff.f - f_o) < 1e-9 * max(1.0, f_o), name
                assert abs(eff.p - p_o) < 1e-9, name
            assert oracle["df"] == (1, res.expertise.df_den)

    def test_shift_and_scale_invariance(self):
        rng = np.random.default_rng(11)
        cells = [rng.normal(size=6) for _ in range(4)]
        base = mixed_anova_2x2(*cells)
        moved = mixed_anova_2x2(*[3.7 * c + 11.0 for c in cells])
        for a, b in zip((base.expertise, base.trial, base.interaction),
                        (moved.expertise, moved.trial, moved.interaction)):
            assert abs(a.f - b.f) < 1e-9 * max(1.0, a.f)

    def test_within_label_swap(self):
        rng = np.random.default_rng(12)
        e1, l1, e2, l2 = (rng.normal(size=7) for _ in range(4))
        base = mixed_anova_2x2(e1, l1, e2, l2)
        swapped = mixed_anova_2x2(l1, e1, l2, e2)
        for a, b in zip((base.expertise, base.trial, base.interaction),
                        (swapped.expertise, swapped.trial, swapped.interaction)):
            assert abs(a.f - b.f) < 1e-9 * max(1.0, a.f)
        es = effect_sizes(e1, l1, e2, l2)
        es_swapped = effect_sizes(l1, e1, l2, e2)
        assert abs(es["late_minus_early"] + es_swapped["late_minus_early"]) < 1e-12
        assert abs(es["exp_minus_nov"] - es_swapped["exp_minus_nov"]) < 1e-12


class TestBonferroni:
    def test_single_comparison(self):
        adjusted, sig = bonferroni([0.04])
        assert sig[0]
        assert adjusted[0] == 0.04

    def test_four_comparisons_not_significant(self):
        _, sig = bonferroni([0.04], m=4)
        assert not sig[0]

    def test_adjusted_value(self):
        adjusted, sig = bonferroni([0.002], m=4)
        assert sig[0]
        assert abs(adjusted[0] - 0.008) < 1e-12


class TestEffectSizes:
    def test_marginal_difference_format_parity(self):
        exp = np.full(6, 1.0)
        nov = np.full(9, 1.714)
        es = effect_sizes(exp, exp, nov, nov)
        assert abs(es["exp_minus_nov"] - (-0.714)) < 1e-12

    def test_identical_groups_zero(self):
        g = np.arange(5.0)
        es = effect_sizes(g, g, g, g, interaction_significant=True)
        assert es["exp_minus_nov"] == 0.0
        assert es["late_minus_early"] == 0.0
        assert es["late_minus_early_exp"] == 0.0

    def test_injected_late_shift(self):
        rng = np.random.default_rng(13)
        early = rng.normal(5.0, 0.05, size=8)
        late = early + 0.3 + rng.normal(0, 0.05, size=8)
        es = effect_sizes(early, late, early, late)
        assert abs(es["late_minus_early"] - 0.3) < 0.1

    def test_simple_effects_only_with_interaction(self):
        g = np.arange(5.0)
        assert "exp_minus_nov_early" not in effect_sizes(g, g, g, g)
        assert "exp_minus_nov_early" in effect_sizes(
            g, g, g, g, interaction_significant=True
        )


class TestPostHoc:
    def test_four_labelled_comparisons(self):
        rng = np.random.default_rng(14)
        comps = post_hoc_comparisons(*[rng.normal(size=6) for _ in range(4)])
        labels = [c.label for c in comps]
        assert labels == [
            "exp_minus_nov_early", "exp_minus_nov_late",
            "late_minus_early_exp", "late_minus_early_nov",
        ]
        for c in comps:
            assert 0.0 <= c.p <= 1.0
            assert c.p_adjusted >= c.p

    def test_strong_separation_significant(self):
        exp = np.zeros(6)
        nov = np.full(9, 5.0)
        rng = np.random.default_rng(15)
        comps = post_hoc_comparisons(
            exp + rng.normal(0, 0.1, 6), exp + rng.normal(0, 0.1, 6),
            nov + rng.normal(0, 0.1, 9), nov + rng.normal(0, 0.1, 9),
        )
        by_label = {c.label: c for c in comps}
        assert by_label["exp_minus_nov_early"].significant
        assert by_label["exp_minus_nov_late"].significant


class TestBootstrap:
    def test_identical_values(self):
        assert bootstrap_ci([3.0, 3.0, 3.0]) == (3.0, 3.0)

    def test_two_values_contained(self):
        lo, hi = bootstrap_ci([0.0, 1.0], n_boot=5000)
        assert 0.0 <= lo <= hi <= 1.0

    def test_bounds_within_range(self):
        rng = np.random.default_rng(16)
        values = rng.normal(size=30)
        lo, hi = bootstrap_ci(values)
        assert values.min() <= lo <= hi <= values.max()

    def test_too_few_values(self):
        with pytest.raises(TooFewValuesError):
            bootstrap_ci([1.0])

    def test_coverage_band(self):
        # 500 seeded repetitions of a 95% CI for the mean of 1000 normal
        # draws: coverage must land in the 93%-97% band.
        rng = np.random.default_rng(17)
        hits = 0
        reps = 500
        for rep in range(reps):
            values = rng.normal(2.0, 1.0, size=1000)
            lo, hi = bootstrap_ci(values, n_boot=1000, seed=rep)
            hits += lo <= 2.0 <= hi
        assert 0.93 * reps <= hits <= 0.97 * reps
