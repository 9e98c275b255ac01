"""Cohort statistics: normality screening, transforms, early/late averaging,
2-way mixed-design ANOVA, Bonferroni post-hoc, effect sizes, bootstrap CIs.

The within factor has exactly two levels (early/late trial blocks) and the
between factor two groups (experienced/novice), so the mixed ANOVA reduces
to exact contrasts on per-participant averages A = (early + late)/2 and
differences D = late - early:

* expertise: pooled two-sample comparison of A (error: subjects in groups)
* trial:     unweighted grand mean of D against zero (error: D residuals)
* interaction: pooled two-sample comparison of D

Unequal group sizes are handled by the unweighted (Type-III-equivalent)
marginals. Every effect has df (1, n_participants - 2).
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.stats import f as f_dist
from scipy.stats import norm

DEFAULT_ALPHA = 0.05
LILLIEFORS_REPS = 10_000

# Paper defaults: path length and rate of orientation change are logged;
# task time and normalized angular displacement are analyzed raw. The
# transform for A is ambiguous in the source tables, so it stays config.
DEFAULT_TRANSFORMS = {"TT": "none", "P": "log", "A": "none", "C": "log"}


class TooFewValuesError(ValueError):
    pass


class TransformInfeasibleError(ValueError):
    """Log transform requested on non-positive values."""


class UnderdeterminedDesignError(ValueError):
    """Fewer than 2 participants in an expertise group."""


def lilliefors(values, n_reps=LILLIEFORS_REPS, seed=0):
    """Normality test with estimated mean/variance; Monte-Carlo p value.

    Returns (KS statistic, p). The null distribution is simulated with
    ``n_reps`` standard-normal samples of the same size, standardized the
    same way, so the p value is exact up to Monte-Carlo error for any n.
    """
    values = np.asarray(values, dtype=float)
    n = values.size
    if n < 5:
        raise TooFewValuesError(f"lilliefors needs >= 5 values, got {n}")
    stat = _ks_statistic_standardized(np.sort(values))
    null = _lilliefors_null(n, n_reps, seed)
    p = (np.sum(null >= stat) + 1.0) / (n_reps + 1.0)
    return float(stat), float(p)


def _ks_statistic_standardized(sorted_values):
    n = sorted_values.shape[-1]
    mean = np.mean(sorted_values, axis=-1, keepdims=True)
    std = np.std(sorted_values, axis=-1, ddof=1, keepdims=True)
    cdf = norm.cdf((sorted_values - mean) / std)
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - cdf, axis=-1)
    d_minus = np.max(cdf - (i - 1) / n, axis=-1)
    return np.maximum(d_plus, d_minus)


@lru_cache(maxsize=64)
def _lilliefors_null(n, n_reps, seed):
    rng = np.random.default_rng(seed)
    draws = np.sort(rng.standard_normal((n_reps, n)), axis=1)
    return _ks_statistic_standardized(draws)


def apply_transform(values, transform):
    values = np.asarray(values, dtype=float)
    if transform == "none":
        return values
    if transform == "log":
        if np.any(values[np.isfinite(values)] <= 0):
            raise TransformInfeasibleError("log transform on non-positive values")
        return np.log(values)
    raise ValueError(f"unknown transform {transform!r}")


def recommend_transform(cells, alpha=DEFAULT_ALPHA, seed=0):
    """Advisory transform choice from cell residual normality.

    Recommends "log" when the pooled raw residuals reject normality and the
    log residuals do not; "none" otherwise. The analysis config always
    fixes the transform explicitly; this is a screening aid.
    """
    raw = np.concatenate([np.asarray(c, dtype=float) - np.mean(c) for c in cells])
    _, p_raw = lilliefors(raw, seed=seed)
    if p_raw >= alpha:
        return "none"
    try:
        logged = [apply_transform(c, "log") for c in cells]
    except TransformInfeasibleError:
        return "none"
    log_res = np.concatenate([c - np.mean(c) for c in logged])
    _, p_log = lilliefors(log_res, seed=seed)
    return "log" if p_log >= alpha else "none"


def early_late(values_by_trial, window=10, n_trials=80):
    """Early/late window means over valid trials.

    ``values_by_trial`` maps trial_number -> value; excluded/removed trials
    are simply absent. Windows are defined by trial number (first/last
    ``window`` numbers of the session). Returns (early, late); either is
    None when its window holds no valid trial.
    """
    early = [v for tn, v in values_by_trial.items() if tn <= window and np.isfinite(v)]
    late = [v for tn, v in values_by_trial.items()
            if tn > n_trials - window and np.isfinite(v)]
    e = float(np.mean(early)) if early else None
    l = float(np.mean(late)) if late else None
    return e, l


@dataclass
class EffectStat:
    f: float
    p: float
    df_num: int
    df_den: int


@dataclass
class PostHocComparison:
    label: str
    mean_difference: float
    p: float
    p_adjusted: float
    significant: bool


@dataclass
class AnovaResult:
    expertise: EffectStat
    trial: EffectStat
    interaction: EffectStat
    transform: str = "none"
    effect_sizes: dict = field(default_factory=dict)
    post_hoc: list = field(default_factory=list)
    n_per_group: dict = field(default_factory=dict)


def _pooled_two_sample(x1, x2):
    """Pooled-variance two-sample F (= t^2) and the standard error parts."""
    n1, n2 = len(x1), len(x2)
    df = n1 + n2 - 2
    ss = np.sum((x1 - np.mean(x1)) ** 2) + np.sum((x2 - np.mean(x2)) ** 2)
    pooled_var = ss / df
    se2 = pooled_var * (1.0 / n1 + 1.0 / n2)
    diff = np.mean(x1) - np.mean(x2)
    return diff, se2, df


def _f_and_p(numerator, se2, df):
    if se2 <= 0.0:
        if numerator == 0.0:
            return 0.0, 1.0
        return np.inf, 0.0
    f = numerator / se2
    return float(f), float(f_dist.sf(f, 1, df))


def mixed_anova_2x2(early_exp, late_exp, early_nov, late_nov):
    """2-way mixed ANOVA: expertise (between) x trial block (within).

    Arguments are per-participant value arrays on the analysis scale.
    """
    early_exp, late_exp, early_nov, late_nov = (
        np.asarray(a, dtype=float) for a in (early_exp, late_exp, early_nov, late_nov)
    )
    n1, n2 = len(early_exp), len(early_nov)
    if n1 < 2 or n2 < 2:
        raise UnderdeterminedDesignError(
            f"need >= 2 participants per group, got {n1} and {n2}"
        )
    avg1 = 0.5 * (early_exp + late_exp)
    avg2 = 0.5 * (early_nov + late_nov)
    dif1 = late_exp - early_exp
    dif2 = late_nov - early_nov

    diff_a, se2_a, df = _pooled_two_sample(avg1, avg2)
    f_exp, p_exp = _f_and_p(diff_a**2, se2_a, df)

    # Unweighted grand mean of the within-subject differences (Type III).
    diff_d, se2_d, _ = _pooled_two_sample(dif1, dif2)
    grand_d = 0.5 * (np.mean(dif1) + np.mean(dif2))
    f_trial, p_trial = _f_and_p(grand_d**2, se2_d / 4.0, df)
    f_int, p_int = _f_and_p(diff_d**2, se2_d, df)

    return AnovaResult(
        expertise=EffectStat(f_exp, p_exp, 1, df),
        trial=EffectStat(f_trial, p_trial, 1, df),
        interaction=EffectStat(f_int, p_int, 1, df),
        n_per_group={"experienced": n1, "novice": n2},
    )


def bonferroni(p_values, m=None, alpha=DEFAULT_ALPHA):
    """Bonferroni-adjusted decisions: significant iff p < alpha/m."""
    p_values = np.asarray(p_values, dtype=float)
    if m is None:
        m = p_values.size
    if m < 1:
        raise ValueError("need at least one comparison")
    adjusted = np.minimum(1.0, m * p_values)
    return adjusted, p_values < alpha / m


def effect_sizes(early_exp, late_exp, early_nov, late_nov, interaction_significant=False):
    """Mean differences on the analysis scale, mirroring the report layout.

    Main effects are differences of unweighted marginal means (Exp.-Nov.,
    Late-Early); simple effects per cell are added when the interaction is
    significant.
    """
    early_exp, late_exp, early_nov, late_nov = (
        np.asarray(a, dtype=float) for a in (early_exp, late_exp, early_nov, late_nov)
    )
    cells = {
        ("experienced", "early"): np.mean(early_exp),
        ("experienced", "late"): np.mean(late_exp),
        ("novice", "early"): np.mean(early_nov),
        ("novice", "late"): np.mean(late_nov),
    }
    out = {
        "exp_minus_nov": 0.5 * (cells[("experienced", "early")] + cells[("experienced", "late")])
        - 0.5 * (cells[("novice", "early")] + cells[("novice", "late")]),
        "late_minus_early": 0.5 * (cells[("experienced", "late")] + cells[("novice", "late")])
        - 0.5 * (cells[("experienced", "early")] + cells[("novice", "early")]),
    }
    if interaction_significant:
        out.update(
            {
                "exp_minus_nov_early": cells[("experienced", "early")] - cells[("novice", "early")],
                "exp_minus_nov_late": cells[("experienced", "late")] - cells[("novice", "late")],
                "late_minus_early_exp": cells[("experienced", "late")] - cells[("experienced", "early")],
                "late_minus_early_nov": cells[("novice", "late")] - cells[("novice", "early")],
            }
        )
    return {k: float(v) for k, v in out.items()}


def post_hoc_comparisons(early_exp, late_exp, early_nov, late_nov, alpha=DEFAULT_ALPHA):
    """Pairwise cell-mean comparisons with pooled error, Bonferroni adjusted.

    Between-group contrasts within each trial block use the subject
    averages' pooled error; within-group contrasts use the difference
    scores of that group.
    """
    early_exp, late_exp, early_nov, late_nov = (
        np.asarray(a, dtype=float) for a in (early_exp, late_exp, early_nov, late_nov)
    )
    comparisons = []

    def between(label, a, b):
        diff, se2, df = _pooled_two_sample(a, b)
        f, p = _f_and_p(diff**2, se2, df)
        comparisons.append((label, float(diff), p))

    def within(label, d):
        n = len(d)
        mean = np.mean(d)
        se2 = np.var(d, ddof=1) / n if n > 1 else 0.0
        f, p = _f_and_p(mean**2, se2, n - 1)
        comparisons.append((label, float(mean), p))

    between("exp_minus_nov_early", early_exp, early_nov)
    between("exp_minus_nov_late", late_exp, late_nov)
    within("late_minus_early_exp", late_exp - early_exp)
    within("late_minus_early_nov", late_nov - early_nov)

    ps = [c[2] for c in comparisons]
    adjusted, significant = bonferroni(ps, alpha=alpha)
    return [
        PostHocComparison(label, diff, p, float(pa), bool(sig))
        for (label, diff, p), pa, sig in zip(comparisons, adjusted, significant)
    ]


def bootstrap_ci(values, level=0.95, n_boot=1000, seed=0):
    """Seeded percentile bootstrap CI for the mean."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise TooFewValuesError("bootstrap needs at least 2 values")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, values.size, size=(n_boot, values.size))
    means = np.mean(values[idx], axis=1)
    lo, hi = np.percentile(means, [(1 - level) / 2 * 100, (1 + level) / 2 * 100])
    return float(lo), float(hi)
