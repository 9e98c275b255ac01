"""Stage orchestration: ingest -> segment -> metrics -> stats -> report.

Every stage consumes the previous stage's files and can be run on its own;
re-running a stage with unchanged inputs rewrites byte-identical outputs.
Per-trial soft failures (exclusions, segmentation failures, empty early/late
windows) go to ``diagnostics.csv`` instead of aborting the cohort.
"""

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pandas as pd

from needlemetrics import segmentation, stats
from needlemetrics.ingest import (
    CalibrationModel,
    PreprocessConfig,
    Trial,
    calibrate_endpoint,
    load_manifest,
    load_trial,
    preprocess,
)
from needlemetrics.metrics import (
    METRIC_COLUMNS,
    compute_trial_metrics,
    record_row,
    remove_outlier_segments,
)

METRIC_KEYS = {"TT": "TT_s", "P": "P_mm", "A": "A_rad_per_mm", "C": "C_rad_per_s"}
SEGMENTS = ("I", "II")
GROUPS = ("experienced", "novice")


class PipelineError(RuntimeError):
    """Hard error: missing artifacts, unusable inputs."""


def _cache_dir(config):
    return os.path.join(config.out_dir, "cache")


def _require(path, producer):
    if not os.path.exists(path):
        raise PipelineError(
            f"missing artifact {path}; run `needlemetrics {producer}` first"
        )
    return path


def _fmt(value):
    return f"{value:.9g}"


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _write_diagnostics(out_dir, stage, entries):
    """Merge this stage's diagnostics into the shared file, keyed by stage."""
    path = os.path.join(out_dir, "diagnostics.csv")
    rows = []
    if os.path.exists(path):
        with open(path, newline="") as fh:
            rows = [r for r in list(csv.reader(fh))[1:] if r and r[1] != stage]
    rows += [[trial_id, stage, reason] for trial_id, reason in entries]
    rows.sort()
    _write_csv(path, ["trial_id", "stage", "reason"], rows)


def _map_jobs(fn, items, jobs):
    if jobs <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------- ingest


def _load_calibration(config):
    if not config.calibration:
        raise PipelineError("open-condition run needs a calibration file")
    if config.calibration.endswith(".json"):
        with open(config.calibration) as fh:
            return CalibrationModel.from_dict(json.load(fh))
    frames = load_trial(config.calibration, "open")
    return calibrate_endpoint(frames)


def _ingest_one(task):
    meta, path, condition, rate, cutoff, calib_dict, cache = task
    raw = load_trial(path, condition)
    calib = CalibrationModel.from_dict(calib_dict) if calib_dict else None
    pcfg = PreprocessConfig(resample_rate=rate, position_cutoff_hz=cutoff)
    trial = preprocess(raw, condition, pcfg, calib=calib)
    arrays = {"t": trial.t, "x": trial.x, "v": trial.v, "q": trial.q, "phi": trial.phi}
    if condition == "open":
        arrays["q_right"] = trial.q_right
        arrays["q_left"] = trial.q_left
    np.savez(os.path.join(cache, f"{meta['trial_id']}.npz"), **arrays)
    return meta


def stage_ingest(config):
    refs = [r for r in load_manifest(config.manifest) if r.condition == config.condition]
    if not refs:
        raise PipelineError(
            f"manifest {config.manifest} holds no {config.condition} trials"
        )
    cache = _cache_dir(config)
    os.makedirs(cache, exist_ok=True)

    calib_dict = None
    if config.condition == "open":
        model = _load_calibration(config)
        calib_dict = model.to_dict()
        with open(os.path.join(config.out_dir, "calibration.json"), "w") as fh:
            json.dump(calib_dict, fh, indent=1, sort_keys=True)

    diagnostics = []
    tasks = []
    base = os.path.dirname(os.path.abspath(config.manifest))
    for ref in sorted(refs, key=lambda r: r.trial_id):
        if ref.excluded:
            diagnostics.append((ref.trial_id, ref.exclusion_reason or "excluded"))
            continue
        path = ref.path if os.path.isabs(ref.path) else os.path.join(base, ref.path)
        meta = {
            "trial_id": ref.trial_id,
            "participant_id": ref.participant_id,
            "expertise": ref.expertise,
            "condition": ref.condition,
            "trial_number": ref.trial_number,
        }
        tasks.append((meta, path, config.condition, config.resample_rate,
                      config.position_cutoff_hz, calib_dict, cache))
    index = _map_jobs(_ingest_one, tasks, config.jobs)
    with open(os.path.join(cache, "index.json"), "w") as fh:
        json.dump(index, fh, indent=1, sort_keys=True)
    _write_diagnostics(config.out_dir, "ingest", diagnostics)
    return index


def load_cache_index(config):
    path = _require(os.path.join(_cache_dir(config), "index.json"), "ingest")
    with open(path) as fh:
        return json.load(fh)


def load_cached_trial(config, meta):
    path = _require(
        os.path.join(_cache_dir(config), f"{meta['trial_id']}.npz"), "ingest"
    )
    data = np.load(path)
    return Trial(
        trial_id=meta["trial_id"],
        participant_id=meta["participant_id"],
        expertise=meta["expertise"],
        condition=meta["condition"],
        trial_number=meta["trial_number"],
        t=data["t"], x=data["x"], v=data["v"], q=data["q"], phi=data["phi"],
        rate=config.resample_rate,
        q_right=data["q_right"] if "q_right" in data else None,
        q_left=data["q_left"] if "q_left" in data else None,
    )


# --------------------------------------------------------------- segment


def _segment_one(args):
    config, meta, overrides = args
    trial = load_cached_trial(config, meta)
    if trial.condition == "teleoperated":
        bounds = segmentation.segment_teleoperated(trial, config.segmentation)
    else:
        bounds = segmentation.segment_open(trial, config.segmentation)
    bounds = segmentation.apply_overrides(trial, bounds, overrides)
    return [
        trial.trial_id,
        "" if bounds.j1 is None else _fmt(trial.t[bounds.j1]),
        "" if bounds.j2 is None else _fmt(trial.t[bounds.j2]),
        bounds.source,
        bounds.failure_reason,
    ]


def stage_segment(config):
    index = load_cache_index(config)
    overrides = {}
    if config.overrides:
        overrides = segmentation.load_overrides(config.overrides)
        segmentation.check_override_ids(overrides, [m["trial_id"] for m in index])
    rows = _map_jobs(
        _segment_one, [(config, meta, overrides) for meta in index], config.jobs
    )
    rows.sort()
    _write_csv(
        os.path.join(config.out_dir, "segmentation.csv"),
        ["trial_id", "j1_time_s", "j2_time_s", "source", "failure_reason"],
        rows,
    )
    _write_diagnostics(
        config.out_dir, "segment",
        [(r[0], r[4]) for r in rows if not (r[1] and r[2])],
    )
    return rows


# --------------------------------------------------------------- metrics


def _metrics_one(args):
    config, meta, t1, t2 = args
    trial = load_cached_trial(config, meta)
    j1 = int(np.rint((t1 - trial.t[0]) * trial.rate))
    j2 = int(np.rint((t2 - trial.t[0]) * trial.rate))
    bounds = segmentation.SegmentBoundaries(j1, j2)
    return compute_trial_metrics(trial, bounds)


def stage_metrics(config):
    index = {m["trial_id"]: m for m in load_cache_index(config)}
    seg_path = _require(os.path.join(config.out_dir, "segmentation.csv"), "segment")
    seg = pd.read_csv(seg_path, dtype={"trial_id": str}, keep_default_na=False)

    tasks = []
    diagnostics = []
    for row in seg.itertuples():
        if not (row.j1_time_s and row.j2_time_s):
            diagnostics.append(
                (row.trial_id, f"segmentation failed: {row.failure_reason}")
            )
            continue
        tasks.append(
            (config, index[row.trial_id], float(row.j1_time_s), float(row.j2_time_s))
        )
    record_lists = _map_jobs(_metrics_one, tasks, config.jobs)
    records = [rec for records in record_lists for rec in records]
    removed = remove_outlier_segments(records, config.outlier_multiplier)
    diagnostics += [
        (rec.trial_id, f"outlier segment {rec.segment} removed") for rec in removed
    ]
    records.sort(key=lambda r: (r.trial_id, r.segment))
    _write_csv(
        os.path.join(config.out_dir, "metrics.csv"),
        METRIC_COLUMNS,
        [record_row(rec) for rec in records],
    )
    _write_diagnostics(config.out_dir, "metrics", diagnostics)
    return records


# ----------------------------------------------------------------- stats


def _load_metrics_frame(config):
    path = _require(os.path.join(config.out_dir, "metrics.csv"), "metrics")
    return pd.read_csv(path)


def _effect_dict(eff):
    return {"f": eff.f, "p": eff.p, "df": [eff.df_num, eff.df_den]}


def _cohort_cells(frame, config, metric, segment):
    """Per-group early/late arrays on the analysis scale, plus diagnostics."""
    key = METRIC_KEYS[metric]
    transform = config.transforms[metric]
    sub = frame[(frame["segment"] == segment) & (~frame["outlier_removed"])]
    cells = {g: {"early": [], "late": []} for g in GROUPS}
    flagged = []
    for (participant, expertise), grp in sub.groupby(["participant_id", "expertise"]):
        values = {}
        for row in grp.itertuples():
            value = getattr(row, key)
            if not np.isfinite(value):
                continue
            values[int(row.trial_number)] = stats.apply_transform([value], transform)[0]
        early, late = stats.early_late(
            values, window=config.early_late_window, n_trials=config.n_trials
        )
        if early is None or late is None:
            which = "early" if early is None else "late"
            flagged.append(
                (participant, f"{metric} segment {segment}: empty {which} window")
            )
            continue
        cells[expertise]["early"].append(early)
        cells[expertise]["late"].append(late)
    return cells, flagged


def stage_stats(config):
    frame = _load_metrics_frame(config)
    report = {
        "condition": config.condition,
        "alpha": config.alpha,
        "metrics": {},
    }
    diagnostics = []
    for metric in METRIC_KEYS:
        report["metrics"][metric] = {}
        for segment in SEGMENTS:
            try:
                cells, flagged = _cohort_cells(frame, config, metric, segment)
            except stats.TransformInfeasibleError as exc:
                report["metrics"][metric][segment] = {"error": str(exc)}
                continue
            diagnostics += flagged
            args = [
                np.asarray(cells["experienced"]["early"]),
                np.asarray(cells["experienced"]["late"]),
                np.asarray(cells["novice"]["early"]),
                np.asarray(cells["novice"]["late"]),
            ]
            try:
                anova = stats.mixed_anova_2x2(*args)
            except stats.UnderdeterminedDesignError as exc:
                report["metrics"][metric][segment] = {"error": str(exc)}
                continue
            interaction_sig = anova.interaction.p < config.alpha
            entry = {
                "transform": config.transforms[metric],
                "n_per_group": anova.n_per_group,
                "anova": {
                    "expertise": _effect_dict(anova.expertise),
                    "trial": _effect_dict(anova.trial),
                    "interaction": _effect_dict(anova.interaction),
                },
                "effect_sizes": stats.effect_sizes(
                    *args, interaction_significant=interaction_sig
                ),
                "post_hoc": [
                    {
                        "comparison": c.label,
                        "mean_difference": c.mean_difference,
                        "p": c.p,
                        "p_adjusted": c.p_adjusted,
                        "significant": c.significant,
                    }
                    for c in stats.post_hoc_comparisons(*args, alpha=config.alpha)
                ],
            }
            report["metrics"][metric][segment] = entry
    with open(os.path.join(config.out_dir, "stats.json"), "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    _write_diagnostics(config.out_dir, "stats", sorted(set(diagnostics)))
    return report


# ---------------------------------------------------------------- report


def stage_report(config):
    frame = _load_metrics_frame(config)
    written = []
    for mi, (metric, key) in enumerate(METRIC_KEYS.items()):
        for si, segment in enumerate(SEGMENTS):
            sub = frame[(frame["segment"] == segment) & (~frame["outlier_removed"])]
            rows = []
            for trial_number in sorted(sub["trial_number"].unique()):
                at = sub[sub["trial_number"] == trial_number]
                for gi, group in enumerate(GROUPS):
                    values = at[at["expertise"] == group][key].dropna().to_numpy()
                    if values.size == 0:
                        continue
                    mean = float(np.mean(values))
                    if values.size < 2:
                        lo = hi = mean
                    else:
                        lo, hi = stats.bootstrap_ci(
                            values, n_boot=config.bootstrap_b,
                            seed=[config.seed, mi, si, gi, int(trial_number)],
                        )
                    rows.append(
                        [int(trial_number), group, _fmt(mean), _fmt(lo), _fmt(hi)]
                    )
            path = os.path.join(
                config.out_dir, f"learning_curve_{metric}_{segment}.csv"
            )
            _write_csv(path, ["trial_number", "group", "mean", "ci_lo", "ci_hi"], rows)
            written.append(path)

    rows = []
    for metric, key in METRIC_KEYS.items():
        for segment in SEGMENTS:
            sub = frame[(frame["segment"] == segment) & (~frame["outlier_removed"])]
            for (participant, expertise), grp in sub.groupby(
                ["participant_id", "expertise"]
            ):
                values = {
                    int(r.trial_number): getattr(r, key)
                    for r in grp.itertuples()
                    if np.isfinite(getattr(r, key))
                }
                early, late = stats.early_late(
                    values, window=config.early_late_window, n_trials=config.n_trials
                )
                rows.append([
                    participant, expertise, metric, segment,
                    "" if early is None else _fmt(early),
                    "" if late is None else _fmt(late),
                ])
    rows.sort()
    path = os.path.join(config.out_dir, "early_late.csv")
    _write_csv(
        path,
        ["participant_id", "expertise", "metric", "segment", "early", "late"],
        rows,
    )
    written.append(path)
    return written


def run_pipeline(config):
    """All stages in order; returns the stats report."""
    os.makedirs(config.out_dir, exist_ok=True)
    stage_ingest(config)
    stage_segment(config)
    stage_metrics(config)
    report = stage_stats(config)
    stage_report(config)
    return report
