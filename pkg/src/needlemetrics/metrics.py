"""Per-segment skill metrics and the cohort-level outlier rule.

Four metrics per (trial, segment): task time, path length, normalized
angular displacement (rad/mm), and rate of orientation change (rad/s).
Open-condition trials carry two tracker orientation streams; the one with
the smaller total angular displacement over the segment feeds both
orientation metrics (finger-contact disturbances inflate the other).
"""

from dataclasses import dataclass, field

import numpy as np

from needlemetrics import backend, rotations

OUTLIER_MULTIPLIER = 35.0

SEGMENT_I = "I"
SEGMENT_II = "II"


class DegenerateSegmentError(ValueError):
    """Segment holds too few samples for the requested metric."""


class UndefinedMetricError(ValueError):
    """Metric has no defined value (e.g. zero path length)."""


@dataclass
class MetricRecord:
    trial_id: str
    participant_id: str
    expertise: str
    condition: str
    trial_number: int
    segment: str               # I | II
    task_time_s: float
    path_length_mm: float
    angular_displacement_rad_per_mm: float | None
    orientation_rate_rad_per_s: float
    tracker_used: str          # right | left | n/a
    outlier_removed: bool = False
    seg_source: str = "auto"
    dtheta: np.ndarray = field(default=None, repr=False)  # consecutive-pair angles


def task_time(t_start, t_end):
    """Elapsed time of a segment."""
    tt = float(t_end - t_start)
    if tt <= 0:
        raise DegenerateSegmentError(f"degenerate segment: duration {tt} s")
    return tt


def path_length(x):
    """Accumulated distance over consecutive position pairs, in mm."""
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        raise DegenerateSegmentError("path length needs at least 2 samples")
    return backend.path_length(x)


def angular_displacement_normalized(dtheta, p):
    """Total angular displacement divided by path length, rad/mm."""
    if len(dtheta) < 1:
        raise DegenerateSegmentError("angular displacement needs at least 2 samples")
    if p <= 0:
        raise UndefinedMetricError("normalized angular displacement undefined at P = 0")
    return float(np.sum(np.abs(dtheta)) / p)


def orientation_change_rate(dtheta, dt):
    """Mean per-pair angular change rate, rad/s."""
    if len(dtheta) < 1:
        raise DegenerateSegmentError("orientation rate needs at least 2 samples")
    return float(np.mean(dtheta / dt))


def select_tracker(trial, lo, hi):
    """Pick the tracker with the smaller angular displacement over [lo, hi].

    Returns (name, dtheta stream). Right wins exact ties so the choice is
    deterministic. Teleoperated trials have a single stream ("n/a").
    """
    if trial.condition != "open":
        return "n/a", rotations.rel_angle_stream(trial.q[lo: hi + 1])
    if trial.q_right is None or trial.q_left is None:
        raise ValueError(f"{trial.trial_id}: missing tracker orientation stream")
    d_right = rotations.rel_angle_stream(trial.q_right[lo: hi + 1])
    d_left = rotations.rel_angle_stream(trial.q_left[lo: hi + 1])
    if np.sum(d_left) < np.sum(d_right):
        return "left", d_left
    return "right", d_right


def segment_ranges(trial, boundaries):
    """Sample index ranges (inclusive) for segments I and II."""
    return {
        SEGMENT_I: (0, boundaries.j1),
        SEGMENT_II: (boundaries.j1, boundaries.j2),
    }


def compute_trial_metrics(trial, boundaries):
    """Metric records for segments I and II of one segmented trial."""
    if boundaries.failed:
        raise ValueError(f"{trial.trial_id}: cannot compute metrics on failed segmentation")
    records = []
    dt = 1.0 / trial.rate
    for segment, (lo, hi) in segment_ranges(trial, boundaries).items():
        if hi - lo < 1:
            raise DegenerateSegmentError(
                f"{trial.trial_id} segment {segment}: fewer than 2 samples"
            )
        tracker, dtheta = select_tracker(trial, lo, hi)
        p = path_length(trial.x[lo: hi + 1])
        try:
            a = angular_displacement_normalized(dtheta, p)
        except UndefinedMetricError:
            a = None
        records.append(
            MetricRecord(
                trial_id=trial.trial_id,
                participant_id=trial.participant_id,
                expertise=trial.expertise,
                condition=trial.condition,
                trial_number=trial.trial_number,
                segment=segment,
                task_time_s=task_time(trial.t[lo], trial.t[hi]),
                path_length_mm=p,
                angular_displacement_rad_per_mm=a,
                orientation_rate_rad_per_s=orientation_change_rate(dtheta, dt),
                tracker_used=tracker,
                seg_source=boundaries.source,
                dtheta=dtheta,
            )
        )
    return records


def remove_outlier_segments(records, multiplier=OUTLIER_MULTIPLIER):
    """Flag trial-segments containing an outlier consecutive-pair angle.

    For each (participant, condition, segment) group, the mean is taken
    over all pair angles pooled across the participant's trials; any
    segment containing an angle above ``multiplier`` times that mean is
    removed from analysis (flagged, not deleted). Returns the list of
    flagged records.
    """
    groups = {}
    for rec in records:
        groups.setdefault(
            (rec.participant_id, rec.condition, rec.segment), []
        ).append(rec)
    removed = []
    for recs in groups.values():
        pooled = np.concatenate([r.dtheta for r in recs])
        if pooled.size == 0:
            continue
        mean = np.mean(pooled)
        if mean <= 0:
            continue
        for rec in recs:
            if np.max(rec.dtheta) > multiplier * mean:
                rec.outlier_removed = True
                removed.append(rec)
    return removed


METRIC_COLUMNS = [
    "trial_id", "participant_id", "expertise", "condition", "trial_number",
    "segment", "TT_s", "P_mm", "A_rad_per_mm", "C_rad_per_s",
    "tracker_used", "outlier_removed", "seg_source",
]


def record_row(rec):
    """One metrics-CSV row for a record."""
    return [
        rec.trial_id, rec.participant_id, rec.expertise, rec.condition,
        rec.trial_number, rec.segment,
        f"{rec.task_time_s:.9g}",
        f"{rec.path_length_mm:.9g}",
        "" if rec.angular_displacement_rad_per_mm is None
        else f"{rec.angular_displacement_rad_per_mm:.9g}",
        f"{rec.orientation_rate_rad_per_s:.9g}",
        rec.tracker_used, rec.outlier_removed, rec.seg_source,
    ]
