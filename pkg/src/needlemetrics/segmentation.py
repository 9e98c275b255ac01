"""Phase segmentation: end of transport (segment I) and insertion (segment II).

Teleoperated and open recordings come from different sensors and different
movement styles, so each condition has its own rule set. Trials where a
rule has no witness are marked failed and routed to the manual-override
path rather than guessed.
"""

from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from needlemetrics import dsp


class OverrideError(ValueError):
    """Bad manual-override entry (unknown trial, out of span, misordered)."""


@dataclass
class SegmentationParams:
    speed_percentile: float = 25.0      # teleoperated slow-down gate
    x_threshold_mm: float = -135.0      # teleoperated position gate
    t_min_s: float = 0.5                # teleoperated earliest boundary
    phi_epsilon_rad: float = 0.0        # teleoperated gripper-open threshold
    open_speed_threshold: float = 20.0  # mm/s, open-condition peak/minimum gate
    open_phi_rate_fraction: float = 0.8
    speed_prefilter_hz: float = 4.0     # open-condition working copies only
    phi_prefilter_hz: float = 8.0
    vx_prefilter_hz: float = 3.0

    def validate(self):
        if not 0.0 < self.speed_percentile < 100.0:
            raise ValueError(f"speed_percentile {self.speed_percentile} not in (0, 100)")
        if not 0.0 < self.open_phi_rate_fraction <= 1.0:
            raise ValueError(
                f"open_phi_rate_fraction {self.open_phi_rate_fraction} not in (0, 1]"
            )


@dataclass
class SegmentBoundaries:
    """Sample indices (0-based) delimiting segments I and II."""

    j1: int | None                 # end of segment I
    j2: int | None                 # end of segment II
    source: str = "auto"           # auto | manual
    failure_reason: str = ""

    @property
    def failed(self):
        return self.j1 is None or self.j2 is None


def segment_teleoperated(trial, params=None):
    """Boundary rules for teleoperated trials.

    j1 is the first local speed minimum below the configured percentile of
    the whole-trial speed that also satisfies the position and time gates;
    j2 is the first subsequent sample where the gripper opens.
    """
    params = params or SegmentationParams()
    params.validate()
    speed = trial.speed
    threshold = np.percentile(speed, params.speed_percentile)
    minima = dsp.local_extrema(speed, "min")
    j1 = None
    for j in minima:
        if (
            speed[j] < threshold
            and trial.x[j, 0] < params.x_threshold_mm
            and trial.t[j] - trial.t[0] > params.t_min_s
        ):
            j1 = int(j)
            break
    if j1 is None:
        return SegmentBoundaries(
            None, None, failure_reason="no qualifying speed minimum for j1"
        )
    opened = np.flatnonzero(trial.phi[j1 + 1:] > params.phi_epsilon_rad)
    if opened.size == 0:
        return SegmentBoundaries(
            j1, None, failure_reason="gripper never opens after j1"
        )
    j2 = j1 + 1 + int(opened[0])
    bounds = SegmentBoundaries(j1, j2)
    _assert_tele_predicates(trial, params, bounds, threshold)
    return bounds


def _assert_tele_predicates(trial, params, bounds, threshold):
    j1 = bounds.j1
    assert trial.speed[j1] < threshold
    assert trial.x[j1, 0] < params.x_threshold_mm
    assert trial.t[j1] - trial.t[0] > params.t_min_s
    assert 0 < j1 < bounds.j2 < trial.n_samples


def segment_open(trial, params=None):
    """Boundary rules for open trials.

    Works on prefiltered copies of speed, opening angle, and the lateral
    velocity component; these copies are used only here, never in metric
    computation. j1 is the first |v_x| minimum under the speed threshold
    after the transport peak; j2 is the last speed minimum before the peak
    of the gripper opening rate.
    """
    params = params or SegmentationParams()
    params.validate()
    rate = trial.rate
    speed_f = dsp.filtfilt_butter2(trial.speed, rate, params.speed_prefilter_hz)
    phi_f = dsp.filtfilt_butter2(trial.phi, rate, params.phi_prefilter_hz)
    vx_f = np.abs(dsp.filtfilt_butter2(trial.v[:, 0], rate, params.vx_prefilter_hz))

    j_peak = None
    for j in dsp.local_extrema(vx_f, "max"):
        if vx_f[j] > params.open_speed_threshold:
            j_peak = int(j)
            break
    if j_peak is None:
        return SegmentBoundaries(
            None, None,
            failure_reason="no |v_x| peak above threshold (j_peak)",
        )
    j1 = None
    for j in dsp.local_extrema(vx_f, "min"):
        if j > j_peak and vx_f[j] < params.open_speed_threshold:
            j1 = int(j)
            break
    if j1 is None:
        return SegmentBoundaries(
            None, None,
            failure_reason="no |v_x| minimum below threshold after j_peak (j1)",
        )

    dphi = np.diff(phi_f)
    level = params.open_phi_rate_fraction * np.max(dphi)
    j_max = None
    for j in dsp.local_extrema(dphi, "max"):
        if dphi[j] >= level:
            j_max = int(j) + 1  # diff index j spans samples (j, j+1)
            break
    if j_max is None:
        return SegmentBoundaries(
            j1, None, failure_reason="no opening-rate peak above fraction (j_max)"
        )
    speed_minima = [int(j) for j in dsp.local_extrema(speed_f, "min") if j < j_max]
    speed_minima = [j for j in speed_minima if j > j1]
    if not speed_minima:
        return SegmentBoundaries(
            j1, None, failure_reason="no speed minimum before j_max (j2)"
        )
    return SegmentBoundaries(j1, speed_minima[-1])


def load_overrides(path):
    """Override file: CSV ``trial_id,j1_time_s,j2_time_s``."""
    df = pd.read_csv(path)
    expected = ["trial_id", "j1_time_s", "j2_time_s"]
    if list(df.columns) != expected:
        raise OverrideError(
            f"{path}: header mismatch; expected {','.join(expected)}"
        )
    return {
        str(row.trial_id): (float(row.j1_time_s), float(row.j2_time_s))
        for row in df.itertuples()
    }


def apply_overrides(trial, boundaries, overrides):
    """Replace automatic boundaries with manual ones, snapped to the grid."""
    if trial.trial_id not in overrides:
        return boundaries
    t1, t2 = overrides[trial.trial_id]
    span = (trial.t[0], trial.t[-1])
    for label, value in (("j1", t1), ("j2", t2)):
        if not span[0] <= value <= span[1]:
            raise OverrideError(
                f"{trial.trial_id}: override {label}={value} s outside trial span "
                f"[{span[0]}, {span[1]}] s"
            )
    j1 = int(np.rint((t1 - trial.t[0]) * trial.rate))
    j2 = int(np.rint((t2 - trial.t[0]) * trial.rate))
    if j1 >= j2:
        raise OverrideError(
            f"{trial.trial_id}: override boundaries misordered after snapping "
            f"(j1={j1}, j2={j2})"
        )
    return replace(boundaries, j1=j1, j2=j2, source="manual", failure_reason="")


def check_override_ids(overrides, known_ids):
    unknown = sorted(set(overrides) - set(known_ids))
    if unknown:
        raise OverrideError(f"override references unknown trial ids: {unknown}")
