"""Trial loading, validation, endpoint calibration, and preprocessing.

Two on-disk schemas are supported (CSV, one row per sample, decimal-point
numerics):

* teleoperated: ``t,x,y,z,vx,vy,vz,r11,...,r33,phi``
* open: ``t,rx,ry,rz,r11,...,r33,lx,ly,lz,l11,...,l33`` (right tracker
  position + rotation, left tracker position + rotation); calibration
  recordings use the same layout plus optional reference endpoint columns
  ``ex,ey,ez``.

Preprocessing produces analysis-ready trials on an exact uniform grid:
orthogonalized orientations, PCHIP/SLERP resampling to the configured rate,
zero-phase 6 Hz position filtering, and condition-specific velocity.
"""

import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from needlemetrics import dsp, rotations

TELE_COLUMNS = (
    ["t", "x", "y", "z", "vx", "vy", "vz"]
    + [f"r{i}{j}" for i in (1, 2, 3) for j in (1, 2, 3)]
    + ["phi"]
)
OPEN_COLUMNS = (
    ["t", "rx", "ry", "rz"]
    + [f"r{i}{j}" for i in (1, 2, 3) for j in (1, 2, 3)]
    + ["lx", "ly", "lz"]
    + [f"l{i}{j}" for i in (1, 2, 3) for j in (1, 2, 3)]
)
REFERENCE_COLUMNS = ["ex", "ey", "ez"]

MIN_CALIBRATION_FRAMES = 30
MIN_ROTATION_COVERAGE_RAD = np.deg2rad(30.0)
MAX_CALIBRATION_CONDITION = 1e6


class IngestError(ValueError):
    """Schema mismatch, bad rows, or otherwise unusable input files."""


class IllConditionedCalibrationError(ValueError):
    """Calibration recording lacks the rotational excitation to solve it."""


@dataclass
class PreprocessConfig:
    resample_rate: float = 100.0
    position_cutoff_hz: float = 6.0
    # The teleoperated rig records an online-filtered velocity channel; it
    # is kept by default and only re-derived for sensitivity studies.
    rederive_tele_velocity: bool = False


@dataclass
class TeleRawStream:
    t: np.ndarray          # (N,)
    x: np.ndarray          # (N, 3) mm
    v: np.ndarray          # (N, 3) mm/s
    rot: np.ndarray        # (N, 3, 3)
    phi: np.ndarray        # (N,) rad


@dataclass
class TrackerFrames:
    t: np.ndarray          # (N,)
    x_right: np.ndarray    # (N, 3) mm
    rot_right: np.ndarray  # (N, 3, 3)
    x_left: np.ndarray     # (N, 3) mm
    rot_left: np.ndarray   # (N, 3, 3)
    endpoint_ref: np.ndarray | None = None  # (N, 3) mm, calibration only


@dataclass
class CalibrationModel:
    lever_right: np.ndarray  # (3,) mm, in the right tracker frame
    lever_left: np.ndarray   # (3,) mm, in the left tracker frame
    residual_rms: float      # mm

    def to_dict(self):
        return {
            "lever_right_mm": [float(v) for v in self.lever_right],
            "lever_left_mm": [float(v) for v in self.lever_left],
            "residual_rms_mm": float(self.residual_rms),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            lever_right=np.asarray(d["lever_right_mm"], dtype=float),
            lever_left=np.asarray(d["lever_left_mm"], dtype=float),
            residual_rms=float(d["residual_rms_mm"]),
        )


@dataclass
class OpenPoseStream:
    t: np.ndarray        # (N,)
    x: np.ndarray        # (N, 3) mm, derived endpoint
    phi: np.ndarray      # (N,) rad, opening angle
    q_right: np.ndarray  # (N, 4)
    q_left: np.ndarray   # (N, 4)


@dataclass
class Trial:
    """Analysis-ready trial on an exact uniform grid."""

    trial_id: str
    participant_id: str
    expertise: str   # experienced | novice
    condition: str   # teleoperated | open
    trial_number: int
    t: np.ndarray    # (N,)
    x: np.ndarray    # (N, 3) mm, 6 Hz zero-phase filtered
    v: np.ndarray    # (N, 3) mm/s
    q: np.ndarray    # (N, 4)
    phi: np.ndarray  # (N,) rad
    rate: float = 100.0
    q_right: np.ndarray | None = None  # open condition only
    q_left: np.ndarray | None = None
    excluded: bool = False
    exclusion_reason: str = ""

    @property
    def n_samples(self):
        return len(self.t)

    @property
    def speed(self):
        return np.linalg.norm(self.v, axis=1)


@dataclass
class TrialRef:
    """One manifest record pointing at a trial file on disk."""

    trial_id: str
    participant_id: str
    expertise: str
    condition: str
    trial_number: int
    path: str
    excluded: bool = False
    exclusion_reason: str = ""


def load_manifest(path):
    with open(path) as fh:
        records = json.load(fh)
    if not isinstance(records, list):
        raise IngestError(f"manifest {path} must be a JSON array")
    refs = []
    for i, rec in enumerate(records):
        try:
            refs.append(
                TrialRef(
                    trial_id=str(rec["trial_id"]),
                    participant_id=str(rec["participant_id"]),
                    expertise=rec["expertise"],
                    condition=rec["condition"],
                    trial_number=int(rec["trial_number"]),
                    path=rec["path"],
                    excluded=bool(rec.get("excluded", False)),
                    exclusion_reason=str(rec.get("exclusion_reason", "")),
                )
            )
        except KeyError as exc:
            raise IngestError(f"manifest record {i} missing field {exc}") from exc
        if refs[-1].expertise not in ("experienced", "novice"):
            raise IngestError(f"manifest record {i}: bad expertise {refs[-1].expertise!r}")
        if refs[-1].condition not in ("teleoperated", "open"):
            raise IngestError(f"manifest record {i}: bad condition {refs[-1].condition!r}")
    seen = set()
    for ref in refs:
        key = (ref.participant_id, ref.condition, ref.trial_number)
        if key in seen:
            raise IngestError(f"duplicate trial_number {key} in manifest")
        seen.add(key)
    return refs


def _read_csv(path, columns, optional=()):
    try:
        df = pd.read_csv(path, float_precision="round_trip")
    except Exception as exc:
        raise IngestError(f"{path}: cannot parse CSV: {exc}") from exc
    got = list(df.columns)
    if got[: len(columns)] != columns:
        raise IngestError(
            f"{path}: header mismatch; expected {','.join(columns)}[...], got {','.join(got)}"
        )
    extra = [c for c in got[len(columns):] if c not in optional]
    if extra:
        raise IngestError(f"{path}: unexpected columns {extra}")
    if len(df) == 0:
        raise IngestError(f"{path}: empty file")
    return df


def _validate_rows(path, df, columns):
    values = df[columns].to_numpy(dtype=float)
    bad = ~np.isfinite(values)
    if bad.any():
        row = int(np.argwhere(bad)[0, 0]) + 1
        col = columns[int(np.argwhere(bad)[0, 1])]
        raise IngestError(f"{path}: non-finite value in row {row} (column {col})")
    t = values[:, 0]
    regress = np.flatnonzero(np.diff(t) <= 0)
    if regress.size:
        raise IngestError(
            f"{path}: non-increasing timestamp at row {int(regress[0]) + 2}"
        )
    return values


def load_trial(path, schema):
    """Load and validate one raw trial file; returns the raw sample stream."""
    if schema == "teleoperated":
        df = _read_csv(path, TELE_COLUMNS)
        values = _validate_rows(path, df, TELE_COLUMNS)
        return TeleRawStream(
            t=values[:, 0],
            x=values[:, 1:4],
            v=values[:, 4:7],
            rot=values[:, 7:16].reshape(-1, 3, 3),
            phi=values[:, 16],
        )
    if schema == "open":
        df = _read_csv(path, OPEN_COLUMNS, optional=REFERENCE_COLUMNS)
        values = _validate_rows(path, df, OPEN_COLUMNS)
        ref = None
        if all(c in df.columns for c in REFERENCE_COLUMNS):
            ref = df[REFERENCE_COLUMNS].to_numpy(dtype=float)
            if not np.isfinite(ref).all():
                row = int(np.argwhere(~np.isfinite(ref))[0, 0]) + 1
                raise IngestError(f"{path}: non-finite reference endpoint in row {row}")
        return TrackerFrames(
            t=values[:, 0],
            x_right=values[:, 1:4],
            rot_right=values[:, 4:13].reshape(-1, 3, 3),
            x_left=values[:, 13:16],
            rot_left=values[:, 16:25].reshape(-1, 3, 3),
            endpoint_ref=ref,
        )
    raise IngestError(f"unknown schema {schema!r}")


def _rotation_coverage(rot):
    """Largest pairwise rotation angle over (a subsample of) the frames."""
    qs = rotations.matrices_to_quaternions(rot)
    if len(qs) > 200:
        qs = qs[:: len(qs) // 200 + 1]
    dots = np.abs(qs @ qs.T)
    return float(np.max(2.0 * np.arccos(np.clip(dots, 0.0, 1.0))))


def calibrate_endpoint(frames, use_reference=None):
    """Least-squares lever arms from a calibration recording.

    With a reference endpoint trajectory, each tracker is solved against it
    independently; otherwise the two trackers are solved jointly so their
    endpoint estimates agree (consistency formulation). Reports the
    per-frame residual RMS in mm.
    """
    if len(frames.t) < MIN_CALIBRATION_FRAMES:
        raise IllConditionedCalibrationError(
            f"need >= {MIN_CALIBRATION_FRAMES} calibration frames, got {len(frames.t)}"
        )
    rot_r = rotations.orthogonalize_stream(frames.rot_right)
    rot_l = rotations.orthogonalize_stream(frames.rot_left)
    for name, rot in (("right", rot_r), ("left", rot_l)):
        cov = _rotation_coverage(rot)
        if cov < MIN_ROTATION_COVERAGE_RAD:
            raise IllConditionedCalibrationError(
                f"insufficient rotational excitation on {name} tracker: "
                f"max pairwise angle {np.rad2deg(cov):.1f} deg < 30 deg"
            )
    n = len(frames.t)
    if use_reference is None:
        use_reference = frames.endpoint_ref is not None
    if use_reference:
        if frames.endpoint_ref is None:
            raise IngestError("reference endpoint requested but not present")
        levers = []
        residuals = np.zeros((n, 3, 2))
        for k, (rot, x) in enumerate(((rot_r, frames.x_right), (rot_l, frames.x_left))):
            a = rot.reshape(-1, 3)
            b = (frames.endpoint_ref - x).reshape(-1)
            lever, res = _solve_checked(a, b)
            levers.append(lever)
            residuals[:, :, k] = (x + rot @ lever) - frames.endpoint_ref
        rms = float(np.sqrt(np.mean(np.sum(residuals**2, axis=1))))
        return CalibrationModel(levers[0], levers[1], rms)
    a = np.concatenate([rot_r, -rot_l], axis=2).reshape(-1, 6)
    b = (frames.x_left - frames.x_right).reshape(-1)
    sol, _ = _solve_checked(a, b)
    lever_r, lever_l = sol[:3], sol[3:]
    res = (frames.x_right + rot_r @ lever_r) - (frames.x_left + rot_l @ lever_l)
    rms = float(np.sqrt(np.mean(np.sum(res**2, axis=1))))
    return CalibrationModel(lever_r, lever_l, rms)


def _solve_checked(a, b):
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    if s[-1] <= 0 or s[0] / s[-1] > MAX_CALIBRATION_CONDITION:
        cond = np.inf if s[-1] <= 0 else s[0] / s[-1]
        raise IllConditionedCalibrationError(
            f"calibration system condition number {cond:.3g} exceeds "
            f"{MAX_CALIBRATION_CONDITION:.0e}"
        )
    sol = vt.T @ ((u.T @ b) / s)
    return sol, b - a @ sol


def derive_open_pose(frames, calib):
    """Endpoint, opening angle, and per-tracker orientations for open trials.

    The endpoint is the midpoint of the two tracker estimates; the opening
    angle is the arc-cosine of the dot product of the trackers' x-axis
    columns, clamped to [-1, 1].
    """
    rot_r = rotations.orthogonalize_stream(frames.rot_right)
    rot_l = rotations.orthogonalize_stream(frames.rot_left)
    end_r = frames.x_right + rot_r @ calib.lever_right
    end_l = frames.x_left + rot_l @ calib.lever_left
    x_hat_dot = np.sum(rot_r[:, :, 0] * rot_l[:, :, 0], axis=1)
    return OpenPoseStream(
        t=frames.t,
        x=0.5 * (end_r + end_l),
        phi=np.arccos(np.clip(x_hat_dot, -1.0, 1.0)),
        q_right=rotations.matrices_to_quaternions(rot_r),
        q_left=rotations.matrices_to_quaternions(rot_l),
    )


def preprocess(raw, condition, config=None, ref=None, calib=None):
    """Standard preprocessing chain; returns an analysis-ready :class:`Trial`.

    Order: orthogonalize + quaternion conversion, resample to the uniform
    grid (PCHIP for scalars/vectors, SLERP for orientations), zero-phase
    Butterworth on position, then condition-specific velocity.
    """
    config = config or PreprocessConfig()
    rate = config.resample_rate
    if condition == "teleoperated":
        q_raw = rotations.matrices_to_quaternions(
            rotations.orthogonalize_stream(raw.rot)
        )
        grid = dsp.uniform_grid(raw.t[0], raw.t[-1], rate)
        x = dsp.pchip_interpolate(raw.t, raw.x, grid)
        v = dsp.pchip_interpolate(raw.t, raw.v, grid)
        phi = dsp.pchip_interpolate(raw.t, raw.phi, grid)
        q = rotations.slerp_resample(raw.t, q_raw, grid)
        x = dsp.filtfilt_butter2(x, rate, config.position_cutoff_hz)
        if config.rederive_tele_velocity:
            v = dsp.differentiate(x, 1.0 / rate)
        q_right = q_left = None
    elif condition == "open":
        if isinstance(raw, TrackerFrames):
            if calib is None:
                raise IngestError("open-condition preprocessing needs a calibration model")
            raw = derive_open_pose(raw, calib)
        grid = dsp.uniform_grid(raw.t[0], raw.t[-1], rate)
        x = dsp.pchip_interpolate(raw.t, raw.x, grid)
        phi = dsp.pchip_interpolate(raw.t, raw.phi, grid)
        q_right = rotations.slerp_resample(raw.t, raw.q_right, grid)
        q_left = rotations.slerp_resample(raw.t, raw.q_left, grid)
        q = q_right
        x = dsp.filtfilt_butter2(x, rate, config.position_cutoff_hz)
        v = dsp.differentiate(x, 1.0 / rate)
    else:
        raise IngestError(f"unknown condition {condition!r}")

    ref = ref or TrialRef("", "", "novice", condition, 0, "")
    return Trial(
        trial_id=ref.trial_id,
        participant_id=ref.participant_id,
        expertise=ref.expertise,
        condition=condition,
        trial_number=ref.trial_number,
        t=grid,
        x=x,
        v=v,
        q=q,
        phi=phi,
        rate=rate,
        q_right=q_right,
        q_left=q_left,
        excluded=ref.excluded,
        exclusion_reason=ref.exclusion_reason,
    )
