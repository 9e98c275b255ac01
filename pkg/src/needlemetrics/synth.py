"""Ground-truth synthetic trial generator.

Produces raw recordings in the ingest schemas together with a sidecar of
true boundaries and true metric values, so the whole pipeline can be
checked against analytic oracles. Trials are built from three phases:

* transport: one or more minimum-jerk point-to-point reaches (the
  bell-shaped speed profile of a natural reach)
* insertion: scripted rotation at constant angular rate plus a slow
  translation (straight line or helix) with a minimum-jerk time profile
* catch: a reach away from the tissue while the gripper opens

Teleoperated scripts are master-side; emission scales position and
velocity by the fine-mode factor and leaves orientation unscaled. The
recorded teleoperated velocity channel is filtered with a causal 2nd-order
20 Hz low-pass, mimicking the online rig filter.
"""

import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.signal import butter, lfilter, lfilter_zi

from needlemetrics import rotations
from needlemetrics.ingest import TeleRawStream, TrackerFrames

FINE_SCALING = 0.33          # master -> patient position/velocity scaling
TELE_RATE = 2000.0
OPEN_RATE = 120.0
ONLINE_VELOCITY_CUTOFF_HZ = 20.0

DEFAULT_LEVER_RIGHT = np.array([0.0, 20.0, 0.0])
DEFAULT_LEVER_LEFT = np.array([0.0, -20.0, 0.0])


class ScriptError(ValueError):
    """Inconsistent trial script (bad durations, boundaries, etc.)."""


def minimum_jerk(p0, p1, duration, t):
    """Minimum-jerk reach from p0 to p1; returns (position, velocity)."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    s = np.clip(t / duration, 0.0, 1.0)
    shape = 10 * s**3 - 15 * s**4 + 6 * s**5
    dshape = (30 * s**2 - 60 * s**3 + 30 * s**4) / duration
    pos = p0 + np.outer(shape, p1 - p0)
    vel = np.outer(dshape, p1 - p0)
    return pos, vel


def _minimum_jerk_progress(t, duration):
    s = np.clip(t / duration, 0.0, 1.0)
    return 10 * s**3 - 15 * s**4 + 6 * s**5, (30 * s**2 - 60 * s**3 + 30 * s**4) / duration


def _ramp_progress(t, duration, rise_fraction=0.35):
    """Smooth start, constant rate to the end (nonzero terminal speed).

    Models an insertion that stops abruptly on needle release, which keeps
    the speed valley at the segment boundary sharp.
    """
    u = np.clip(t / duration, 0.0, 1.0)
    r = rise_fraction
    norm = 1.0 - r / 2.0
    s = np.where(u < r, u**2 / (2 * r), u - r / 2.0) / norm
    ds = np.where(u < r, u / r, 1.0) / (norm * duration)
    return s, ds


@dataclass
class TrialScript:
    """Parameters of one synthetic needle-driving trial.

    Positions are master-side mm for teleoperated scripts (scaled on
    emission) and endpoint-frame mm for open scripts.
    """

    condition: str
    transport_start: np.ndarray = field(default_factory=lambda: np.zeros(3))
    # (target position, duration) legs; the last leg ends segment I.
    transport_legs: list = field(
        default_factory=lambda: [(np.array([-460.0, -60.0, -30.0]), 1.5)]
    )
    insertion_duration: float = 2.0
    insertion_axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))
    insertion_angle_rad: float = 2.4
    insertion_path: str = "line"       # line | helix
    insertion_profile: str = "minjerk"  # minjerk | ramp (time profile of s)
    insertion_translation: np.ndarray = field(
        default_factory=lambda: np.array([-10.0, -25.0, -8.0])
    )
    helix_radius_mm: float = 10.0
    helix_pitch_mm: float = 5.0
    helix_turns: float = 1.0
    catch_duration: float = 1.0
    catch_offset: np.ndarray = field(default_factory=lambda: np.array([15.0, 30.0, 10.0]))
    phi_base_rad: float = 0.0          # closed-jaw angle (nonzero for open)
    phi_open_angle_rad: float = 0.6
    phi_open_duration: float = 0.4
    pos_noise_mm: float = 0.0
    orient_noise_rad: float = 0.0
    vel_noise_mm_s: float = 0.0        # teleoperated recorded channel only
    disturb_tracker: str | None = None  # open: finger-contact wobble target
    disturb_amplitude_rad: float = 0.0
    disturb_freq_hz: float = 7.0
    sample_rate: float | None = None
    lever_right: np.ndarray = field(default_factory=lambda: DEFAULT_LEVER_RIGHT.copy())
    lever_left: np.ndarray = field(default_factory=lambda: DEFAULT_LEVER_LEFT.copy())

    def validate(self):
        if self.condition not in ("teleoperated", "open"):
            raise ScriptError(f"bad condition {self.condition!r}")
        if self.insertion_duration <= 0 or self.catch_duration <= 0:
            raise ScriptError("phase durations must be positive")
        if any(d <= 0 for _, d in self.transport_legs):
            raise ScriptError("transport leg durations must be positive")
        if self.insertion_path not in ("line", "helix"):
            raise ScriptError(f"bad insertion_path {self.insertion_path!r}")
        if self.insertion_profile not in ("minjerk", "ramp"):
            raise ScriptError(f"bad insertion_profile {self.insertion_profile!r}")
        if min(self.pos_noise_mm, self.orient_noise_rad, self.vel_noise_mm_s) < 0:
            raise ScriptError("noise levels must be non-negative")

    @property
    def rate(self):
        if self.sample_rate is not None:
            return self.sample_rate
        return TELE_RATE if self.condition == "teleoperated" else OPEN_RATE

    @property
    def t1(self):
        return sum(d for _, d in self.transport_legs)

    @property
    def t2(self):
        return self.t1 + self.insertion_duration

    @property
    def total_duration(self):
        return self.t2 + self.catch_duration


@dataclass
class SynthTrial:
    """One generated trial: raw stream(s), sidecar truth, clean references."""

    condition: str
    raw: object                   # TeleRawStream or TrackerFrames
    sidecar: dict
    master_position: np.ndarray | None = None  # tele, pre-noise
    clean_position: np.ndarray | None = None   # emitted frame, pre-noise


def _insertion_path_points(script, s):
    """Insertion translation sampled at path progress s in [0, 1]."""
    if script.insertion_path == "line":
        d = np.asarray(script.insertion_translation, dtype=float)
        return np.outer(s, d), np.linalg.norm(d)
    r = script.helix_radius_mm
    n = script.helix_turns
    pitch = script.helix_pitch_mm
    ang = 2 * np.pi * n * s
    pts = np.stack([r * np.cos(ang) - r, r * np.sin(ang), pitch * n * s], axis=1)
    arc = n * np.hypot(2 * np.pi * r, pitch)
    return pts, arc


def _insertion_path_tangent(script, s):
    """d(path)/ds at progress s."""
    if script.insertion_path == "line":
        d = np.asarray(script.insertion_translation, dtype=float)
        return np.tile(d, (len(s), 1))
    r = script.helix_radius_mm
    n = script.helix_turns
    pitch = script.helix_pitch_mm
    ang = 2 * np.pi * n * s
    w = 2 * np.pi * n
    return np.stack(
        [-r * w * np.sin(ang), r * w * np.cos(ang), np.full_like(s, pitch * n)], axis=1
    )


def _scripted_motion(script, t):
    """Clean endpoint position, velocity, orientation, phi at times t."""
    pos = np.zeros((len(t), 3))
    vel = np.zeros((len(t), 3))
    theta = np.zeros(len(t))

    start = np.asarray(script.transport_start, dtype=float)
    leg_start_t = 0.0
    p_prev = start
    for target, duration in script.transport_legs:
        sel = (t >= leg_start_t) & (t < leg_start_t + duration)
        p, v = minimum_jerk(p_prev, target, duration, t[sel] - leg_start_t)
        pos[sel], vel[sel] = p, v
        leg_start_t += duration
        p_prev = np.asarray(target, dtype=float)

    t1, t2 = script.t1, script.t2
    sel = (t >= t1) & (t < t2)
    progress = (
        _ramp_progress if script.insertion_profile == "ramp" else _minimum_jerk_progress
    )
    s, ds = progress(t[sel] - t1, script.insertion_duration)
    path_pts, _ = _insertion_path_points(script, s)
    pos[sel] = p_prev + path_pts
    vel[sel] = _insertion_path_tangent(script, s) * ds[:, None]
    theta[sel] = script.insertion_angle_rad * (t[sel] - t1) / script.insertion_duration

    end_pts, _ = _insertion_path_points(script, np.array([1.0]))
    insertion_end = p_prev + end_pts[0]
    sel = t >= t2
    p, v = minimum_jerk(insertion_end, insertion_end + script.catch_offset,
                        script.catch_duration, t[sel] - t2)
    pos[sel], vel[sel] = p, v
    theta[sel] = script.insertion_angle_rad

    axis = np.asarray(script.insertion_axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * theta
    quats = np.concatenate(
        [np.cos(half)[:, None], np.sin(half)[:, None] * axis[None, :]], axis=1
    )

    phi = np.full(len(t), script.phi_base_rad)
    sel = t >= t2
    ramp = np.clip((t[sel] - t2) / script.phi_open_duration, 0.0, 1.0)
    phi[sel] = script.phi_base_rad + script.phi_open_angle_rad * 0.5 * (
        1 - np.cos(np.pi * ramp)
    )
    return pos, vel, quats, phi


def _online_velocity_filter(v, rate):
    """Causal 2nd-order low-pass, state initialized to the first sample."""
    b, a = butter(2, ONLINE_VELOCITY_CUTOFF_HZ, fs=rate)
    zi = lfilter_zi(b, a)
    out = np.empty_like(v)
    for k in range(v.shape[1]):
        out[:, k], _ = lfilter(b, a, v[:, k], zi=zi * v[0, k])
    return out


def _noisy_matrices(quats, noise, rng):
    rots = np.stack([rotations.quaternion_to_matrix(q) for q in quats])
    if noise > 0:
        vecs = rng.normal(scale=noise, size=(len(quats), 3))
        for i, v in enumerate(vecs):
            angle = np.linalg.norm(v)
            if angle > 0:
                dq = rotations.from_axis_angle(v, angle)
                rots[i] = rotations.quaternion_to_matrix(dq) @ rots[i]
        rots += rng.normal(scale=noise * 0.1, size=rots.shape)
    return rots


def _sidecar(script):
    transport_pts = [np.asarray(script.transport_start, dtype=float)] + [
        np.asarray(p, dtype=float) for p, _ in script.transport_legs
    ]
    p1 = sum(
        float(np.linalg.norm(b - a)) for a, b in zip(transport_pts, transport_pts[1:])
    )
    _, p2 = _insertion_path_points(script, np.array([1.0]))
    scale = FINE_SCALING if script.condition == "teleoperated" else 1.0
    tt2 = script.insertion_duration
    return {
        "true_j1_s": script.t1,
        "true_j2_s": script.t2,
        "true_TT": {"I": script.t1, "II": tt2},
        "true_P": {"I": p1 * scale, "II": float(p2) * scale},
        "true_sum_dtheta": {"I": 0.0, "II": script.insertion_angle_rad},
        "true_C": {"I": 0.0, "II": script.insertion_angle_rad / tt2},
        "script": _script_echo(script),
    }


def _script_echo(script):
    echo = asdict(script)
    for key, value in echo.items():
        if isinstance(value, np.ndarray):
            echo[key] = value.tolist()
    echo["transport_legs"] = [
        [np.asarray(p).tolist(), d] for p, d in script.transport_legs
    ]
    return echo


def generate_trial(script, seed=0):
    """Generate one synthetic trial with its ground-truth sidecar."""
    script.validate()
    rng = np.random.default_rng(seed)
    rate = script.rate
    t = np.arange(int(round(script.total_duration * rate)) + 1) / rate
    pos, vel, quats, phi = _scripted_motion(script, t)

    if script.condition == "teleoperated":
        master_pos = pos
        p_pos = FINE_SCALING * pos
        p_vel = FINE_SCALING * vel
        v_rec = _online_velocity_filter(p_vel, rate)
        if script.vel_noise_mm_s > 0:
            v_rec = v_rec + rng.normal(scale=script.vel_noise_mm_s, size=v_rec.shape)
        x_rec = p_pos.copy()
        if script.pos_noise_mm > 0:
            x_rec = x_rec + rng.normal(scale=script.pos_noise_mm, size=x_rec.shape)
        rots = _noisy_matrices(quats, script.orient_noise_rad, rng)
        raw = TeleRawStream(t=t, x=x_rec, v=v_rec, rot=rots, phi=phi)
        return SynthTrial(
            condition="teleoperated",
            raw=raw,
            sidecar=_sidecar(script),
            master_position=master_pos,
            clean_position=p_pos,
        )

    # Open condition: two tracker streams consistent with the lever arms
    # and an Eq.-of-opening-consistent jaw schedule. Each tracker frame is
    # the tool orientation composed with a half-opening about the local
    # z-axis so the angle between the trackers' x-axes equals phi.
    q_right = np.empty_like(quats)
    q_left = np.empty_like(quats)
    z_axis = np.array([0.0, 0.0, 1.0])
    for i, (q, angle) in enumerate(zip(quats, phi)):
        q_right[i] = rotations.quaternion_multiply(
            q, rotations.from_axis_angle(z_axis, -0.5 * angle)
        )
        q_left[i] = rotations.quaternion_multiply(
            q, rotations.from_axis_angle(z_axis, +0.5 * angle)
        )
    if script.disturb_tracker:
        wobble = script.disturb_amplitude_rad * np.sin(
            2 * np.pi * script.disturb_freq_hz * t
        )
        target = q_right if script.disturb_tracker == "right" else q_left
        for i, angle in enumerate(wobble):
            target[i] = rotations.quaternion_multiply(
                rotations.from_axis_angle([1.0, 0.0, 0.0], angle), target[i]
            )

    rot_r = _noisy_matrices(q_right, script.orient_noise_rad, rng)
    rot_l = _noisy_matrices(q_left, script.orient_noise_rad, rng)
    # Tracker body positions place each endpoint estimate on the truth.
    rot_r_clean = np.stack([rotations.quaternion_to_matrix(q) for q in q_right])
    rot_l_clean = np.stack([rotations.quaternion_to_matrix(q) for q in q_left])
    x_right = pos - rot_r_clean @ np.asarray(script.lever_right, dtype=float)
    x_left = pos - rot_l_clean @ np.asarray(script.lever_left, dtype=float)
    if script.pos_noise_mm > 0:
        x_right = x_right + rng.normal(scale=script.pos_noise_mm, size=x_right.shape)
        x_left = x_left + rng.normal(scale=script.pos_noise_mm, size=x_left.shape)
    raw = TrackerFrames(t=t, x_right=x_right, rot_right=rot_r,
                        x_left=x_left, rot_left=rot_l)
    return SynthTrial(
        condition="open", raw=raw, sidecar=_sidecar(script), clean_position=pos
    )


def generate_calibration_frames(lever_right=None, lever_left=None, n_frames=200,
                                noise_mm=0.0, seed=0, with_reference=True):
    """Calibration recording with known lever arms and rich rotations.

    Tracker orientations are drawn independently at random so both lever
    arms are observable even without the reference endpoint trajectory.
    """
    rng = np.random.default_rng(seed)
    lever_right = DEFAULT_LEVER_RIGHT if lever_right is None else np.asarray(lever_right, float)
    lever_left = DEFAULT_LEVER_LEFT if lever_left is None else np.asarray(lever_left, float)
    t = np.arange(n_frames) / OPEN_RATE
    endpoint = rng.uniform(-50, 50, size=(n_frames, 3))
    rot_r = np.empty((n_frames, 3, 3))
    rot_l = np.empty((n_frames, 3, 3))
    for i in range(n_frames):
        rot_r[i] = rotations.quaternion_to_matrix(
            rotations.from_axis_angle(rng.normal(size=3), rng.uniform(0, np.pi))
        )
        rot_l[i] = rotations.quaternion_to_matrix(
            rotations.from_axis_angle(rng.normal(size=3), rng.uniform(0, np.pi))
        )
    x_right = endpoint - rot_r @ lever_right
    x_left = endpoint - rot_l @ lever_left
    if noise_mm > 0:
        x_right = x_right + rng.normal(scale=noise_mm, size=x_right.shape)
        x_left = x_left + rng.normal(scale=noise_mm, size=x_left.shape)
    return TrackerFrames(
        t=t, x_right=x_right, rot_right=rot_r, x_left=x_left, rot_left=rot_l,
        endpoint_ref=endpoint if with_reference else None,
    )


@dataclass
class CohortProfile:
    """Per-group parameter distributions with exponential learning trends."""

    transport_duration: tuple = (1.4, 1.1, 0.08)   # (initial, asymptote, sd)
    insertion_duration: tuple = (1.8, 1.4, 0.12)
    insertion_angle: tuple = (2.3, 2.4, 0.15)
    learning_tau_trials: float = 20.0


EXPERT_PROFILE = CohortProfile(
    transport_duration=(1.2, 1.1, 0.06),
    insertion_duration=(1.5, 1.4, 0.08),
    insertion_angle=(2.4, 2.4, 0.1),
)
NOVICE_PROFILE = CohortProfile(
    transport_duration=(2.0, 1.5, 0.12),
    insertion_duration=(3.0, 2.3, 0.2),
    insertion_angle=(2.2, 2.3, 0.15),
)


def _learning_value(spec_triplet, trial_number, tau, rng):
    initial, asymptote, sd = spec_triplet
    mean = asymptote + (initial - asymptote) * np.exp(-(trial_number - 1) / tau)
    return max(0.3, rng.normal(mean, sd))


def cohort_scripts(condition, n_experienced=6, n_novice=9, n_trials=80, seed=0,
                   expert_profile=EXPERT_PROFILE, novice_profile=NOVICE_PROFILE,
                   pos_noise_mm=0.1, orient_noise_rad=0.002):
    """Per-trial scripts and manifest-shaped records for a synthetic cohort."""
    entries = []
    groups = [("experienced", expert_profile, n_experienced),
              ("novice", novice_profile, n_novice)]
    pid = 0
    for expertise, profile, count in groups:
        for _ in range(count):
            pid += 1
            participant = f"P{pid:02d}"
            for trial_number in range(1, n_trials + 1):
                rng = np.random.default_rng([seed, pid, trial_number])
                tau = profile.learning_tau_trials
                script = TrialScript(
                    condition=condition,
                    transport_legs=[(
                        np.array([-460.0, -60.0, -30.0])
                        if condition == "teleoperated"
                        else np.array([-152.0, -20.0, -10.0]),
                        _learning_value(profile.transport_duration, trial_number, tau, rng),
                    )],
                    insertion_duration=_learning_value(
                        profile.insertion_duration, trial_number, tau, rng
                    ),
                    insertion_angle_rad=_learning_value(
                        profile.insertion_angle, trial_number, tau, rng
                    ),
                    insertion_translation=np.array([-8.0, -25.0, -8.0]),
                    # Open insertions end with an abrupt release and a quick
                    # catch reach, keeping the speed valley at j2 sharp.
                    insertion_profile="minjerk" if condition == "teleoperated" else "ramp",
                    catch_duration=1.0 if condition == "teleoperated" else 0.8,
                    phi_base_rad=0.0 if condition == "teleoperated" else 0.15,
                    pos_noise_mm=pos_noise_mm,
                    orient_noise_rad=orient_noise_rad,
                    vel_noise_mm_s=0.5 if condition == "teleoperated" else 0.0,
                )
                entries.append(
                    {
                        "trial_id": f"{participant}-{condition[:4]}-{trial_number:03d}",
                        "participant_id": participant,
                        "expertise": expertise,
                        "condition": condition,
                        "trial_number": trial_number,
                        "script": script,
                        "seed": [seed, pid, trial_number, 7],
                    }
                )
    return entries


def write_cohort(entries, out_dir, calibration_noise_mm=0.2, seed=0):
    """Emit a cohort to disk: trial CSVs, truth sidecars, manifest.

    Open-condition cohorts also get a calibration recording with a reference
    endpoint trajectory (``calibration.csv``). Returns the manifest path.
    """
    trials_dir = os.path.join(out_dir, "trials")
    truth_dir = os.path.join(out_dir, "truth")
    os.makedirs(trials_dir, exist_ok=True)
    os.makedirs(truth_dir, exist_ok=True)
    manifest = []
    conditions = set()
    for entry in entries:
        script = entry["script"]
        conditions.add(script.condition)
        trial = generate_trial(script, seed=entry["seed"])
        rel = os.path.join("trials", f"{entry['trial_id']}.csv")
        if script.condition == "teleoperated":
            write_teleoperated_csv(os.path.join(out_dir, rel), trial.raw)
        else:
            write_open_csv(os.path.join(out_dir, rel), trial.raw)
        write_sidecar(
            os.path.join(truth_dir, f"{entry['trial_id']}.json"), trial.sidecar
        )
        manifest.append(
            {
                "trial_id": entry["trial_id"],
                "participant_id": entry["participant_id"],
                "expertise": entry["expertise"],
                "condition": entry["condition"],
                "trial_number": entry["trial_number"],
                "path": rel,
                "excluded": False,
                "exclusion_reason": "",
            }
        )
    if "open" in conditions:
        frames = generate_calibration_frames(
            noise_mm=calibration_noise_mm, seed=seed, with_reference=True
        )
        write_open_csv(
            os.path.join(out_dir, "calibration.csv"), frames, include_reference=True
        )
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest_path


def write_teleoperated_csv(path, raw):
    from needlemetrics.ingest import TELE_COLUMNS

    data = np.column_stack(
        [raw.t, raw.x, raw.v, raw.rot.reshape(len(raw.t), 9), raw.phi]
    )
    _write_csv(path, TELE_COLUMNS, data)


def write_open_csv(path, frames, include_reference=False):
    from needlemetrics.ingest import OPEN_COLUMNS, REFERENCE_COLUMNS

    n = len(frames.t)
    cols = [frames.t, frames.x_right, frames.rot_right.reshape(n, 9),
            frames.x_left, frames.rot_left.reshape(n, 9)]
    header = list(OPEN_COLUMNS)
    if include_reference:
        if frames.endpoint_ref is None:
            raise ScriptError("no reference endpoint to write")
        cols.append(frames.endpoint_ref)
        header += REFERENCE_COLUMNS
    _write_csv(path, header, np.column_stack(cols))


def _write_csv(path, header, data):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        np.savetxt(fh, data, fmt="%.9g", delimiter=",")


def write_sidecar(path, sidecar):
    with open(path, "w") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)
