"""3D rotation algebra for instrument pose streams.

Quaternions are stored scalar-first as numpy arrays ``[q1, q2, q3, q4]``
with ``q1`` the scalar part. All producing operations renormalize and
sign-canonicalize their output (scalar part >= 0, ties broken on the first
nonzero component) so that the double-cover ambiguity cannot inject
spurious angular displacement downstream.
"""

from dataclasses import dataclass

import numpy as np

from needlemetrics import backend

_MIN_SINGULAR_VALUE = 1e-9
_SLERP_SMALL_ANGLE = 1e-7


class DegenerateFrameError(ValueError):
    """A sampled rotation matrix is rank deficient beyond repair."""


@dataclass(frozen=True)
class RotationDelta:
    """Axis-angle form of the rotation between two orientations."""

    axis: np.ndarray  # unit 3-vector; arbitrary when angle ~ 0
    angle: float      # radians, in [0, pi]


def orthogonalize(noisy, sample=None):
    """Frobenius-nearest proper rotation to a noisy 3x3 matrix.

    Uses the SVD polar decomposition U @ diag(1, 1, det(U V^T)) @ V^T; the
    determinant correction flips the column paired with the smallest
    singular value so the result is a rotation, not a reflection.
    """
    m = np.asarray(noisy, dtype=np.float64)
    u, s, vt = np.linalg.svd(m)
    if s[-1] <= _MIN_SINGULAR_VALUE:
        where = f" at sample {sample}" if sample is not None else ""
        raise DegenerateFrameError(
            f"rank-deficient rotation matrix{where}: smallest singular value {s[-1]:.3e}"
        )
    d = np.sign(np.linalg.det(u @ vt))
    return (u * np.array([1.0, 1.0, d])) @ vt


def orthogonalize_stream(matrices):
    """Vectorized :func:`orthogonalize` over a (N, 3, 3) stack."""
    m = np.asarray(matrices, dtype=np.float64)
    u, s, vt = np.linalg.svd(m)
    bad = np.flatnonzero(s[:, -1] <= _MIN_SINGULAR_VALUE)
    if bad.size:
        raise DegenerateFrameError(
            f"rank-deficient rotation matrix at sample {bad[0]}: "
            f"smallest singular value {s[bad[0], -1]:.3e}"
        )
    d = np.sign(np.linalg.det(u @ vt))
    u = u.copy()
    u[:, :, 2] *= d[:, None]
    return u @ vt


def canonicalize(q):
    """Return the sign-canonical representative (scalar part >= 0)."""
    q = np.asarray(q, dtype=np.float64)
    for c in range(4):
        if q[c] != 0.0:
            return -q if q[c] < 0.0 else q
    return q


def normalize(q):
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q)


def to_quaternion(r):
    """Convert a proper rotation matrix to a canonical unit quaternion."""
    return matrices_to_quaternions(np.asarray(r, dtype=np.float64)[None])[0]


def matrices_to_quaternions(rs):
    """Vectorized rotation-matrix -> quaternion conversion, (N, 3, 3) -> (N, 4).

    Shepperd's method: pick the numerically largest of the four squared
    components per sample to avoid catastrophic cancellation.
    """
    r = np.asarray(rs, dtype=np.float64)
    n = r.shape[0]
    q = np.empty((n, 4))
    tr = np.trace(r, axis1=1, axis2=2)
    # Squared components up to a common positive factor.
    cand = np.stack(
        [
            1.0 + tr,
            1.0 + r[:, 0, 0] - r[:, 1, 1] - r[:, 2, 2],
            1.0 - r[:, 0, 0] + r[:, 1, 1] - r[:, 2, 2],
            1.0 - r[:, 0, 0] - r[:, 1, 1] + r[:, 2, 2],
        ],
        axis=1,
    )
    best = np.argmax(cand, axis=1)
    for case in range(4):
        sel = best == case
        if not np.any(sel):
            continue
        rr = r[sel]
        t = np.sqrt(cand[sel, case])
        if case == 0:
            q[sel, 0] = 0.5 * t
            q[sel, 1] = 0.5 * (rr[:, 2, 1] - rr[:, 1, 2]) / t
            q[sel, 2] = 0.5 * (rr[:, 0, 2] - rr[:, 2, 0]) / t
            q[sel, 3] = 0.5 * (rr[:, 1, 0] - rr[:, 0, 1]) / t
        elif case == 1:
            q[sel, 0] = 0.5 * (rr[:, 2, 1] - rr[:, 1, 2]) / t
            q[sel, 1] = 0.5 * t
            q[sel, 2] = 0.5 * (rr[:, 0, 1] + rr[:, 1, 0]) / t
            q[sel, 3] = 0.5 * (rr[:, 0, 2] + rr[:, 2, 0]) / t
        elif case == 2:
            q[sel, 0] = 0.5 * (rr[:, 0, 2] - rr[:, 2, 0]) / t
            q[sel, 1] = 0.5 * (rr[:, 0, 1] + rr[:, 1, 0]) / t
            q[sel, 2] = 0.5 * t
            q[sel, 3] = 0.5 * (rr[:, 1, 2] + rr[:, 2, 1]) / t
        else:
            q[sel, 0] = 0.5 * (rr[:, 1, 0] - rr[:, 0, 1]) / t
            q[sel, 1] = 0.5 * (rr[:, 0, 2] + rr[:, 2, 0]) / t
            q[sel, 2] = 0.5 * (rr[:, 1, 2] + rr[:, 2, 1]) / t
            q[sel, 3] = 0.5 * t
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return _canonicalize_rows(q)


def quaternion_to_matrix(q):
    """Reconstruct the rotation matrix of a unit quaternion."""
    w, x, y, z = np.asarray(q, dtype=np.float64)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quaternion_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quaternion_conjugate(q):
    w, x, y, z = q
    return np.array([w, -x, -y, -z])


def from_axis_angle(axis, angle):
    """Unit quaternion rotating by ``angle`` about the unit ``axis``."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return canonicalize(np.concatenate([[np.cos(half)], np.sin(half) * axis]))


def relative_rotation(q_a, q_b):
    """Axis-angle rotation taking orientation ``q_a`` to ``q_b``.

    Computes dQ = Q_b * Q_a^{-1}, canonicalizes the sign so the scalar part
    is non-negative, and extracts the angle as 2*acos(q1), which lands in
    [0, pi] (shortest rotation under the double cover).
    """
    dq = canonicalize(quaternion_multiply(q_b, quaternion_conjugate(q_a)))
    dq = normalize(dq)
    angle = 2.0 * np.arccos(np.clip(dq[0], 0.0, 1.0))
    vec = dq[1:]
    norm = np.linalg.norm(vec)
    if angle <= 1e-12 or norm == 0.0:
        axis = np.array([1.0, 0.0, 0.0])  # axis undefined at zero rotation
    else:
        axis = vec / norm
    return RotationDelta(axis=axis, angle=float(angle))


def slerp(q_a, q_b, u):
    """Constant-angular-speed interpolation along the shortest arc.

    Falls back to normalized linear interpolation below 1e-7 rad of arc to
    avoid 0/0; the result is renormalized and canonicalized.
    """
    qa = np.asarray(q_a, dtype=np.float64)
    qb = np.asarray(q_b, dtype=np.float64)
    dot = float(np.dot(qa, qb))
    if dot < 0.0:
        qb = -qb
        dot = -dot
    omega = np.arccos(np.clip(dot, 0.0, 1.0))
    if omega < _SLERP_SMALL_ANGLE:
        out = (1.0 - u) * qa + u * qb
    else:
        sin_omega = np.sin(omega)
        out = (np.sin((1.0 - u) * omega) * qa + np.sin(u * omega) * qb) / sin_omega
    return canonicalize(normalize(out))


def rel_angle_stream(quaternions):
    """Per-pair rotation angles over a quaternion stream (hot kernel)."""
    return backend.rel_angles(quaternions)


def slerp_resample(t, quaternions, t_query):
    """SLERP a quaternion stream onto new timestamps (hot kernel)."""
    return backend.slerp_resample(t, quaternions, t_query)


def _canonicalize_rows(q):
    flip = q[:, 0] < 0.0
    zero_w = q[:, 0] == 0.0
    if np.any(zero_w):
        for i in np.flatnonzero(zero_w):
            for c in range(1, 4):
                if q[i, c] != 0.0:
                    flip[i] = q[i, c] < 0.0
                    break
    q[flip] = -q[flip]
    return q
