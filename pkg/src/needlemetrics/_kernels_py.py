"""Pure-python (numpy) implementations of the hot stream kernels.

Mirrors the element-wise arithmetic of the compiled module in
``_kernels_cy.pyx`` so both backends agree to machine precision.
"""

import numpy as np

BACKEND = "python"


def rel_angles(q):
    """Rotation angle between consecutive unit quaternions, shape (N-1,).

    The scalar part of Q_{j+1} * Q_j^{-1} equals dot(Q_j, Q_{j+1}) for unit
    quaternions, so the angle is 2*acos(|dot|) with the absolute value
    selecting the shortest-arc (double cover) representative.
    """
    q = np.asarray(q, dtype=np.float64)
    dots = np.abs(np.sum(q[:-1] * q[1:], axis=1))
    return 2.0 * np.arccos(np.clip(dots, 0.0, 1.0))


def slerp_resample(t, q, t_query):
    """Spherical linear interpolation of a quaternion stream onto new times.

    Each output is renormalized and sign-canonicalized (scalar part >= 0;
    ties broken on the first nonzero component).
    """
    t = np.asarray(t, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    t_query = np.asarray(t_query, dtype=np.float64)

    idx = np.searchsorted(t, t_query, side="right") - 1
    idx = np.clip(idx, 0, len(t) - 2)
    t0 = t[idx]
    t1 = t[idx + 1]
    u = (t_query - t0) / (t1 - t0)

    qa = q[idx]
    qb = q[idx + 1]
    dots = np.sum(qa * qb, axis=1)
    sign = np.where(dots < 0.0, -1.0, 1.0)
    qb = qb * sign[:, None]
    dots = np.clip(np.abs(dots), 0.0, 1.0)
    omega = np.arccos(dots)

    small = omega < 1e-7
    with np.errstate(invalid="ignore", divide="ignore"):
        sin_omega = np.sin(omega)
        wa = np.sin((1.0 - u) * omega) / sin_omega
        wb = np.sin(u * omega) / sin_omega
    wa = np.where(small, 1.0 - u, wa)
    wb = np.where(small, u, wb)

    out = wa[:, None] * qa + wb[:, None] * qb
    out /= np.linalg.norm(out, axis=1, keepdims=True)
    return _canonicalize_rows(out)


def path_length(x):
    """Accumulated euclidean distance along a (N, 3) position stream."""
    x = np.asarray(x, dtype=np.float64)
    d = np.diff(x, axis=0)
    return float(np.sum(np.sqrt(np.sum(d * d, axis=1))))


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
