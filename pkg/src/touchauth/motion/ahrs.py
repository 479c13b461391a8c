"""Quaternion attitude estimation from accelerometer, gyroscope, and
magnetometer streams.

The estimator integrates gyroscope rates through quaternion kinematics and
corrects drift each step by a normalized-gradient complementary update that
pulls the predicted gravity and magnetic-field directions toward the
measured ones (gain beta).  Quaternions are body-to-world with world z up;
a static, level device with a = (0, 0, +9.81) sits at the identity.

Euler conversion follows the pipeline's fixed convention:

    phi   = atan2(2(q2*q3 + q0*q1), 1 - 2(q1^2 + q2^2))
    theta = asin (2(q1*q3 - q0*q2))
    psi   = atan2(2(q1*q2 + q0*q3), 1 - 2(q2^2 + q3^2))

Note the pitch sign is opposite the common aerospace convention; the
matching inverse (euler_to_quat) keeps round trips exact.
"""

from __future__ import annotations

import math

import numpy as np


def quat_multiply(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    p0, p1, p2, p3 = p
    q0, q1, q2, q3 = q
    return np.array([
        p0 * q0 - p1 * q1 - p2 * q2 - p3 * q3,
        p0 * q1 + p1 * q0 + p2 * q3 - p3 * q2,
        p0 * q2 - p1 * q3 + p2 * q0 + p3 * q1,
        p0 * q3 + p1 * q2 - p2 * q1 + p3 * q0,
    ])


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix (body -> world) of a unit quaternion."""
    q0, q1, q2, q3 = q
    return np.array([
        [1 - 2 * (q2 * q2 + q3 * q3), 2 * (q1 * q2 - q0 * q3), 2 * (q1 * q3 + q0 * q2)],
        [2 * (q1 * q2 + q0 * q3), 1 - 2 * (q1 * q1 + q3 * q3), 2 * (q2 * q3 - q0 * q1)],
        [2 * (q1 * q3 - q0 * q2), 2 * (q2 * q3 + q0 * q1), 1 - 2 * (q1 * q1 + q2 * q2)],
    ])


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Unit quaternion of a rotation matrix (scalar part non-negative)."""
    t = np.trace(R)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(R)))
        if i == 0:
            s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
            q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s,
                          (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
        elif i == 1:
            s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
            q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s,
                          0.25 * s, (R[1, 2] + R[2, 1]) / s])
        else:
            s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
            q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
                          (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def quat_to_euler(q) -> tuple[float, float, float]:
    """(roll phi, pitch theta, yaw psi) in radians; theta clamped to [-pi/2, pi/2]."""
    q0, q1, q2, q3 = q
    phi = math.atan2(2 * (q2 * q3 + q0 * q1), 1 - 2 * (q1 * q1 + q2 * q2))
    theta = math.asin(max(-1.0, min(1.0, 2 * (q1 * q3 - q0 * q2))))
    psi = math.atan2(2 * (q1 * q2 + q0 * q3), 1 - 2 * (q2 * q2 + q3 * q3))
    if phi <= -math.pi:
        phi += 2 * math.pi
    if psi <= -math.pi:
        psi += 2 * math.pi
    return phi, theta, psi


def euler_to_quat(phi: float, theta: float, psi: float) -> np.ndarray:
    """Inverse of quat_to_euler under the same convention."""
    qx = np.array([math.cos(phi / 2), math.sin(phi / 2), 0.0, 0.0])
    qy = np.array([math.cos(-theta / 2), 0.0, math.sin(-theta / 2), 0.0])
    qz = np.array([math.cos(psi / 2), 0.0, 0.0, math.sin(psi / 2)])
    return quat_multiply(qz, quat_multiply(qy, qx))


def euler_angles(quats: np.ndarray) -> np.ndarray:
    """Vectorized quat_to_euler over an (n, 4) array -> (n, 3) [phi, theta, psi]."""
    q0, q1, q2, q3 = quats[:, 0], quats[:, 1], quats[:, 2], quats[:, 3]
    phi = np.arctan2(2 * (q2 * q3 + q0 * q1), 1 - 2 * (q1 * q1 + q2 * q2))
    theta = np.arcsin(np.clip(2 * (q1 * q3 - q0 * q2), -1.0, 1.0))
    psi = np.arctan2(2 * (q1 * q2 + q0 * q3), 1 - 2 * (q2 * q2 + q3 * q3))
    return np.stack([phi, theta, psi], axis=1)


def triad_init(a, m) -> np.ndarray:
    """Initial attitude from one accelerometer + magnetometer sample.

    Builds the world axes in body coordinates: up from gravity, north from
    the horizontal magnetic component.  Falls back to identity / tilt-only
    when a sample is degenerate.
    """
    a = np.asarray(a, dtype=float)
    m = np.asarray(m, dtype=float)
    na = np.linalg.norm(a)
    if na < 1e-9:
        return np.array([1.0, 0.0, 0.0, 0.0])
    up = a / na
    horiz = m - np.dot(m, up) * up
    nh = np.linalg.norm(horiz)
    if nh < 1e-9:
        # No usable heading: pick any horizontal x axis.
        ref = np.array([1.0, 0.0, 0.0]) if abs(up[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        horiz = ref - np.dot(ref, up) * up
        nh = np.linalg.norm(horiz)
    north = horiz / nh
    west = np.cross(up, north)
    R = np.stack([north, west, up])  # rows: world axes in body frame -> body-to-world
    return matrix_to_quat(R)


def _fusion_step(q0, q1, q2, q3, gx, gy, gz, ax, ay, az, mx, my, mz, beta, dt):
    """One gradient-corrected integration step; plain floats for speed."""
    q_dot0 = 0.5 * (-q1 * gx - q2 * gy - q3 * gz)
    q_dot1 = 0.5 * (q0 * gx + q2 * gz - q3 * gy)
    q_dot2 = 0.5 * (q0 * gy - q1 * gz + q3 * gx)
    q_dot3 = 0.5 * (q0 * gz + q1 * gy - q2 * gx)

    a_norm = math.sqrt(ax * ax + ay * ay + az * az)
    m_norm = math.sqrt(mx * mx + my * my + mz * mz)
    use_correction = beta > 0.0 and a_norm > 1e-9 and m_norm > 1e-9
    if use_correction:
        ax, ay, az = ax / a_norm, ay / a_norm, az / a_norm
        mx, my, mz = mx / m_norm, my / m_norm, mz / m_norm

        q0q0 = q0 * q0
        q0q1 = q0 * q1
        q0q2 = q0 * q2
        q0q3 = q0 * q3
        q1q1 = q1 * q1
        q1q2 = q1 * q2
        q1q3 = q1 * q3
        q2q2 = q2 * q2
        q2q3 = q2 * q3
        q3q3 = q3 * q3

        # Earth-frame reference field from the current estimate.
        hx = (mx * q0q0 - 2 * q0 * my * q3 + 2 * q0 * mz * q2 + mx * q1q1
              + 2 * q1 * my * q2 + 2 * q1 * mz * q3 - mx * q2q2 - mx * q3q3)
        hy = (2 * q0 * mx * q3 + my * q0q0 - 2 * q0 * mz * q1 + 2 * q1 * mx * q2
              - my * q1q1 + my * q2q2 + 2 * q2 * mz * q3 - my * q3q3)
        bx2 = math.sqrt(hx * hx + hy * hy)
        bz2 = (-2 * q0 * mx * q2 + 2 * q0 * my * q1 + mz * q0q0 + 2 * q1 * mx * q3
               - mz * q1q1 + 2 * q2 * my * q3 - mz * q2q2 + mz * q3q3)
        bx4 = 2 * bx2
        bz4 = 2 * bz2

        fg1 = 2 * q1q3 - 2 * q0q2 - ax
        fg2 = 2 * q0q1 + 2 * q2q3 - ay
        fg3 = 1 - 2 * q1q1 - 2 * q2q2 - az
        fb1 = bx2 * (0.5 - q2q2 - q3q3) + bz2 * (q1q3 - q0q2) - mx
        fb2 = bx2 * (q1q2 - q0q3) + bz2 * (q0q1 + q2q3) - my
        fb3 = bx2 * (q0q2 + q1q3) + bz2 * (0.5 - q1q1 - q2q2) - mz

        s0 = (-2 * q2 * fg1 + 2 * q1 * fg2 - bz2 * q2 * fb1
              + (-bx2 * q3 + bz2 * q1) * fb2 + bx2 * q2 * fb3)
        s1 = (2 * q3 * fg1 + 2 * q0 * fg2 - 4 * q1 * fg3 + bz2 * q3 * fb1
              + (bx2 * q2 + bz2 * q0) * fb2 + (bx2 * q3 - bz4 * q1) * fb3)
        s2 = (-2 * q0 * fg1 + 2 * q3 * fg2 - 4 * q2 * fg3
              + (-bx4 * q2 - bz2 * q0) * fb1 + (bx2 * q1 + bz2 * q3) * fb2
              + (bx2 * q0 - bz4 * q2) * fb3)
        s3 = (2 * q1 * fg1 + 2 * q2 * fg2 + (-bx4 * q3 + bz2 * q1) * fb1
              + (-bx2 * q0 + bz2 * q2) * fb2 + bx2 * q1 * fb3)
        s_norm = math.sqrt(s0 * s0 + s1 * s1 + s2 * s2 + s3 * s3)
        if s_norm > 1e-12:
            q_dot0 -= beta * s0 / s_norm
            q_dot1 -= beta * s1 / s_norm
            q_dot2 -= beta * s2 / s_norm
            q_dot3 -= beta * s3 / s_norm

    q0 += q_dot0 * dt
    q1 += q_dot1 * dt
    q2 += q_dot2 * dt
    q3 += q_dot3 * dt
    inv = 1.0 / math.sqrt(q0 * q0 + q1 * q1 + q2 * q2 + q3 * q3)
    return q0 * inv, q1 * inv, q2 * inv, q3 * inv


def fuse_orientation(a: np.ndarray, g: np.ndarray, m: np.ndarray, fs: float,
                     beta: float = 0.1) -> np.ndarray:
    """Estimate orientation quaternions for uniformly sampled IMU channels.

    a, g, m are (n, 3) arrays (m/s^2, rad/s, uT).  Returns (n, 4) unit
    quaternions; q[0] comes from TRIAD alignment on the first sample.
    Samples with a zero-norm accelerometer or magnetometer fall back to a
    gyro-only step.  beta=0 disables correction entirely (pure integration).
    """
    a = np.asarray(a, dtype=float)
    g = np.asarray(g, dtype=float)
    m = np.asarray(m, dtype=float)
    n = a.shape[0]
    dt = 1.0 / fs
    quats = np.empty((n, 4))
    q = triad_init(a[0], m[0])
    q0, q1, q2, q3 = float(q[0]), float(q[1]), float(q[2]), float(q[3])
    quats[0] = (q0, q1, q2, q3)
    al, gl, ml = a.tolist(), g.tolist(), m.tolist()
    for i in range(1, n):
        gx, gy, gz = gl[i]
        ax, ay, az = al[i]
        mx, my, mz = ml[i]
        q0, q1, q2, q3 = _fusion_step(q0, q1, q2, q3, gx, gy, gz,
                                      ax, ay, az, mx, my, mz, beta, dt)
        quats[i] = (q0, q1, q2, q3)
    return quats
