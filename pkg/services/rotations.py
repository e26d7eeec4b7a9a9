"""
Quaternion helpers. Quaternions are stored scalar-first as (w, x, y, z).

All functions accept a single quaternion of shape (4,) or a batch of shape (N, 4).
"""

import numpy as np

UNIT_TOLERANCE = 1e-6
IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def is_unit(q, tol: float = UNIT_TOLERANCE) -> bool:
    q = np.asarray(q, dtype=np.float64)
    return bool(np.all(np.abs(np.linalg.norm(q, axis=-1) - 1.0) <= tol))


def normalize(q):
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def conjugate(q):
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def multiply(a, b):
    """Hamilton product a*b (apply b first, then a)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def to_matrix(q):
    """Rotation matrix of a unit quaternion; (4,) -> (3, 3), (N, 4) -> (N, 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = np.moveaxis(q, -1, 0)
    rows = [
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ]
    return np.stack([np.stack(row, axis=-1) for row in rows], axis=-2)


def from_axis_angle(axis, angle_rad: float):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle_rad
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def matrix_grad_to_quat(q, grad_matrix):
    """
    Chain dL/dR (3x3, or Nx3x3) into dL/dq for the raw quaternion q.

    The matrix is built from q/|q|, so the gradient is projected onto the
    tangent space of the unit sphere and divided by |q|.
    """
    q = np.asarray(q, dtype=np.float64)
    g = np.asarray(grad_matrix, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    qn = q / norm
    w, x, y, z = np.moveaxis(qn, -1, 0)
    G = lambda i, j: g[..., i, j]  # noqa: E731

    dw = 2 * (-z * G(0, 1) + y * G(0, 2) + z * G(1, 0) - x * G(1, 2) - y * G(2, 0) + x * G(2, 1))
    dx = 2 * (y * G(0, 1) + z * G(0, 2) + y * G(1, 0) - 2 * x * G(1, 1) - w * G(1, 2)
              + z * G(2, 0) + w * G(2, 1) - 2 * x * G(2, 2))
    dy = 2 * (-2 * y * G(0, 0) + x * G(0, 1) + w * G(0, 2) + x * G(1, 0) + z * G(1, 2)
              - w * G(2, 0) + z * G(2, 1) - 2 * y * G(2, 2))
    dz = 2 * (-2 * z * G(0, 0) - w * G(0, 1) + x * G(0, 2) + w * G(1, 0) - 2 * z * G(1, 1)
              + y * G(1, 2) + x * G(2, 0) + y * G(2, 1))
    dqn = np.stack([dw, dx, dy, dz], axis=-1)
    radial = np.sum(dqn * qn, axis=-1, keepdims=True)
    return (dqn - radial * qn) / norm
