"""Unit quaternions in (w, x, y, z) order, rotation metrics and 4x4 frames.

Everything here works on plain numpy arrays with the quaternion on the last
axis, so a single quaternion is shape (4,) and a batch is (..., 4).
"""
import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DegenerateInputError

_EPS_NORM = 1e-12


def canonicalize(q):
    """Normalize and flip sign so the first nonzero component is positive.

    q and -q encode the same rotation; this picks one representative
    deterministically for every point of S^3.
    """
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm <= _EPS_NORM):
        raise DegenerateInputError("cannot normalize a (near) zero quaternion")
    q = q / norm
    first = np.argmax(q != 0.0, axis=-1)
    lead = np.take_along_axis(q, first[..., None], axis=-1)
    return np.where(lead < 0.0, -q, q)


def angular_error(q, q_hat):
    """Rotation angle in degrees between two quaternions, 2*acos(|<q, q_hat>|).

    Evaluated as 4*atan2(|q - s q_hat|, |q + s q_hat|) with s = sign(<q, q_hat>),
    which keeps full precision near zero error where acos does not.
    """
    q = np.asarray(q, float)
    q_hat = np.asarray(q_hat, float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    q_hat = q_hat / np.linalg.norm(q_hat, axis=-1, keepdims=True)
    s = np.where(np.sum(q * q_hat, axis=-1, keepdims=True) < 0.0, -1.0, 1.0)
    diff = np.linalg.norm(q - s * q_hat, axis=-1)
    summ = np.linalg.norm(q + s * q_hat, axis=-1)
    return np.degrees(4.0 * np.arctan2(diff, summ))


def bingham_metric(q1, q2):
    """Squared dot product (q1 . q2)^2 = cos^2(theta / 2), in [0, 1]."""
    dot = np.sum(np.asarray(q1, float) * np.asarray(q2, float), axis=-1)
    return np.minimum(dot * dot, 1.0)


def multiply(p, q):
    """Hamilton product p * q."""
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    pw, px, py, pz = np.moveaxis(p, -1, 0)
    qw, qx, qy, qz = np.moveaxis(q, -1, 0)
    return np.stack([
        pw * qw - px * qx - py * qy - pz * qz,
        pw * qx + px * qw + py * qz - pz * qy,
        pw * qy - px * qz + py * qw + pz * qx,
        pw * qz + px * qy - py * qx + pz * qw,
    ], axis=-1)


def to_matrix(q):
    """3x3 rotation matrix (or stack of them) of a unit quaternion."""
    q = np.asarray(q, float)
    return Rotation.from_quat(q[..., [1, 2, 3, 0]].reshape(-1, 4)).as_matrix().reshape(q.shape[:-1] + (3, 3))


def from_matrix(R):
    """Canonical quaternion of a rotation matrix (or stack of them)."""
    R = np.asarray(R, float)
    xyzw = Rotation.from_matrix(R.reshape(-1, 3, 3)).as_quat()
    return canonicalize(xyzw[:, [3, 0, 1, 2]].reshape(R.shape[:-2] + (4,)))


def axis_angle(axis, angle):
    """Quaternion rotating by `angle` radians about `axis`."""
    axis = np.asarray(axis, float)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[np.cos(angle / 2.0)], np.sin(angle / 2.0) * axis])


def random_unit(n, rng):
    """n quaternions uniform on S^3 (canonicalized)."""
    return canonicalize(rng.standard_normal((n, 4)))


# V(q) = sum_k q_k * FRAME_BASIS[k]; the frame is linear in q.
FRAME_BASIS = np.zeros((4, 4, 4))
for _k, _pattern in enumerate([
    # rows of V, entries written as (row, col, sign) for component k
    [(0, 0, 1), (1, 1, 1), (2, 2, 1), (3, 3, -1)],
    [(1, 0, 1), (0, 1, -1), (3, 2, -1), (2, 3, -1)],
    [(2, 0, 1), (3, 1, 1), (0, 2, -1), (1, 3, 1)],
    [(3, 0, 1), (2, 1, -1), (1, 2, 1), (0, 3, 1)],
]):
    for _r, _c, _s in _pattern:
        FRAME_BASIS[_k, _r, _c] = _s


def frame_linear(q):
    """Orthonormal 4x4 frame whose first column is q.

    Closed-form construction from the parallelizability of S^3:

        [ q1 -q2 -q3  q4 ]
        [ q2  q1  q4  q3 ]
        [ q3 -q4  q1 -q2 ]
        [ q4  q3 -q2 -q1 ]
    """
    q = np.asarray(q, float)
    return np.einsum("...k,kij->...ij", q, FRAME_BASIS)


def frame_gram_schmidt(M):
    """Orthonormalize the columns of M in order (classical Gram-Schmidt)."""
    M = np.asarray(M, float)
    if M.shape != (4, 4):
        raise DegenerateInputError(f"expected a 4x4 matrix, got shape {M.shape}")
    V = np.zeros_like(M)
    for i in range(4):
        m = M[:, i]
        v = m - V[:, :i] @ (V[:, :i].T @ m)
        norm = np.linalg.norm(v)
        if norm <= 1e-10:
            raise DegenerateInputError(f"column {i} is linearly dependent on the previous ones")
        V[:, i] = v / norm
    return V


def skew4(s):
    """The 4x4 skew-symmetric matrix S(s) used by the Cayley construction."""
    a, b, c, d = np.asarray(s, float)
    return np.array([
        [0.0, -a, d, -c],
        [a, 0.0, c, b],
        [-d, -c, 0.0, -a],
        [c, -b, a, 0.0],
    ])


def frame_cayley(s):
    """Rotation V = (I - S)^-1 (I + S) from the Cayley transform of S(s).

    s need not be unit norm. The image never has -1 as an eigenvalue, so not
    every orthogonal frame is reachable this way.
    """
    S = skew4(s)
    eye = np.eye(4)
    return np.linalg.solve(eye - S, eye + S)
