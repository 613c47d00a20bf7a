"""Point sets, similarity transforms and unit-quaternion rotations.

Point sets are plain ``(J, 3)`` float arrays; row ``j`` of one set corresponds
to row ``j`` of another.  Quaternions are ``(w, x, y, z)`` with ``w >= 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateConfigurationError,
    DegenerateInputError,
    SingularCovarianceError,
)

# relative floor on covariance eigenvalues, fraction of trace/3
COV_FLOOR = 1e-8
# second/first singular value ratio below which a configuration is degenerate
DEGENERATE_RATIO = 1e-12


def as_points(P) -> np.ndarray:
    """Validate and return ``P`` as a float ``(J, 3)`` array."""
    P = np.asarray(P, dtype=float)
    if P.ndim == 1 and P.size == 3:
        P = P.reshape(1, 3)
    if P.ndim != 2 or P.shape[1] != 3 or P.shape[0] < 1:
        raise ValueError(f"expected a non-empty (J, 3) point array, got shape {P.shape}")
    if not np.all(np.isfinite(P)):
        raise ValueError("point coordinates must be finite")
    return P


def canonical_quat(q) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(4)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n < 1e-300:
        raise DegenerateInputError("zero quaternion has no rotation")
    q = q / n
    if q[0] < 0:
        q = -q
    return q


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix of a (renormalized) quaternion ``(w, x, y, z)``."""
    w, x, y, z = canonical_quat(q)
    return np.array(
        [
            [w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z],
        ]
    )


def matrix_to_quat(R) -> np.ndarray:
    """Inverse of :func:`quat_to_matrix` (Shepperd's method), canonical sign."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    diag = np.diag(R)
    k = int(np.argmax([tr, *diag]))
    if k == 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif k == 1:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif k == 2:
        s = 2.0 * np.sqrt(1.0 - R[0, 0] + R[1, 1] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 - R[0, 0] - R[1, 1] + R[2, 2])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return canonical_quat(q)


def quat_multiply(p, q) -> np.ndarray:
    """Hamilton product ``p * q`` (apply ``q`` first, then ``p``)."""
    pw, px, py, pz = p
    qw, qx, qy, qz = q
    return np.array(
        [
            pw * qw - px * qx - py * qy - pz * qz,
            pw * qx + px * qw + py * qz - pz * qy,
            pw * qy - px * qz + py * qw + pz * qx,
            pw * qz + px * qy - py * qx + pz * qw,
        ]
    )


def quat_from_rotvec(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    theta = np.linalg.norm(v)
    if theta < 1e-12:
        # second-order expansion keeps tiny steps exact to rounding
        return canonical_quat([1.0 - theta * theta / 8.0, *(0.5 * v)])
    axis = v / theta
    return canonical_quat([np.cos(theta / 2), *(np.sin(theta / 2) * axis)])


def axis_angle_quat(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    return quat_from_rotvec(axis / np.linalg.norm(axis) * angle)


def rotation_angle(R1, R2) -> float:
    """Geodesic angle (radians) between two rotation matrices."""
    d = np.linalg.norm(np.asarray(R1) - np.asarray(R2))
    return float(2.0 * np.arcsin(min(1.0, d / (2.0 * np.sqrt(2.0)))))


@dataclass(frozen=True)
class SimilarityTransform:
    """``x -> scale * R(rotation) @ x + translation``."""

    scale: float = 1.0
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        scale = float(self.scale)
        if not (np.isfinite(scale) and scale > 0):
            raise ValueError(f"scale must be positive, got {self.scale}")
        q = canonical_quat(self.rotation)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        q.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls()

    @classmethod
    def from_matrix(cls, scale, R, translation) -> "SimilarityTransform":
        return cls(scale, matrix_to_quat(R), translation)

    @property
    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def __call__(self, P) -> np.ndarray:
        return apply_transform(self, P)

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "quaternion": [float(v) for v in self.rotation],
            "translation": [float(v) for v in self.translation],
        }

    @classmethod
    def from_dict(cls, d) -> "SimilarityTransform":
        return cls(d["scale"], d["quaternion"], d["translation"])


def apply_transform(T: SimilarityTransform, P) -> np.ndarray:
    P = as_points(P)
    return T.scale * P @ T.matrix.T + T.translation


def inverse_pose(T: SimilarityTransform) -> SimilarityTransform:
    """Inverse similarity: scale 1/s, rotation R^T, translation -R^T t / s."""
    R = T.matrix
    inv_scale = 1.0 / T.scale
    q = T.rotation.copy()
    q[1:] = -q[1:]
    return SimilarityTransform(inv_scale, q, -inv_scale * (R.T @ T.translation))


def compose(A: SimilarityTransform, B: SimilarityTransform) -> SimilarityTransform:
    """Transform equivalent to applying ``B`` then ``A``."""
    return SimilarityTransform(
        A.scale * B.scale,
        quat_multiply(A.rotation, B.rotation),
        A.scale * (A.matrix @ B.translation) + A.translation,
    )


def yaw_degrees(R) -> float:
    """Yaw (rotation about the vertical image axis) of ``R`` in Z-Y-X order."""
    R = np.asarray(R, dtype=float)
    return float(np.degrees(np.arcsin(np.clip(-R[2, 0], -1.0, 1.0))))


def regularize_covariance(S, abs_floor: float = 0.0) -> np.ndarray:
    """Symmetrize ``S`` and clamp its eigenvalues to ``1e-8 * trace / 3``.

    ``abs_floor`` optionally raises the clamp to an absolute variance.
    Raises :class:`SingularCovarianceError` when the resulting floor is not
    positive, since the matrix then cannot be made invertible.
    """
    S = np.asarray(S, dtype=float)
    S = 0.5 * (S + S.T)
    floor = max(COV_FLOOR * np.trace(S) / 3.0, abs_floor)
    if not np.isfinite(floor) or floor <= 0:
        raise SingularCovarianceError("covariance has non-positive trace")
    vals, vecs = np.linalg.eigh(S)
    if vals[0] >= floor:
        return S
    vals = np.maximum(vals, floor)
    S = (vecs * vals) @ vecs.T
    return 0.5 * (S + S.T)


def covariance_inverse(S) -> tuple[np.ndarray, float]:
    """Return ``(inverse, log-determinant)`` of a regularized covariance."""
    S = np.asarray(S, dtype=float)
    vals, vecs = np.linalg.eigh(0.5 * (S + S.T))
    if not np.all(np.isfinite(vals)) or vals[-1] <= 0:
        raise SingularCovarianceError("covariance is not positive definite")
    if vals[0] < COV_FLOOR * vals.sum() / 3.0 * (1 - 1e-9):
        raise SingularCovarianceError(
            f"smallest covariance eigenvalue {vals[0]:.3g} is below the floor"
        )
    inv = (vecs / vals) @ vecs.T
    return 0.5 * (inv + inv.T), float(np.sum(np.log(vals)))


def mahalanobis_sq(e, S) -> np.ndarray | float:
    """``e^T S^-1 e`` for one residual ``(3,)`` or a stack ``(J, 3)``."""
    inv, _ = covariance_inverse(S)
    e = np.asarray(e, dtype=float)
    if e.ndim == 1:
        return float(e @ inv @ e)
    return np.einsum("ji,ik,jk->j", e, inv, e)


def weighted_centroid(P: np.ndarray, w: np.ndarray) -> np.ndarray:
    return (w[:, None] * P).sum(axis=0) / w.sum()


def _check_nondegenerate(M: np.ndarray) -> None:
    sv = np.linalg.svd(M, compute_uv=False)
    if not sv[0] > 0 or sv[1] < DEGENERATE_RATIO * sv[0]:
        raise DegenerateConfigurationError(
            "point configuration is rank deficient (collinear or coincident points)"
        )


def horn_align(X, Z, weights=None, symmetric_scale: bool = True) -> SimilarityTransform:
    """Closed-form weighted similarity transform mapping ``X`` onto ``Z``.

    The rotation is the dominant eigenvector of Horn's 4x4 quaternion matrix.
    By default the scale is Horn's symmetric estimate
    ``sqrt(sum w|Z'|^2 / sum w|X'|^2)``, which coincides with the robust
    scale update for an isotropic covariance and uniform weights.  With
    ``symmetric_scale=False`` the least-squares scale is returned instead.
    Both agree on noiseless data.
    """
    X = as_points(X)
    Z = as_points(Z)
    if X.shape != Z.shape:
        raise ValueError("point sets must have the same length")
    if X.shape[0] < 3:
        raise DegenerateConfigurationError("at least 3 points are required")
    w = np.ones(len(X)) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (len(X),) or np.any(w < 0) or not w.sum() > 0:
        raise ValueError("weights must be non-negative with a positive sum")

    xc = weighted_centroid(X, w)
    zc = weighted_centroid(Z, w)
    Xp = X - xc
    Zp = Z - zc
    S = (w[:, None] * Xp).T @ Zp
    _check_nondegenerate(S)

    (sxx, sxy, sxz), (syx, syy, syz), (szx, szy, szz) = S
    N = np.array(
        [
            [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
            [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
            [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
            [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
        ]
    )
    _, vecs = np.linalg.eigh(N)
    q = canonical_quat(vecs[:, -1])
    R = quat_to_matrix(q)

    RXp = Xp @ R.T
    denom = float(np.sum(w * np.sum(RXp * RXp, axis=1)))
    if symmetric_scale:
        scale = np.sqrt(float(np.sum(w * np.sum(Zp * Zp, axis=1))) / denom)
    else:
        scale = float(np.sum(w * np.sum(Zp * RXp, axis=1))) / denom
    if not scale > 0:
        raise DegenerateConfigurationError("closed-form scale is not positive")
    return SimilarityTransform(scale, q, zc - scale * (R @ xc))
