"""Statistical linear shape model: PCA over registered training shapes.

A shape is the flat vector ``(V11, V12, V13, ..., VN3)`` of ``N`` vertices.
The model keeps the mean shape, an orthonormal basis ``U`` of the ``K``
leading covariance eigenvectors (stored ``(3N, K)``; row block ``n`` is the
``3 x K`` matrix ``W_n``) and the eigenvalues.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ModelError

ORTHO_TOL = 1e-8
# eigenvalues below this fraction of the largest are treated as zero variance
ZERO_VARIANCE = 1e-12


@dataclass(frozen=True)
class ExpressionPart:
    """Mean expressive-neutral offset with its own modes and eigenvalues."""

    mean: np.ndarray
    basis: np.ndarray
    eigvals: np.ndarray


@dataclass(frozen=True)
class ShapeModel:
    mean: np.ndarray
    basis: np.ndarray
    eigvals: np.ndarray
    triangles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    landmark_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    expression: ExpressionPart | None = None

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).ravel()
        basis = np.asarray(self.basis, dtype=float)
        eig = np.asarray(self.eigvals, dtype=float).ravel()
        tri = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        lm = np.asarray(self.landmark_indices, dtype=np.int64).ravel()
        if mean.size == 0 or mean.size % 3:
            raise ModelError("mean shape length must be a positive multiple of 3")
        n = mean.size // 3
        if basis.ndim != 2 or basis.shape[0] != mean.size:
            raise ModelError(f"basis must be (3N, K) with 3N={mean.size}, got {basis.shape}")
        if basis.shape[1] < 1 or eig.size != basis.shape[1]:
            raise ModelError("need K >= 1 modes with one eigenvalue each")
        _check_spectrum(eig)
        if tri.size and (tri.min() < 0 or tri.max() >= n):
            raise ModelError("triangle index out of range")
        if lm.size and (lm.min() < 0 or lm.max() >= n or np.unique(lm).size != lm.size):
            raise ModelError("landmark indices must be distinct and < N")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(basis))):
            raise ModelError("model arrays must be finite")
        if self.expression is not None:
            ex = self.expression
            em = np.asarray(ex.mean, dtype=float).ravel()
            eb = np.asarray(ex.basis, dtype=float)
            ee = np.asarray(ex.eigvals, dtype=float).ravel()
            if em.size != mean.size or eb.ndim != 2 or eb.shape[0] != mean.size or eb.shape[1] != ee.size:
                raise ModelError("expression part does not match the identity part")
            _check_spectrum(ee)
            object.__setattr__(self, "expression", ExpressionPart(_frozen(em), _frozen(eb), _frozen(ee)))
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "basis", _frozen(basis))
        object.__setattr__(self, "eigvals", _frozen(eig))
        object.__setattr__(self, "triangles", _frozen(tri))
        object.__setattr__(self, "landmark_indices", _frozen(lm))

    @property
    def n_vertices(self) -> int:
        return self.mean.size // 3

    @property
    def n_modes(self) -> int:
        return self.basis.shape[1]

    @property
    def mean_vertices(self) -> np.ndarray:
        return self.mean.reshape(-1, 3)

    @property
    def modes(self) -> np.ndarray:
        """Per-vertex reconstruction blocks ``W_n`` as an ``(N, 3, K)`` array."""
        return self.basis.reshape(-1, 3, self.n_modes)

    @property
    def landmark_mean(self) -> np.ndarray:
        return self.mean_vertices[self.landmark_indices]

    @property
    def landmark_modes(self) -> np.ndarray:
        return self.modes[self.landmark_indices]

    def check_orthonormal(self, tol: float = ORTHO_TOL) -> None:
        for name, U in [("identity", self.basis)] + (
            [("expression", self.expression.basis)] if self.expression is not None else []
        ):
            err = np.abs(U.T @ U - np.eye(U.shape[1])).max()
            if err > tol:
                raise ModelError(f"{name} basis is not orthonormal (max deviation {err:.3g})")

    def fitting_model(self) -> "ShapeModel":
        """Single linear model used for fitting.

        When an expression part is present the two means are summed and the
        bases and eigenvalues concatenated, so one embedding covers both.
        """
        if self.expression is None:
            return self
        ex = self.expression
        eig = np.concatenate([self.eigvals, ex.eigvals])
        order = np.argsort(-eig, kind="stable")
        return replace(
            self,
            mean=self.mean + ex.mean,
            basis=np.hstack([self.basis, ex.basis])[:, order],
            eigvals=eig[order],
            expression=None,
        )


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a)
    a.flags.writeable = False
    return a


def _check_spectrum(eig: np.ndarray) -> None:
    if not np.all(np.isfinite(eig)) or np.any(eig <= 0):
        raise ModelError("eigenvalues must be positive")
    if np.any(np.diff(eig) > 0):
        raise ModelError("eigenvalues must be sorted in descending order")


def _stack(training) -> np.ndarray:
    S = [np.asarray(s, dtype=float).ravel() for s in training]
    if len(S) < 2:
        raise ValueError("at least two training shapes are required")
    if len({s.size for s in S}) != 1:
        raise ValueError("training shapes have different lengths")
    if S[0].size % 3:
        raise ValueError("shape length must be a multiple of 3")
    return np.vstack(S)


def principal_components(D: np.ndarray):
    """Eigenpairs of ``D^T D / M`` for centered data ``D`` of shape ``(M, 3N)``.

    Uses the ``M x M`` Gram matrix when ``3N > M``.  Returns eigenvalues in
    descending order and the matching orthonormal eigenvectors as columns.
    """
    M, P = D.shape
    if P > M:
        G = D @ D.T / M
        vals, vecs = np.linalg.eigh(0.5 * (G + G.T))
        vals, vecs = vals[::-1], vecs[:, ::-1]
        keep = vals > ZERO_VARIANCE * max(vals[0], 0.0)
        vals = vals[keep]
        U = D.T @ vecs[:, keep] / np.sqrt(M * vals)
        # one Gram-Schmidt pass removes the rounding left by the division
        U, R = np.linalg.qr(U)
        U = U * np.sign(np.diag(R))
    else:
        C = D.T @ D / M
        vals, U = np.linalg.eigh(0.5 * (C + C.T))
        vals, U = vals[::-1], U[:, ::-1]
    return np.clip(vals, 0.0, None), U


def _sign_convention(U: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of every mode is positive
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


def _truncate(vals, variance_fraction, min_k, max_k):
    total = vals.sum()
    if total <= 0:
        return 0
    valid = int(np.count_nonzero(vals > ZERO_VARIANCE * vals[0]))
    k = int(np.searchsorted(np.cumsum(vals), variance_fraction * total * (1 - 1e-12)) + 1)
    return min(max(k, min_k), valid, max_k)


def _pca_part(shapes: np.ndarray, variance_fraction: float, min_k: int):
    M = shapes.shape[0]
    mean = shapes.mean(axis=0)
    D = shapes - mean
    vals, U = principal_components(D)
    k = _truncate(vals, variance_fraction, min_k, M - 1)
    if k == 0:
        # no variance at all: keep min_k inert modes with a vanishing eigenvalue
        k = max(min_k, 1)
        scale = max(float(np.mean(mean * mean)), 1.0)
        return mean, np.eye(mean.size, k), np.full(k, ZERO_VARIANCE * scale), vals
    return mean, _sign_convention(U[:, :k]), vals[:k].copy(), vals


def build_model(
    training,
    variance_fraction: float = 0.95,
    min_k: int = 1,
    triangles=None,
    landmark_indices=None,
    expressive=None,
) -> ShapeModel:
    """Build a :class:`ShapeModel` from registered training shapes.

    ``K`` is the smallest number of modes whose eigenvalues reach
    ``variance_fraction`` of the total variance, clamped to at least ``min_k``
    and at most ``M - 1``; modes with vanishing variance are never kept.
    ``expressive``, when given, holds one expressive scan per training shape
    and adds a second PCA over the expressive-neutral offsets.
    """
    if not 0 < variance_fraction <= 1:
        raise ValueError("variance_fraction must lie in (0, 1]")
    if min_k < 1:
        raise ValueError("min_k must be >= 1")
    S = _stack(training)
    mean, U, eig, _ = _pca_part(S, variance_fraction, min_k)
    expression = None
    if expressive is not None:
        E = _stack(expressive)
        if E.shape != S.shape:
            raise ValueError("expressive scans must pair one-to-one with training shapes")
        em, eu, ee, _ = _pca_part(E - S, variance_fraction, min_k)
        expression = ExpressionPart(em, eu, ee)
    return ShapeModel(
        mean=mean,
        basis=U,
        eigvals=eig,
        triangles=np.zeros((0, 3), dtype=np.int64) if triangles is None else triangles,
        landmark_indices=np.zeros(0, dtype=np.int64) if landmark_indices is None else landmark_indices,
        expression=expression,
    )


def embed(model: ShapeModel, S) -> np.ndarray:
    """Project a shape onto the model: ``s = U^T (S - mean)``."""
    S = np.asarray(S, dtype=float).ravel()
    if S.size != model.mean.size:
        raise ValueError(f"shape has length {S.size}, model expects {model.mean.size}")
    return model.basis.T @ (S - model.mean)


def reconstruct(model: ShapeModel, s) -> np.ndarray:
    """Shape ``mean + U s`` as a flat vector."""
    s = np.asarray(s, dtype=float).ravel()
    if s.size != model.n_modes:
        raise ValueError(f"embedding has length {s.size}, model has {model.n_modes} modes")
    return model.mean + model.basis @ s


def compose_identity_expression(model: ShapeModel, s_id, s_expr) -> np.ndarray:
    """Shape from identity and expression embeddings (both means plus both mode products)."""
    if model.expression is None:
        raise ModelError("model has no expression part")
    ex = model.expression
    s_expr = np.asarray(s_expr, dtype=float).ravel()
    if s_expr.size != ex.basis.shape[1]:
        raise ValueError("expression embedding length does not match the expression modes")
    return reconstruct(model, s_id) + ex.mean + ex.basis @ s_expr


def ellipsoid_check(model: ShapeModel, s) -> float:
    """Quadratic form ``s^T Lambda^-1 s``; plausible shapes have a value <= 1."""
    s = np.asarray(s, dtype=float).ravel()
    if s.size != model.n_modes:
        raise ValueError("embedding length does not match the model")
    return float(np.sum(s * s / model.eigvals))
