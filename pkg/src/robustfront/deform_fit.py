"""Robust EM fit of a deformable shape model to a landmark set.

Extends :mod:`robustfront.robust_align` with the shape embedding ``s``: the
model landmarks ``mean_j + W_j s`` are scaled, rotated and translated onto
the observations, and ``s`` is penalized by ``eta/2 s^T Lambda^-1 s``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateConfigurationError, SingularSystemError, SolverFailure
from .geometry import (
    SimilarityTransform,
    as_points,
    covariance_inverse,
    horn_align,
    quat_to_matrix,
    regularize_covariance,
    weighted_centroid,
    _check_nondegenerate,
)
from .robust_align import (
    AlignConfig,
    StudentState,
    e_step,
    exact_floor,
    param_change,
    q_value,
    robust_scale,
    solve_rotation,
    student_nll,
    update_mu,
)
from .shape_model import ShapeModel, ellipsoid_check

log = logging.getLogger(__name__)


class EllipsoidWarning(RuntimeWarning):
    """The fitted embedding lies outside the plausible-shape ellipsoid."""


@dataclass
class FitConfig(AlignConfig):
    eta: float = 1.0
    # False gives the Gaussian baseline: unit weights, mu frozen
    robust: bool = True

    def __post_init__(self):
        super().__post_init__()
        if not self.eta >= 0:
            raise ValueError("eta must be non-negative")


@dataclass
class FitResult:
    transform: SimilarityTransform
    embedding: np.ndarray
    student: StudentState
    iterations: int
    q_trace: list = field(default_factory=list)
    nll_trace: list = field(default_factory=list)
    converged: bool = False
    exact: bool = False

    def landmarks(self, model: ShapeModel) -> np.ndarray:
        """Fitted model landmarks mapped into the observation frame."""
        m = model.fitting_model()
        return self.transform(m.landmark_mean + m.landmark_modes @ self.embedding)

    def vertices(self, model: ShapeModel) -> np.ndarray:
        """All fitted vertices ``sigma Q (mean_n + W_n s) + d``."""
        m = model.fitting_model()
        return self.transform(m.mean_vertices + m.modes @ self.embedding)


def _landmark_parts(model: ShapeModel, Y):
    m = model.fitting_model()
    Y = as_points(Y)
    if len(m.landmark_indices) != len(Y):
        raise ValueError(
            f"{len(Y)} landmarks given, model has {len(m.landmark_indices)} landmark vertices"
        )
    return m, Y, m.landmark_mean, m.landmark_modes


def q_objective_reg(Y, model: ShapeModel, T: SimilarityTransform, s, state: StudentState, eta: float) -> float:
    """Expected complete-data objective plus the ``eta/2 s^T Lambda^-1 s`` penalty."""
    m, Y, Vbar, W = _landmark_parts(model, Y)
    s = np.asarray(s, dtype=float)
    E = Y - T(Vbar + W @ s)
    return q_value(E, state.wbar, state.sigma) + 0.5 * eta * ellipsoid_check(m, s)


def update_embedding(Y, model: ShapeModel, T: SimilarityTransform, wbar, sigma, eta: float) -> np.ndarray:
    """Closed-form embedding for fixed transform, weights and covariance.

    Solves ``(sum w A_j^T S^-1 A_j + eta Lambda^-1) s = sum w A_j^T S^-1 b_j``
    with ``A_j = sigma Q W_j`` and ``b_j = Y_j - sigma Q mean_j - d``.
    """
    m, Y, Vbar, W = _landmark_parts(model, Y)
    w = np.asarray(wbar, dtype=float)
    inv, _ = covariance_inverse(sigma)
    R = T.matrix
    A = T.scale * np.einsum("ik,jkl->jil", R, W)  # (J, 3, K)
    b = Y - T(Vbar)
    AS = np.einsum("jik,il->jkl", A, inv)  # A_j^T S^-1 as (J, K, 3)
    lhs = np.einsum("j,jki,jil->kl", w, AS, A) + eta * np.diag(1.0 / m.eigvals)
    rhs = np.einsum("j,jki,ji->k", w, AS, b)
    lhs = 0.5 * (lhs + lhs.T)
    if not np.all(np.isfinite(lhs)) or np.linalg.cond(lhs) > 1e14:
        raise SingularSystemError("embedding normal equations are singular")
    return np.linalg.solve(lhs, rhs)


def fit(Y, model: ShapeModel, cfg: FitConfig | None = None) -> FitResult:
    """Fit ``model`` to landmarks ``Y``: transform, embedding and Student-t parameters.

    Starts from ``s = 0`` and the closed-form alignment of the mean landmarks.
    Each iteration runs the E-step, then scale, rotation, covariance, embedding
    and ``mu`` updates, re-centering the translation after the rotation and
    after the embedding.
    """
    cfg = cfg or FitConfig()
    m, Y, Vbar, W = _landmark_parts(model, Y)
    J = len(Y)
    if J < 4:
        raise DegenerateConfigurationError("deformable fitting needs at least 4 landmarks")

    floor = exact_floor(Y, cfg)
    s = np.zeros(m.n_modes)
    T = horn_align(Vbar, Y)
    E = Y - T(Vbar)
    sigma_raw = E.T @ E / J
    exact = np.trace(sigma_raw) <= 3 * floor
    sigma = regularize_covariance(sigma_raw, floor)
    mu = float(cfg.mu_init)

    q_trace, nll_trace = [], []
    iterations = 0
    converged = exact
    while not converged and iterations < cfg.max_iter:
        iterations += 1
        V = Vbar + W @ s
        if cfg.robust:
            a, b, w = e_step(Y - T(V), sigma, mu)
        else:
            a, b, w = mu + 1.5, np.ones(J), np.ones(J)
        inv, _ = covariance_inverse(sigma)

        vc = weighted_centroid(V, w)
        yc = weighted_centroid(Y, w)
        Vp = V - vc
        Yp = Y - yc
        _check_nondegenerate((w[:, None] * Vp).T @ Yp)
        scale = robust_scale(Yp, Vp, T.matrix, w, inv)
        try:
            q, _ = solve_rotation(Yp, scale * Vp, w, inv, T.rotation, cfg.rot_max_iter, cfg.rot_step_tol)
        except SolverFailure as exc:
            exc.partial = _result(Y, m, T, s, sigma, mu, iterations, q_trace, nll_trace, False, False, cfg)
            raise
        R = quat_to_matrix(q)
        T_new = SimilarityTransform(scale, q, yc - scale * (R @ vc))

        Ep = Yp - scale * Vp @ R.T
        sigma_raw = 0.5 * ((w[:, None] * Ep).T @ Ep + Ep.T @ (w[:, None] * Ep)) / J
        exact = np.trace(sigma_raw) <= 3 * floor
        sigma_new = regularize_covariance(sigma_raw, floor)

        s_new = update_embedding(Y, m, T_new, w, sigma_new, cfg.eta)
        V = Vbar + W @ s_new
        T_new = SimilarityTransform(scale, q, yc - scale * (R @ weighted_centroid(V, w)))
        mu_new = update_mu(a, b) if cfg.robust else mu

        E = Y - T_new(V)
        q_trace.append(q_value(E, w, sigma_new) + 0.5 * cfg.eta * ellipsoid_check(m, s_new))
        nll_trace.append(student_nll(E, sigma_new, mu_new) + 0.5 * cfg.eta * ellipsoid_check(m, s_new))
        delta = param_change(
            {"scale": T.scale, "R": T.matrix, "t": T.translation, "sigma": sigma, "mu": mu, "s": s},
            {"scale": T_new.scale, "R": R, "t": T_new.translation, "sigma": sigma_new, "mu": mu_new, "s": s_new},
        )
        T, sigma, mu, s = T_new, sigma_new, mu_new, s_new
        log.debug("fit iter %d: delta=%.3g Q=%.6g", iterations, delta, q_trace[-1])
        converged = exact or delta <= cfg.eps

    result = _result(Y, m, T, s, sigma, mu, iterations, q_trace, nll_trace, converged, bool(exact), cfg)
    if cfg.eta > 0 and ellipsoid_check(m, s) > 1.0:
        warnings.warn(
            f"fitted embedding lies outside the confidence ellipsoid "
            f"(s^T Lambda^-1 s = {ellipsoid_check(m, s):.3g})",
            EllipsoidWarning,
            stacklevel=2,
        )
    return result


def _result(Y, m, T, s, sigma, mu, iterations, q_trace, nll_trace, converged, exact, cfg):
    E = Y - T(m.landmark_mean + m.landmark_modes @ s)
    if cfg.robust:
        a, b, w = e_step(E, sigma, mu)
    else:
        a, b, w = mu + 1.5, np.ones(len(Y)), np.ones(len(Y))
    student = StudentState(sigma=sigma, mu=mu, a=a, b=b, wbar=w)
    return FitResult(T, s.copy(), student, iterations, list(q_trace), list(nll_trace), converged, exact)
