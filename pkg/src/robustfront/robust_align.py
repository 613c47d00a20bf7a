"""EM estimation of a similarity transform under Student-t residuals.

Residuals ``e_j = Z_j - (s R X_j + t)`` follow a generalized Student-t law:
a Gaussian with covariance ``Sigma / w_j`` whose precision ``w_j`` has a
``Gamma(mu, 1)`` prior.  The E-step computes posterior precision means, the
M-step updates scale, rotation, covariance and ``mu`` in turn.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, gammaln

from .errors import DegenerateConfigurationError, SolverFailure
from .geometry import (
    SimilarityTransform,
    as_points,
    covariance_inverse,
    horn_align,
    quat_from_rotvec,
    quat_multiply,
    quat_to_matrix,
    regularize_covariance,
    rotation_angle,
    weighted_centroid,
    _check_nondegenerate,
)
from .special import digamma_inverse

log = logging.getLogger(__name__)

NU = 1.0


@dataclass
class AlignConfig:
    eps: float = 1e-6
    max_iter: int = 100
    mu_init: float = 1.0
    rot_max_iter: int = 100
    rot_step_tol: float = 1e-12
    # residuals below this fraction of the cloud radius count as an exact fit
    exact_tol: float = 1e-10

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if int(self.max_iter) < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.mu_init > 0:
            raise ValueError("mu_init must be positive")


@dataclass
class StudentState:
    sigma: np.ndarray
    mu: float
    a: float
    b: np.ndarray
    wbar: np.ndarray
    nu: float = NU


@dataclass
class AlignResult:
    transform: SimilarityTransform
    student: StudentState
    iterations: int
    q_trace: list = field(default_factory=list)
    nll_trace: list = field(default_factory=list)
    converged: bool = False
    exact: bool = False


def e_step(residuals, sigma, mu: float):
    """Posterior gamma parameters and mean precisions of each residual.

    Returns ``(a, b, wbar)`` with ``a = mu + 3/2``, ``b_j = 1 + |e_j|^2 / 2``
    (Mahalanobis norm under ``sigma``) and ``wbar_j = a / b_j``.
    """
    if not mu > 0:
        raise ValueError("mu must be positive")
    e = np.atleast_2d(np.asarray(residuals, dtype=float))
    inv, _ = covariance_inverse(sigma)
    m2 = np.einsum("ji,ik,jk->j", e, inv, e)
    a = mu + 1.5
    b = 1.0 + 0.5 * m2
    return a, b, a / b


def update_mu(a: float, b) -> float:
    """Gamma shape update: ``digamma^-1(digamma(a) - mean(log b))``."""
    b = np.asarray(b, dtype=float)
    if not a > 0 or np.any(b <= 0):
        raise ValueError("a and every b_j must be positive")
    return digamma_inverse(digamma(a) - np.mean(np.log(b)))


def q_value(residuals, wbar, sigma) -> float:
    e = np.atleast_2d(residuals)
    inv, logdet = covariance_inverse(sigma)
    m2 = np.einsum("ji,ik,jk->j", e, inv, e)
    return 0.5 * float(np.sum(np.asarray(wbar) * m2) + len(e) * logdet)


def q_objective(X, Z, T: SimilarityTransform, state: StudentState) -> float:
    """Expected complete-data objective ``1/2 sum_j (wbar_j |e_j|^2_Sigma + log|Sigma|)``."""
    X = as_points(X)
    Z = as_points(Z)
    if X.shape != Z.shape:
        raise ValueError("point sets must have the same length")
    return q_value(Z - T(X), state.wbar, state.sigma)


def student_nll(residuals, sigma, mu: float) -> float:
    """Observed-data negative log-likelihood of the residuals (nu = 1)."""
    e = np.atleast_2d(residuals)
    inv, logdet = covariance_inverse(sigma)
    m2 = np.einsum("ji,ik,jk->j", e, inv, e)
    logp = (
        gammaln(mu + 1.5)
        - gammaln(mu)
        - 0.5 * logdet
        - 1.5 * np.log(2 * np.pi * NU)
        - (mu + 1.5) * np.log1p(m2 / (2 * NU))
    )
    return -float(np.sum(logp))


def _whitener(sigma_inv):
    # L^T L = sigma_inv
    return np.linalg.cholesky(sigma_inv).T


def _skew_stack(V):
    Z = np.zeros(V.shape[:-1] + (3, 3))
    Z[..., 0, 1] = -V[..., 2]
    Z[..., 0, 2] = V[..., 1]
    Z[..., 1, 0] = V[..., 2]
    Z[..., 1, 2] = -V[..., 0]
    Z[..., 2, 0] = -V[..., 1]
    Z[..., 2, 1] = V[..., 0]
    return Z


def solve_rotation(target, source, wbar, sigma_inv, q0, max_iter=100, step_tol=1e-12):
    """Minimize ``1/2 sum_j wbar_j |target_j - R(q) source_j|^2_Sigma`` over unit ``q``.

    Damped Newton iteration on a rotation-vector increment composed onto the
    quaternion, which is renormalized after every step.  The Gauss-Newton
    Hessian is completed with its second-order term so that large residuals
    (outliers) do not degrade convergence to linear.  Steps are accepted only
    when the objective does not increase, so the result is never worse than
    ``q0``.
    """
    L = _whitener(sigma_inv)
    w = np.asarray(wbar, dtype=float)

    def cost(q):
        r = (target - source @ quat_to_matrix(q).T) @ L.T
        return 0.5 * float(np.sum(w * np.sum(r * r, axis=1))), r

    q = np.asarray(q0, dtype=float)
    f, r = cost(q)
    lam = 0.0
    eye = np.eye(3)
    for _ in range(max_iter):
        V = source @ quat_to_matrix(q).T
        Jac = L @ _skew_stack(V)  # d r_j / d delta
        g = np.einsum("j,jki,jk->i", w, Jac, r)
        H = np.einsum("j,jki,jkl->il", w, Jac, Jac)
        C = w[:, None] * (r @ L)  # w_j L^T r_j
        CV = C.T @ V
        H = H - 0.5 * (CV + CV.T) + np.trace(CV) * eye
        unit = max(np.trace(H), np.trace(np.abs(H))) / 3.0 or 1.0
        while True:
            A = H + lam * unit * eye
            try:
                np.linalg.cholesky(A)
                delta = -np.linalg.solve(A, g)
            except np.linalg.LinAlgError:
                lam = max(4.0 * lam, 1e-8)
                continue
            if np.linalg.norm(delta) <= step_tol:
                return q, f
            q_new = quat_multiply(quat_from_rotvec(delta), q)
            q_new /= np.linalg.norm(q_new)
            f_new, r_new = cost(q_new)
            if f_new <= f:
                decrease = f - f_new
                q, f, r = q_new, f_new, r_new
                lam = lam / 4.0 if lam > 1e-10 else 0.0
                if decrease <= 1e-15 * abs(f):
                    return q, f
                break
            lam = max(8.0 * lam, 1e-6)
            if lam > 1e16:
                # no descent direction left at working precision
                return q, f
    raise SolverFailure("rotation solver did not converge", best=(q, f))


def robust_scale(target_c, source_c, R, wbar, sigma_inv) -> float:
    """Scale update ``sqrt(sum w Y'^T S^-1 Y' / sum w (R X')^T S^-1 (R X'))``."""
    RX = source_c @ R.T
    num = np.einsum("j,ji,ik,jk->", wbar, target_c, sigma_inv, target_c)
    den = np.einsum("j,ji,ik,jk->", wbar, RX, sigma_inv, RX)
    if not den > 0 or not num > 0:
        raise DegenerateConfigurationError("scale update is undefined (zero spread)")
    return float(np.sqrt(num / den))


def m_step_rigid(X, Z, wbar, sigma, T_prev: SimilarityTransform, cfg: AlignConfig | None = None):
    """One M-step for the similarity transform and covariance.

    Order: weighted recentering, scale (with the previous rotation), rotation
    (warm-started from ``T_prev``), translation, covariance.  The returned
    covariance is the raw weighted residual scatter divided by ``J``, before
    any eigenvalue floor is applied.
    """
    cfg = cfg or AlignConfig()
    X = as_points(X)
    Z = as_points(Z)
    w = np.asarray(wbar, dtype=float)
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    inv, _ = covariance_inverse(sigma)

    xc = weighted_centroid(X, w)
    zc = weighted_centroid(Z, w)
    Xp = X - xc
    Zp = Z - zc
    _check_nondegenerate((w[:, None] * Xp).T @ Zp)

    scale = robust_scale(Zp, Xp, T_prev.matrix, w, inv)
    try:
        q, _ = solve_rotation(Zp, scale * Xp, w, inv, T_prev.rotation, cfg.rot_max_iter, cfg.rot_step_tol)
    except SolverFailure as exc:
        q = exc.best[0]
        exc.best = SimilarityTransform(scale, q, zc - scale * quat_to_matrix(q) @ xc)
        raise
    R = quat_to_matrix(q)
    T = SimilarityTransform(scale, q, zc - scale * (R @ xc))
    E = Zp - scale * Xp @ R.T
    sigma_raw = (w[:, None] * E).T @ E / len(X)
    return T, 0.5 * (sigma_raw + sigma_raw.T)


def param_change(old: dict, new: dict) -> float:
    """Convergence norm between two parameter sets.

    Maximum of the relative scale change, the rotation geodesic angle, the
    damped translation and covariance changes and the relative ``mu`` change.
    Optional ``s`` entries (embeddings) contribute their Euclidean change.
    """
    parts = [
        abs(new["scale"] - old["scale"]) / old["scale"],
        rotation_angle(old["R"], new["R"]),
        np.linalg.norm(new["t"] - old["t"]) / (1.0 + np.linalg.norm(new["t"])),
        np.linalg.norm(new["sigma"] - old["sigma"]) / (1.0 + np.linalg.norm(new["sigma"])),
        abs(new["mu"] - old["mu"]) / old["mu"],
    ]
    if "s" in new:
        parts.append(np.linalg.norm(new["s"] - old["s"]) / (1.0 + np.linalg.norm(new["s"])))
    return float(max(parts))


def cloud_radius(P) -> float:
    P = np.asarray(P, dtype=float)
    return float(np.sqrt(np.mean(np.sum((P - P.mean(axis=0)) ** 2, axis=1))))


def exact_floor(Z, cfg: AlignConfig) -> float:
    """Absolute variance below which residuals are numerical zeros."""
    return (cfg.exact_tol * max(cloud_radius(Z), 1e-300)) ** 2


def align(X, Z, cfg: AlignConfig | None = None) -> AlignResult:
    """Robustly estimate ``T`` with ``Z ~ T(X)`` for corresponding point sets.

    Initialization uses :func:`horn_align` and the unit-weight covariance.
    The loop stops when the convergence norm drops to ``cfg.eps``, after
    ``cfg.max_iter`` iterations, or as soon as the residuals vanish to
    numerical precision (``exact`` in the result).
    """
    cfg = cfg or AlignConfig()
    X = as_points(X)
    Z = as_points(Z)
    if X.shape != Z.shape:
        raise ValueError("point sets must have the same length")
    if len(X) < 4:
        raise DegenerateConfigurationError("robust alignment needs at least 4 points")

    floor = exact_floor(Z, cfg)
    T = horn_align(X, Z)
    E = Z - T(X)
    sigma_raw = E.T @ E / len(X)
    exact = np.trace(sigma_raw) <= 3 * floor
    sigma = regularize_covariance(sigma_raw, floor)
    mu = float(cfg.mu_init)

    q_trace, nll_trace = [], []
    iterations = 0
    converged = exact
    while not converged and iterations < cfg.max_iter:
        iterations += 1
        a, b, w = e_step(Z - T(X), sigma, mu)
        try:
            T_new, sigma_raw = m_step_rigid(X, Z, w, sigma, T, cfg)
        except SolverFailure as exc:
            exc.partial = _result(X, Z, T, sigma, mu, iterations, q_trace, nll_trace, False, False)
            raise
        exact = np.trace(sigma_raw) <= 3 * floor
        sigma_new = regularize_covariance(sigma_raw, floor)
        mu_new = update_mu(a, b)

        E = Z - T_new(X)
        q_trace.append(q_value(E, w, sigma_new))
        nll_trace.append(student_nll(E, sigma_new, mu_new))
        delta = param_change(
            {"scale": T.scale, "R": T.matrix, "t": T.translation, "sigma": sigma, "mu": mu},
            {"scale": T_new.scale, "R": T_new.matrix, "t": T_new.translation, "sigma": sigma_new, "mu": mu_new},
        )
        T, sigma, mu = T_new, sigma_new, mu_new
        log.debug("align iter %d: delta=%.3g Q=%.6g", iterations, delta, q_trace[-1])
        converged = exact or delta <= cfg.eps

    return _result(X, Z, T, sigma, mu, iterations, q_trace, nll_trace, converged, bool(exact))


def _result(X, Z, T, sigma, mu, iterations, q_trace, nll_trace, converged, exact):
    a, b, w = e_step(Z - T(X), sigma, mu)
    student = StudentState(sigma=sigma, mu=mu, a=a, b=b, wbar=w)
    return AlignResult(T, student, iterations, list(q_trace), list(nll_trace), converged, exact)
