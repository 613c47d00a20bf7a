import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from robustfront.deform_fit import EllipsoidWarning, FitConfig, fit, q_objective_reg, update_embedding
from robustfront.errors import SingularSystemError
from robustfront.geometry import SimilarityTransform, rotation_angle
from robustfront.robust_align import AlignConfig, StudentState, align, cloud_radius, q_value
from robustfront.shape_model import ShapeModel, ellipsoid_check, reconstruct

from scenes import deform_scene, rigid_scene, rms


def small_model(seed=0, N=40, K=4, J=12):
    rng = np.random.default_rng(seed)
    mean = rng.normal(size=3 * N) * 3
    U, _ = np.linalg.qr(rng.normal(size=(3 * N, K)))
    lam = np.sort(rng.uniform(0.5, 4, K))[::-1]
    return ShapeModel(mean, U, lam, landmark_indices=rng.choice(N, J, replace=False))


def state(J, sigma=None):
    w = np.ones(J)
    return StudentState(np.eye(3) if sigma is None else sigma, 1.0, 2.5, np.full(J, 1.0), w)


def test_q_reg_perfect_fit():
    m = small_model()
    Y = m.landmark_mean
    assert q_objective_reg(Y, m, SimilarityTransform(), np.zeros(m.n_modes), state(len(Y)), 1.0) == 0.0


def test_q_reg_penalty_only():
    m = small_model()
    s = np.zeros(m.n_modes)
    s[1] = np.sqrt(m.eigvals[1])
    Y = m.landmark_mean + m.landmark_modes @ s
    eta = 3.0
    assert q_objective_reg(Y, m, SimilarityTransform(), s, state(len(Y)), eta) == pytest.approx(eta / 2, rel=1e-12)


def test_q_reg_resummation():
    rng = np.random.default_rng(2)
    m = small_model(2)
    J = len(m.landmark_indices)
    T = SimilarityTransform(1.3, rng.normal(size=4), rng.normal(size=3))
    s = rng.normal(size=m.n_modes)
    Y = rng.normal(size=(J, 3))
    A = rng.normal(size=(3, 3))
    S = A @ A.T + np.eye(3)
    w = rng.uniform(0.2, 2, J)
    st_ = StudentState(S, 1.0, 2.5, np.ones(J), w)
    total = 0.0
    for j, n in enumerate(m.landmark_indices):
        V = m.mean[3 * n : 3 * n + 3] + m.basis[3 * n : 3 * n + 3] @ s
        e = Y[j] - T.scale * T.matrix @ V - T.translation
        total += w[j] * e @ np.linalg.inv(S) @ e + np.log(np.linalg.det(S))
    total += 1.4 * np.sum(s**2 / m.eigvals)
    assert q_objective_reg(Y, m, T, s, st_, 1.4) == pytest.approx(0.5 * total, rel=1e-12)


def test_update_embedding_zero_modes():
    m = small_model()
    zero = ShapeModel(m.mean, np.zeros_like(m.basis), m.eigvals, landmark_indices=m.landmark_indices)
    J = len(m.landmark_indices)
    s = update_embedding(np.ones((J, 3)), zero, SimilarityTransform(), np.ones(J), np.eye(3), 1.0)
    assert np.array_equal(s, np.zeros(m.n_modes))


def test_update_embedding_large_eta():
    m = small_model()
    J = len(m.landmark_indices)
    Y = m.landmark_mean + m.landmark_modes @ np.ones(m.n_modes)
    s = update_embedding(Y, m, SimilarityTransform(), np.ones(J), np.eye(3), 1e12)
    assert np.linalg.norm(s) < 1e-6


def test_update_embedding_exact_least_squares():
    m = small_model(3)
    s_true = np.array([0.5, -1.0, 0.2, 0.9])
    Y = m.landmark_mean + m.landmark_modes @ s_true
    J = len(Y)
    s = update_embedding(Y, m, SimilarityTransform(), np.ones(J), np.eye(3), 0.0)
    assert np.allclose(s, s_true, atol=1e-8)


def test_update_embedding_singular():
    m = small_model()
    zero = ShapeModel(m.mean, np.zeros_like(m.basis), m.eigvals, landmark_indices=m.landmark_indices)
    J = len(m.landmark_indices)
    with pytest.raises(SingularSystemError):
        update_embedding(np.ones((J, 3)), zero, SimilarityTransform(), np.ones(J), np.eye(3), 0.0)


@given(st.integers(0, 10**6))
def test_update_embedding_is_local_minimum(seed):
    rng = np.random.default_rng(seed)
    m = small_model(seed % 7)
    J = len(m.landmark_indices)
    T = SimilarityTransform(rng.uniform(0.5, 2), rng.normal(size=4), rng.normal(size=3))
    Y = rng.normal(size=(J, 3)) * 3
    A = rng.normal(size=(3, 3))
    S = A @ A.T + np.eye(3)
    w = rng.uniform(0.2, 2, J)
    eta = rng.uniform(0, 3)
    s = update_embedding(Y, m, T, w, S, eta)
    st_ = StudentState(S, 1.0, 2.5, np.ones(J), w)
    base = q_objective_reg(Y, m, T, s, st_, eta)
    for k in range(m.n_modes):
        for sign in (1, -1):
            probe = s.copy()
            probe[k] += sign * 1e-4
            assert q_objective_reg(Y, m, T, probe, st_, eta) >= base - 1e-12 * abs(base)


@given(st.floats(0.01, 10), st.floats(1.01, 10))
def test_increasing_eta_shrinks(eta, factor):
    m = small_model(4)
    J = len(m.landmark_indices)
    Y = m.landmark_mean + m.landmark_modes @ np.array([2.0, -1.0, 1.0, 0.5])
    args = (Y, m, SimilarityTransform(), np.ones(J), np.eye(3))
    a = ellipsoid_check(m, update_embedding(*args, eta))
    b = ellipsoid_check(m, update_embedding(*args, eta * factor))
    assert b <= a * (1 + 1e-12)


def test_self_fit():
    m = small_model(5, J=20)
    res = fit(m.landmark_mean, m)
    assert res.iterations <= 3
    assert np.allclose(res.embedding, 0, atol=1e-8)
    assert abs(res.transform.scale - 1) <= 1e-10
    assert rotation_angle(res.transform.matrix, np.eye(3)) <= 1e-10


@pytest.mark.parametrize("seed", range(5))
def test_noiseless_recovery(seed):
    m, Y, clean, T, s, _ = deform_scene(seed)
    res = fit(Y, m, FitConfig(eta=1e-6))
    r = cloud_radius(Y)
    assert rms(res.landmarks(m), Y) < 1e-4 * r
    assert abs(res.transform.scale / T.scale - 1) < 1e-4
    assert rotation_angle(res.transform.matrix, T.matrix) < 1e-4
    assert np.linalg.norm(res.transform.translation - T.translation) < 1e-4 * r


@pytest.mark.filterwarnings("ignore::robustfront.deform_fit.EllipsoidWarning")
@pytest.mark.parametrize("seed", range(5))
def test_outliers_robust_beats_uniform(seed):
    m, Y, clean, _, _, idx = deform_scene(seed, outlier_frac=0.1)
    inl = np.setdiff1d(np.arange(len(Y)), idx)
    robust = fit(Y, m, FitConfig(eta=1e-6))
    uniform = fit(Y, m, FitConfig(eta=1e-6, robust=False))
    e_r = rms(robust.landmarks(m)[inl], clean[inl])
    e_u = rms(uniform.landmarks(m)[inl], clean[inl])
    assert e_u >= 2 * e_r


@pytest.mark.parametrize("seed", range(5))
def test_q_reg_trace_monotone(seed):
    m, Y, *_ = deform_scene(seed, outlier_frac=0.1)
    res = fit(Y, m, FitConfig(eta=0.5))
    assert np.all(np.diff(res.q_trace) <= 1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_zero_modes_reduce_to_align(seed):
    X, Z, _, _ = rigid_scene(seed, noise=0.01, outlier_frac=0.1)
    zero = ShapeModel(X.ravel(), np.zeros((X.size, 2)), [2.0, 1.0], landmark_indices=np.arange(len(X)))
    res = fit(Z, zero, FitConfig(max_iter=30))
    ref = align(X, Z, AlignConfig(max_iter=30))
    assert abs(res.transform.scale - ref.transform.scale) <= 1e-8 * ref.transform.scale
    assert rotation_angle(res.transform.matrix, ref.transform.matrix) <= 1e-8
    assert np.abs(res.transform.translation - ref.transform.translation).max() <= 1e-8


def test_ellipsoid_warning():
    m = small_model(6, J=20)
    s = np.zeros(m.n_modes)
    s[0] = 5 * np.sqrt(m.eigvals[0])
    Y = m.landmark_mean + m.landmark_modes @ s
    with pytest.warns(EllipsoidWarning):
        fit(Y, m, FitConfig(eta=1e-6))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        fit(m.landmark_mean + m.landmark_modes @ (0.1 * s), m, FitConfig(eta=1e-6))


def test_fit_config_validation():
    with pytest.raises(ValueError):
        FitConfig(eta=-1)


def test_landmark_count_mismatch():
    m = small_model()
    with pytest.raises(ValueError):
        fit(np.zeros((5, 3)), m)


def test_fit_state_consistent():
    m, Y, *_ = deform_scene(1, outlier_frac=0.1)
    res = fit(Y, m)
    E = Y - res.landmarks(m)
    assert np.isfinite(q_value(E, res.student.wbar, res.student.sigma))
    assert res.student.a == pytest.approx(res.student.mu + 1.5)


def test_vertices_match_reconstruction():
    m, Y, *_ = deform_scene(2)
    res = fit(Y, m, FitConfig(eta=1e-6))
    V = res.transform(reconstruct(m, res.embedding).reshape(-1, 3))
    assert np.allclose(res.vertices(m), V)
