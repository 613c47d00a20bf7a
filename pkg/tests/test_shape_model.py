import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from robustfront.errors import ModelError
from robustfront.shape_model import (
    ShapeModel,
    build_model,
    compose_identity_expression,
    ellipsoid_check,
    embed,
    principal_components,
    reconstruct,
)


def random_training(seed, M=20, N=100):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(M, 3 * N)) * np.linspace(3, 0.1, 3 * N)


def test_two_shapes_one_axis():
    delta = 0.7
    base = np.arange(12.0)
    a, b = base.copy(), base.copy()
    a[4] += delta
    b[4] -= delta
    m = build_model([a, b])
    assert m.n_modes == 1
    assert m.eigvals[0] == pytest.approx(delta**2, rel=1e-12)
    axis = np.zeros(12)
    axis[4] = 1
    assert np.allclose(np.abs(m.basis[:, 0]), axis, atol=1e-12)


def test_identical_shapes_zero_variance_guard():
    m = build_model([np.arange(9.0)] * 4, min_k=2)
    assert m.n_modes == 2
    assert np.all(m.eigvals > 0)
    assert np.all(m.eigvals <= 1e-12 * np.mean(np.arange(9.0) ** 2) * 1.0001)


@pytest.mark.parametrize("seed", range(3))
def test_reconstruction_error_equals_discarded_variance(seed):
    S = random_training(seed)
    m = build_model(S, variance_fraction=0.9)
    D = S - S.mean(axis=0)
    full = np.sort(np.linalg.eigvalsh(D.T @ D / len(S)))[::-1]
    Shat = np.array([reconstruct(m, embed(m, s)) for s in S])
    mse = np.mean(np.sum((S - Shat) ** 2, axis=1))
    discarded = full[m.n_modes :].clip(0).sum()
    assert mse == pytest.approx(discarded, rel=1e-8)
    assert np.abs(m.basis.T @ m.basis - np.eye(m.n_modes)).max() <= 1e-8


def test_gram_trick_matches_full_eigensolver():
    S = random_training(7, M=8, N=10)
    D = S - S.mean(axis=0)
    vals, U = principal_components(D)
    full_vals, full_U = np.linalg.eigh(D.T @ D / len(S))
    full_vals, full_U = full_vals[::-1], full_U[:, ::-1]
    k = len(S) - 1
    assert np.allclose(vals[:k], full_vals[:k], rtol=1e-10)
    assert np.allclose(np.abs(U[:, :k].T @ full_U[:, :k]), np.eye(k), atol=1e-8)


def test_k_is_smallest_count_reaching_fraction():
    S = random_training(2)
    D = S - S.mean(axis=0)
    full = np.sort(np.linalg.eigvalsh(D.T @ D / len(S)))[::-1].clip(0)
    m = build_model(S, variance_fraction=0.8)
    frac = np.cumsum(full) / full.sum()
    assert frac[m.n_modes - 1] >= 0.8
    assert frac[m.n_modes - 2] < 0.8


def test_k_clamped_to_m_minus_one():
    m = build_model(random_training(1, M=5, N=30), variance_fraction=1.0)
    assert m.n_modes == 4


def test_spectrum_sorted_positive():
    m = build_model(random_training(3), variance_fraction=0.99)
    assert np.all(m.eigvals > 0)
    assert np.all(np.diff(m.eigvals) <= 0)


def test_build_errors():
    with pytest.raises(ValueError):
        build_model([np.zeros(6)])
    with pytest.raises(ValueError):
        build_model([np.zeros(6), np.zeros(9)])
    with pytest.raises(ValueError):
        build_model([np.zeros(6)] * 3, variance_fraction=0)


@pytest.fixture(scope="module")
def model():
    return build_model(random_training(5), variance_fraction=0.9)


def test_embed_mean_is_zero(model):
    assert np.allclose(embed(model, model.mean), 0, atol=1e-12)


def test_embed_reconstruct_round_trip(model):
    s = np.random.default_rng(0).normal(size=model.n_modes)
    assert np.allclose(embed(model, reconstruct(model, s)), s, atol=1e-10)


def test_reconstruct_zero_is_mean(model):
    assert np.array_equal(reconstruct(model, np.zeros(model.n_modes)), model.mean)


def test_per_vertex_blocks(model):
    s = np.random.default_rng(1).normal(size=model.n_modes)
    V = np.stack([model.mean_vertices[n] + model.modes[n] @ s for n in range(model.n_vertices)])
    assert np.abs(V.ravel() - reconstruct(model, s)).max() <= 1e-12


@given(st.floats(-2, 2), st.integers(0, 1000))
def test_reconstruct_affine(alpha, seed):
    m = build_model(random_training(5, M=6, N=10), variance_fraction=0.9)
    rng = np.random.default_rng(seed)
    s1, s2 = rng.normal(size=(2, m.n_modes))
    lhs = reconstruct(m, alpha * s1 + (1 - alpha) * s2)
    rhs = alpha * reconstruct(m, s1) + (1 - alpha) * reconstruct(m, s2)
    assert np.allclose(lhs, rhs, atol=1e-10 * (1 + abs(alpha)) * (1 + np.abs(rhs).max()))


def test_length_mismatch(model):
    with pytest.raises(ValueError):
        embed(model, np.zeros(5))
    with pytest.raises(ValueError):
        reconstruct(model, np.zeros(model.n_modes + 1))


def test_ellipsoid_examples(model):
    assert ellipsoid_check(model, np.zeros(model.n_modes)) == 0.0
    s = np.zeros(model.n_modes)
    s[0] = np.sqrt(model.eigvals[0])
    assert ellipsoid_check(model, s) == pytest.approx(1.0, rel=1e-15)


@given(arrays(float, 4, elements=st.floats(-10, 10)))
def test_ellipsoid_quadratic_form(s):
    lam = np.array([4.0, 2.0, 1.0, 0.5])
    m = ShapeModel(np.zeros(6), np.eye(6, 4), lam)
    assert ellipsoid_check(m, s) == pytest.approx(float(s @ np.diag(1 / lam) @ s), rel=1e-12, abs=1e-300)


@pytest.fixture(scope="module")
def expressive_model():
    rng = np.random.default_rng(11)
    neutral = random_training(11, M=10, N=20)
    expressive = neutral + rng.normal(size=neutral.shape) * 0.3 + 1.0
    return build_model(neutral, 0.9, expressive=expressive)


def test_compose_zero_embeddings(expressive_model):
    m = expressive_model
    out = compose_identity_expression(m, np.zeros(m.n_modes), np.zeros(m.expression.basis.shape[1]))
    assert np.allclose(out, m.mean + m.expression.mean)


def test_compose_one_sided(expressive_model):
    m = expressive_model
    s = np.random.default_rng(0).normal(size=m.n_modes)
    out = compose_identity_expression(m, s, np.zeros(m.expression.basis.shape[1]))
    assert np.allclose(out, reconstruct(m, s) + m.expression.mean)


def test_compose_resummation(expressive_model):
    m = expressive_model
    rng = np.random.default_rng(1)
    si = rng.normal(size=m.n_modes)
    se = rng.normal(size=m.expression.basis.shape[1])
    ex = ShapeModel(m.expression.mean, m.expression.basis, m.expression.eigvals)
    expected = reconstruct(m, si) + reconstruct(ex, se)
    assert np.allclose(compose_identity_expression(m, si, se), expected, atol=1e-12)


def test_compose_requires_expression(model):
    with pytest.raises(ModelError):
        compose_identity_expression(model, np.zeros(model.n_modes), np.zeros(1))


def test_fitting_model_concatenates(expressive_model):
    m = expressive_model
    f = m.fitting_model()
    assert f.n_modes == m.n_modes + m.expression.basis.shape[1]
    assert np.all(np.diff(f.eigvals) <= 0)
    assert np.allclose(f.mean, m.mean + m.expression.mean)


def test_model_invariants_enforced():
    with pytest.raises(ModelError):
        ShapeModel(np.zeros(6), np.eye(6, 2), [1.0, 2.0])
    with pytest.raises(ModelError):
        ShapeModel(np.zeros(6), np.eye(6, 2), [1.0, 0.0])
    with pytest.raises(ModelError):
        ShapeModel(np.zeros(6), np.eye(6, 1), [1.0], landmark_indices=[0, 0])
    with pytest.raises(ModelError):
        ShapeModel(np.zeros(6), np.eye(6, 1), [1.0], triangles=[[0, 1, 2]])
    with pytest.raises(ModelError):
        ShapeModel(np.zeros(6), 2 * np.eye(6, 1), [1.0]).check_orthonormal()
