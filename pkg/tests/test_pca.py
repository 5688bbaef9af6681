import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from treejog.core import CharacterMatrix
from treejog.errors import DegenerateModelError, InputError, MissingStateError
from treejog.pca import PcaModel, explained_variance, fit, project

from oracles import covariance_pca, orient_rows


def _binary(rng, n, p):
    x = rng.integers(0, 2, size=(n, p)).astype(float)
    while np.all(x == x[0]):
        x = rng.integers(0, 2, size=(n, p)).astype(float)
    return x


def test_rank_one_explains_everything():
    rng = np.random.default_rng(0)
    v, mu = rng.normal(size=7), rng.normal(size=7)
    x = rng.normal(size=(9, 1)) * v + mu
    m = fit(x, k=2)
    assert m.explained[0] == pytest.approx(1.0, abs=1e-12)
    assert m.explained[1] == 0.0


def test_two_by_two():
    m = fit(np.array([[0.5, -0.5], [-0.5, 0.5]]), k=1)
    assert np.count_nonzero(m.singular_values > 1e-12) == 1
    assert np.allclose(explained_variance(m, all_components=True)[:1], [1.0])


def test_equal_singular_values_share_evenly():
    x = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    m = fit(x, k=2)
    assert np.allclose(m.explained, [0.5, 0.5], atol=1e-12)


def test_six_by_ten_matches_oracle():
    rng = np.random.default_rng(6)
    x = _binary(rng, 6, 10)
    m = fit(x, k=3)
    vals, axes, xc = covariance_pca(x)
    axes = orient_rows(axes[:3])
    assert np.allclose(m.scores, xc @ axes.T, atol=1e-9)
    assert np.allclose(m.variances[:3], vals[:3], atol=1e-9)


def test_eight_by_twelve_shares():
    rng = np.random.default_rng(8)
    x = _binary(rng, 8, 12)
    m = fit(x, k=2)
    vals, _, _ = covariance_pca(x)
    vals = np.clip(vals, 0, None)
    assert np.allclose(m.explained, vals[:2] / vals.sum(), atol=1e-9)


def test_lambda_is_sigma_squared_over_n_minus_one():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(11, 5))
    m = fit(x, k=2)
    cov_eigs = np.sort(np.linalg.eigvalsh(np.cov(x, rowvar=False)))[::-1]
    assert np.allclose(m.variances, cov_eigs, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(3, 12), p=st.integers(2, 15))
def test_structural_properties(seed, n, p):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, p))
    k = min(2, n, p)
    m = fit(x, k=k)
    assert np.allclose(m.axes @ m.axes.T, np.eye(k), atol=1e-9)
    xc = x - m.mu
    assert np.allclose(xc.mean(axis=0), 0, atol=1e-12)
    resid = np.linalg.norm(xc - m.scores @ m.axes) ** 2
    assert resid == pytest.approx((m.singular_values[k:] ** 2).sum(), abs=1e-6)
    assert np.allclose(project(m, x), m.scores, atol=1e-12)
    idx = np.argmax(np.abs(m.axes), axis=1)
    assert np.all(m.axes[np.arange(k), idx] > 0)


def test_projection_basics():
    rng = np.random.default_rng(3)
    x = _binary(rng, 7, 9)
    m = fit(x)
    assert np.allclose(project(m, m.mu), 0.0)
    assert np.array_equal(project(m, x[4]), project(m, x)[4])
    with pytest.raises(InputError):
        project(m, np.zeros(3))


def test_json_round_trip():
    rng = np.random.default_rng(4)
    m = fit(CharacterMatrix(tuple("ABCDE"), _binary(rng, 5, 6), np.zeros((5, 6), bool)))
    back = PcaModel.from_json(m.to_json())
    assert np.array_equal(back.axes, m.axes) and np.array_equal(back.mu, m.mu)
    assert np.array_equal(back.singular_values, m.singular_values) and back.n_fit == m.n_fit
    assert back.to_json() == m.to_json()


def test_missing_refused_or_imputed():
    m = CharacterMatrix.from_rows(list("ABC"), [[0, "?"], [1, 1], [1, 0]])
    with pytest.raises(MissingStateError):
        fit(m, k=1)
    model = fit(m, k=1, impute="mean")
    assert model.mu[1] == pytest.approx(0.5)


def test_degenerate_and_bad_k():
    with pytest.raises(DegenerateModelError):
        fit(np.ones((4, 3)))
    with pytest.raises(InputError):
        fit(np.eye(3), k=4)
