import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sprdm.errors import DimensionMismatch, SingularSystem
from sprdm.numerics import Rng, gaussian_draws, logistic, ridge_solve


# --- logistic --------------------------------------------------------------

def test_logistic_zero():
    assert logistic(np.array([0.0]))[0] == 0.5
    np.testing.assert_array_equal(logistic(np.zeros(3)), [0.5, 0.5, 0.5])


def test_logistic_ln3():
    assert logistic(np.array([np.log(3.0)]))[0] == pytest.approx(0.75, abs=1e-15)


def test_logistic_extremes_no_overflow():
    with np.errstate(over="raise"):
        out = logistic(np.array([-1e6, -800.0, 800.0, 1e6]))
    assert np.all(np.isfinite(out))
    assert np.all(out >= 0) and np.all(out <= 1)
    assert out[0] > 0  # clamp at -709 keeps the tail representable


finite = st.floats(-700, 700, allow_nan=False)


@given(st.lists(finite, min_size=1, max_size=20))
def test_logistic_symmetry(v):
    v = np.array(v)
    np.testing.assert_allclose(logistic(v) + logistic(-v), 1.0, atol=1e-12)


@given(finite, finite)
def test_logistic_monotone(a, b):
    if a < b and b - a > 1e-9 and max(abs(a), abs(b)) < 30:
        assert logistic(np.array([a]))[0] < logistic(np.array([b]))[0]
    else:
        lo, hi = sorted((a, b))
        assert logistic(np.array([lo]))[0] <= logistic(np.array([hi]))[0]


# --- ridge_solve ------------------------------------------------------------

def test_ridge_identity():
    np.testing.assert_array_equal(ridge_solve(np.eye(2), np.eye(2), 0.0), np.eye(2))


def test_ridge_half_identity():
    np.testing.assert_allclose(ridge_solve(np.eye(2), np.eye(2), 1.0), 0.5 * np.eye(2),
                               atol=1e-15)


def test_ridge_planted_recovery():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(20, 3))
    W = rng.normal(size=(3, 4))
    np.testing.assert_allclose(ridge_solve(X, X @ W, 0.0), W, atol=1e-8)


def test_ridge_matches_lstsq_oracle():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(30, 6))
    Y = rng.normal(size=(30, 2))
    lam = 0.3
    aug_X = np.vstack([X, np.sqrt(lam) * np.eye(6)])
    aug_Y = np.vstack([Y, np.zeros((6, 2))])
    oracle = np.linalg.lstsq(aug_X, aug_Y, rcond=None)[0]
    np.testing.assert_allclose(ridge_solve(X, Y, lam), oracle, atol=1e-12)


def test_ridge_vector_target():
    X = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
    y = X @ np.array([2.0, -1.0])
    w = ridge_solve(X, y)
    assert w.shape == (2,)
    np.testing.assert_allclose(w, [2.0, -1.0], atol=1e-12)


def test_ridge_singular_raises():
    X = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    with pytest.raises(SingularSystem):
        ridge_solve(X, np.ones(3), 0.0)
    # any positive lambda regularizes it
    assert np.all(np.isfinite(ridge_solve(X, np.ones(3), 1e-3)))


def test_ridge_shape_errors():
    with pytest.raises(DimensionMismatch):
        ridge_solve(np.ones((3, 2)), np.ones(4))
    with pytest.raises(ValueError):
        ridge_solve(np.eye(2), np.eye(2), -1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 3),
       st.floats(0.0, 10.0))
def test_ridge_normal_equation_residual(seed, p, q, lam):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(p + 5, p))
    Y = rng.normal(size=(p + 5, q))
    W = ridge_solve(X, Y, lam)
    res = (X.T @ X + lam * np.eye(p)) @ W - X.T @ Y
    assert np.linalg.norm(res) < 1e-8 * (1 + np.linalg.norm(X.T @ Y))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 5.0), st.floats(0.0, 5.0))
def test_ridge_shrinkage_monotone(seed, l1, l2):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(12, 4))
    Y = rng.normal(size=(12, 2))
    lo, hi = sorted((l1, l2))
    assert np.linalg.norm(ridge_solve(X, Y, lo)) >= np.linalg.norm(ridge_solve(X, Y, hi)) - 1e-12


# --- Rng --------------------------------------------------------------------

def test_gaussian_degenerate():
    np.testing.assert_array_equal(gaussian_draws(Rng(1), 3, 0.0, 0.0), [0.0, 0.0, 0.0])


def test_gaussian_deterministic():
    a = gaussian_draws(Rng(42), 50)
    b = gaussian_draws(Rng(42), 50)
    assert a.tobytes() == b.tobytes()


def test_gaussian_moments():
    z = gaussian_draws(Rng(7), 100_000, 0.0, 1.0)
    assert abs(z.mean()) < 0.02
    assert abs(z.std() - 1.0) < 0.02


def test_gaussian_negative_stddev():
    with pytest.raises(ValueError):
        gaussian_draws(Rng(0), 2, 0.0, -1.0)


def test_normal_odd_count_and_scaling():
    z = Rng(3).normal(5, 2.0, 0.5)
    assert z.shape == (5,)
    z2 = Rng(3).normal(5)
    np.testing.assert_allclose(z, 2.0 + 0.5 * z2)


def test_substreams_independent_of_call_order():
    r1 = Rng(9)
    r1.split("a").uniform(100)
    x1 = r1.split("b").uniform(5)
    x2 = Rng(9).split("b").uniform(5)
    assert x1.tobytes() == x2.tobytes()
    assert Rng(9).split("a").uniform(5).tobytes() != x2.tobytes()
    assert Rng(9).split("a").split("b").uniform(3).tobytes() != \
        Rng(9).split("b").split("a").uniform(3).tobytes()


def test_uniform_range_and_seed_bounds():
    u = Rng(0).uniform(10_000)
    assert u.min() >= 0.0 and u.max() < 1.0
    with pytest.raises(ValueError):
        Rng(-1)
    with pytest.raises(ValueError):
        Rng(2**64)


def test_rng_helpers():
    r = Rng(5)
    assert sorted(r.permutation(6).tolist()) == list(range(6))
    ints = r.integers(0, 3, 100)
    assert set(ints.tolist()) <= {0, 1, 2}
    counts = np.bincount([Rng(5).split(str(i)).choice(3, [0.2, 0.0, 0.8]) for i in range(500)],
                         minlength=3)
    assert counts[1] == 0
    assert 60 < counts[0] < 140
