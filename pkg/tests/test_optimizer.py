import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from grape.optimizer import (
    CURVATURE_EPS,
    LineSearchFailure,
    LineSearchResult,
    OptimizerOptions,
    gd_step,
    iterate,
    lbfgs_direction,
    wolfe_line_search,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def quadratic(A, b=None):
    b = np.zeros(len(A)) if b is None else b
    return lambda x: (0.5 * x @ A @ x - b @ x, A @ x - b, None)


def rosenbrock(x):
    f = (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2
    g = np.array([-2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2), 200 * (x[1] - x[0] ** 2)])
    return f, g, None


def exact_quadratic_search(phi, f0, g0):
    # phi' is linear in t for a quadratic
    _, d1 = phi(1.0)
    t = -g0 / (d1 - g0)
    f, d = phi(t)
    return LineSearchResult(t, f, d, True, 2)


def dense_bfgs_inverse(history, gamma):
    H = gamma * np.eye(len(history[0][0]))
    for s, y in history:
        rho = 1 / (y @ s)
        V = np.eye(len(s)) - rho * np.outer(y, s)
        H = V.T @ H @ V + rho * np.outer(s, s)
    return H


def assert_strong_wolfe(it, c1=1e-4, c2=0.9):
    ls = it.line_search
    assert ls.wolfe
    assert it.f <= it.f_prev + c1 * it.step * it.derphi0
    assert abs(ls.derphi) <= c2 * abs(it.derphi0)


class TestDirection:
    def test_empty_history(self):
        g = np.array([0.3, -1.2, 4.0])
        np.testing.assert_array_equal(lbfgs_direction(g, []), -g)

    def test_matches_dense_bfgs_on_quadratic(self):
        A = np.diag([1.0, 4.0])
        x0, x1 = np.array([1.0, 1.0]), np.array([0.5, 0.2])
        s, y = x1 - x0, A @ x1 - A @ x0
        g = A @ x1
        gamma = (s @ y) / (y @ y)
        expected = -dense_bfgs_inverse([(s, y)], gamma) @ g
        np.testing.assert_allclose(lbfgs_direction(g, [(s, y)]), expected, rtol=1e-14)

    def test_matches_dense_bfgs_long_history(self):
        rng = np.random.default_rng(0)
        Q = np.linalg.qr(rng.standard_normal((6, 6)))[0]
        A = Q @ np.diag(rng.uniform(0.5, 10, 6)) @ Q.T
        xs = rng.standard_normal((5, 6))
        history = [(b - a, A @ (b - a)) for a, b in zip(xs, xs[1:])]
        s, y = history[-1]
        g = rng.standard_normal(6)
        expected = -dense_bfgs_inverse(history, (s @ y) / (y @ y)) @ g
        np.testing.assert_allclose(lbfgs_direction(g, history), expected, rtol=1e-12)

    @given(arrays(float, 4, elements=finite), st.integers(0, 2**32 - 1))
    def test_descent(self, g, seed):
        assume(np.all(g == 0) or np.linalg.norm(g) > 1e-100)
        rng = np.random.default_rng(seed)
        history = []
        for _ in range(rng.integers(0, 6)):
            s = rng.standard_normal(4)
            y = s + 0.5 * rng.standard_normal(4)
            if s @ y > CURVATURE_EPS * np.linalg.norm(s) * np.linalg.norm(y):
                history.append((s, y))
        d = lbfgs_direction(g, history)
        if np.any(g != 0):
            assert d @ g < 0


class TestLineSearch:
    def test_quadratic_exact_minimizer_first_trial(self):
        phi = lambda t: (0.5 * (t - 1) ** 2, t - 1)
        result = wolfe_line_search(phi, 0.5, -1.0)
        assert result.step == 1.0
        assert result.evaluations == 1
        assert result.wolfe

    def test_linear_decrease(self):
        # sufficient decrease holds at t=1, but |f'| never shrinks, so no
        # strong-Wolfe step exists: the search expands and returns its best step
        calls = []

        def phi(t):
            calls.append(t)
            return -t, -1.0

        result = wolfe_line_search(phi, 0.0, -1.0, max_evals=5)
        assert calls[0] == 1.0 and -calls[0] <= 0.0 + 1e-4 * calls[0] * -1.0
        assert not result.wolfe
        assert result.step == 16.0 and result.f == -16.0

    def test_ascent_direction_rejected(self):
        with pytest.raises(ValueError, match="descent"):
            wolfe_line_search(lambda t: (t, 1.0), 0.0, 1.0)

    def test_no_decrease_fails(self):
        with pytest.raises(LineSearchFailure):
            wolfe_line_search(lambda t: (1.0 + t, 1.0), 1.0, -1.0)

    def test_zoom_finds_wolfe_point(self):
        # the trial t=1 overshoots the minimum near t=0.3, forcing a zoom
        phi = lambda t: (np.cos(10 * t) + 5 * t**2 - 0.5 * t, -10 * np.sin(10 * t) + 10 * t - 0.5)
        f0, g0 = phi(0.0)
        result = wolfe_line_search(phi, f0, g0)
        assert result.evaluations > 1
        assert result.wolfe
        assert result.f <= f0 + 1e-4 * result.step * g0
        assert abs(result.derphi) <= 0.9 * abs(g0)

    def test_nonfinite_values_shrink_step(self):
        phi = lambda t: (np.inf, np.nan) if t > 0.5 else (0.5 * (t - 0.3) ** 2, t - 0.3)
        result = wolfe_line_search(phi, 0.045, -0.3)
        assert result.step <= 0.5
        assert result.f < 0.045


class TestGradientDescent:
    def test_zero_gradient(self):
        np.testing.assert_array_equal(gd_step(np.zeros(3), 0.1), 0)

    def test_scaling(self):
        np.testing.assert_allclose(gd_step(np.array([1.0, -2.0]), 0.1), [-0.1, 0.2])

    def test_bad_alpha(self):
        with pytest.raises(ValueError):
            gd_step(np.ones(2), 0.0)

    @pytest.mark.parametrize("alpha", [0.1, 0.5, 1.5, 1.9])
    def test_geometric_contraction_on_quadratic(self, alpha):
        x0 = np.array([1.0, -2.0, 0.5])
        opts = OptimizerOptions(method="gd", alpha=alpha)
        for it in iterate(quadratic(np.eye(3)), x0, opts):
            np.testing.assert_allclose(it.x, (1 - alpha) ** it.iteration * x0, rtol=1e-12, atol=1e-300)
            if it.iteration == 10:
                break


class TestLBFGS:
    @pytest.mark.parametrize("d", [2, 5, 10])
    def test_finite_termination_on_quadratic(self, d):
        rng = np.random.default_rng(d)
        for _ in range(5):
            Q = np.linalg.qr(rng.standard_normal((d, d)))[0]
            A = Q @ np.diag(rng.uniform(0.5, 20, d)) @ Q.T
            b = rng.standard_normal(d)
            opts = OptimizerOptions(memory=d)
            for it in iterate(quadratic(A, b), np.zeros(d), opts, line_search=exact_quadratic_search):
                if np.linalg.norm(it.grad) <= 1e-10 or it.iteration > d + 1:
                    break
            assert np.linalg.norm(it.grad) <= 1e-10
            assert it.iteration <= d + 1

    def test_rosenbrock(self):
        for it in iterate(rosenbrock, np.array([-1.2, 1.0])):
            if it.iteration > 0:
                assert_strong_wolfe(it)
            if it.f <= 1e-8 or it.iteration >= 100:
                break
        assert it.f <= 1e-8
        np.testing.assert_allclose(it.x, [1, 1], atol=1e-3)

    def test_stored_pairs_satisfy_curvature(self):
        import grape.optimizer as mod

        seen = []
        original = mod.lbfgs_direction

        def spy(grad, history):
            seen.extend(history)
            return original(grad, history)

        mod.lbfgs_direction = spy
        try:
            for it in iterate(rosenbrock, np.array([-1.2, 1.0]), OptimizerOptions(memory=3)):
                if it.iteration >= 30:
                    break
        finally:
            mod.lbfgs_direction = original
        assert seen
        for s, y in seen:
            assert s @ y > CURVATURE_EPS * np.linalg.norm(s) * np.linalg.norm(y)

    def test_iterates_strictly_decrease(self):
        fs = []
        for it in iterate(rosenbrock, np.array([-1.2, 1.0]), OptimizerOptions(memory=5)):
            fs.append(it.f)
            if it.iteration >= 40:
                break
        assert all(b < a for a, b in zip(fs, fs[1:]))

    def test_vanishing_gradient_raises(self):
        with pytest.raises(LineSearchFailure):
            for it in iterate(quadratic(np.eye(2)), np.zeros(2)):
                pass


def test_options_validation():
    with pytest.raises(ValueError):
        OptimizerOptions(wolfe_c1=0.9, wolfe_c2=0.1)
    with pytest.raises(ValueError):
        OptimizerOptions(memory=0)
    with pytest.raises(ValueError):
        OptimizerOptions(alpha=-1)
    with pytest.raises(ValueError):
        OptimizerOptions(method="newton")
    with pytest.raises(ValueError):
        OptimizerOptions(j_t_tol=-1)
