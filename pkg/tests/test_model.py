import json
import warnings

import numpy as np
import pytest

from ksm.errors import ConvergenceWarning, DimensionError, NotPositiveDefiniteError, StepSizeError
from ksm.kernels import GaussianKernel, LinearKernel, PowerCosineKernel
from ksm.model import (
    ModelState,
    bound_slack,
    checkpoint_dict,
    cmds_y_terms,
    correlation_bound_objective,
    energies,
    energy,
    init_state,
    load_checkpoint,
    param_gradients,
    response_closed_form,
    response_dynamics,
    save_checkpoint,
    state_from_dict,
)

from conftest import FOUR_KERNELS, central_diff, kernel_id, rel_err


def random_state(kernel, N, M, rng, lam=0.001):
    A = rng.normal(size=(N, N))
    L = A @ A.T / N + 0.2 * np.eye(N)
    return ModelState(rng.normal(size=(N, M)), rng.uniform(0.5, 1.5, N), L, lam, kernel)


def energy_oracle(state, x, y):
    # literal double loop over the per-sample energy
    k, W, q, L = state.kernel, state.W, state.q, state.L
    N = len(q)
    e = 0.0
    for i in range(N):
        e -= q[i] * y[i] * k.eval(W[i], x) - 0.5 * q[i] ** 2 * k.eval(W[i], W[i])
    for i in range(N):
        for j in range(N):
            e += 0.5 * (L[i, j] * y[i] * y[j] - 0.5 * L[i, j] ** 2)
    return e + 0.5 * state.lam * sum(v * v for v in y)


class TestInit:
    def test_paper_initialisation(self):
        s = init_state(16, 2, GaussianKernel(0.3), lam=0.001, seed=0)
        np.testing.assert_array_equal(s.q, np.ones(16))
        np.testing.assert_array_equal(s.L, np.eye(16))
        assert s.lam == 0.001 and s.W.shape == (16, 2)

    def test_seeded(self):
        a = init_state(5, 3, LinearKernel(), seed=4)
        b = init_state(5, 3, LinearKernel(), seed=4)
        np.testing.assert_array_equal(a.W, b.W)
        assert a.seed_history == [{"seed": 4, "stream": "init"}]

    def test_standard_normal(self):
        s = init_state(100, 50, LinearKernel(), seed=1)
        assert abs(s.W.mean()) < 4 / np.sqrt(s.W.size)
        assert abs(s.W.std() - 1.0) < 0.05

    def test_shape_checks(self):
        with pytest.raises(DimensionError):
            ModelState(np.ones((2, 3)), np.ones(3), np.eye(2), 0.0, LinearKernel())
        with pytest.raises(ValueError):
            ModelState(np.ones((2, 3)), np.ones(2), np.eye(2), -1.0, LinearKernel())


class TestEnergy:
    def test_all_zero(self):
        s = ModelState(np.ones((3, 2)), np.zeros(3), np.zeros((3, 3)), 0.7, GaussianKernel(0.3))
        assert energy(s, [0.3, 0.1], np.zeros(3)) == 0.0

    def test_identity_lateral(self):
        s = ModelState(np.ones((4, 2)), np.zeros(4), np.eye(4), 0.5, LinearKernel())
        assert energy(s, [0.3, 0.1], np.zeros(4)) == -1.0

    @pytest.mark.parametrize("k", FOUR_KERNELS, ids=kernel_id)
    def test_matches_loop_oracle(self, k, rng):
        for _ in range(10):
            s = random_state(k, 4, 3, rng, lam=0.05)
            s.L = s.L + 0.1 * rng.normal(size=(4, 4))  # energy is defined for any L
            x, y = rng.normal(size=3), rng.normal(size=4)
            np.testing.assert_allclose(energy(s, x, y), energy_oracle(s, x, y), rtol=1e-12)

    def test_batched(self, rng):
        s = random_state(GaussianKernel(0.3), 5, 2, rng)
        X, Y = rng.normal(size=(6, 2)), rng.normal(size=(6, 5))
        np.testing.assert_allclose(energies(s, X, Y), [energy(s, x, y) for x, y in zip(X, Y)], rtol=1e-13)

    def test_dimension_error(self, rng):
        s = random_state(LinearKernel(), 3, 2, rng)
        with pytest.raises(DimensionError):
            energies(s, np.ones((2, 3)), np.ones((2, 3)))
        with pytest.raises(DimensionError):
            energies(s, np.ones((2, 2)), np.ones((2, 4)))


class TestClosedForm:
    def test_pass_through(self, rng):
        k = PowerCosineKernel(3)
        s = ModelState(rng.normal(size=(4, 3)), np.ones(4), np.eye(4), 0.0, k)
        X = rng.normal(size=(5, 3))
        np.testing.assert_allclose(response_closed_form(s, X).Y, k.cross(X, s.W), rtol=1e-14)

    def test_after_init(self, rng):
        k = GaussianKernel(0.3)
        s = init_state(16, 2, k, lam=0.001, seed=0)
        x = rng.normal(size=(1, 2))
        np.testing.assert_allclose(response_closed_form(s, x).Y, k.cross(x, s.W) / 1.001, rtol=1e-14)

    @pytest.mark.parametrize("k", FOUR_KERNELS, ids=kernel_id)
    def test_dense_solver_oracle(self, k, rng):
        for _ in range(25):
            s = random_state(k, 6, 3, rng)
            X = rng.normal(size=(4, 3))
            Y, e = response_closed_form(s, X)
            for t in range(4):
                a = np.array([s.q[i] * k.eval(s.W[i], X[t]) for i in range(6)])
                np.testing.assert_allclose(Y[t], np.linalg.solve(s.L + s.lam * np.eye(6), a), rtol=1e-10, atol=1e-12)
                np.testing.assert_allclose(e[t], energy_oracle(s, X[t], Y[t]), rtol=1e-12, atol=1e-12)

    def test_zero_y_gradient(self, rng):
        for trial in range(100):
            k = FOUR_KERNELS[trial % 4]
            s = random_state(k, 8, 3, rng)
            X = rng.normal(size=(3, 3))
            Y = response_closed_form(s, X).Y
            resid = s.feedforward(X) - Y @ s.lateral()
            assert np.max(np.abs(resid)) <= 1e-8

    def test_indefinite_lateral(self):
        s = ModelState(np.ones((2, 2)), np.ones(2), np.diag([1.0, -3.0]), 0.5, LinearKernel())
        with pytest.raises(NotPositiveDefiniteError) as info:
            response_closed_form(s, np.ones((1, 2)))
        assert info.value.smallest_eigenvalue == pytest.approx(-2.5)
        assert "-2.5" in str(info.value)


class TestDynamics:
    def test_exact_step(self, rng):
        s = ModelState(rng.normal(size=(3, 2)), np.ones(3), np.eye(3), 0.0, LinearKernel())
        x = rng.normal(size=2)
        res = response_dynamics(s, x, eta_y=1.0)
        np.testing.assert_allclose(res.y, s.W @ x, rtol=1e-15)
        assert res.converged and res.steps == 2  # second step confirms the fixed point

    @pytest.mark.parametrize("k", FOUR_KERNELS, ids=kernel_id)
    def test_matches_closed_form(self, k, rng):
        for _ in range(10):
            s = random_state(k, 6, 3, rng)
            x = rng.normal(size=3)
            res = response_dynamics(s, x, tol=1e-7)
            assert res.converged
            y = response_closed_form(s, x[None]).Y[0]
            assert np.max(np.abs(res.y - y)) <= 1e-6

    def test_near_stability_limit(self, rng):
        s = random_state(GaussianKernel(0.3), 5, 2, rng)
        lmax = np.linalg.eigvalsh(s.lateral())[-1]
        x = rng.normal(size=2)
        res = response_dynamics(s, x, eta_y=1.99 / lmax, max_steps=200000, tol=1e-9)
        assert res.converged
        assert np.max(np.abs(res.y - response_closed_form(s, x[None]).Y[0])) <= 1e-6

    def test_step_too_large(self, rng):
        s = random_state(LinearKernel(), 4, 2, rng)
        lmax = np.linalg.eigvalsh(s.lateral())[-1]
        with pytest.raises(StepSizeError):
            response_dynamics(s, np.ones(2), eta_y=2.0 / lmax)
        with pytest.raises(StepSizeError):
            response_dynamics(s, np.ones(2), eta_y=-0.1)

    def test_energy_non_increasing(self, rng):
        s = random_state(PowerCosineKernel(3), 6, 3, rng)
        x = rng.normal(size=3)
        lmax = np.linalg.eigvalsh(s.lateral())[-1]
        trace = [energy(s, x, np.zeros(6))]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            for k in range(1, 40):
                y = response_dynamics(s, x, eta_y=1.5 / lmax, max_steps=k, tol=0).y
                trace.append(energy(s, x, y))
        assert np.all(np.diff(trace) <= 1e-12)

    def test_reports_non_convergence(self, rng):
        s = random_state(LinearKernel(), 4, 2, rng)
        with pytest.warns(ConvergenceWarning):
            res = response_dynamics(s, np.ones(2), max_steps=2, tol=1e-15)
        assert not res.converged and res.steps == 2


def mean_energy(state, X, Y):
    return float(np.mean(energies(state, X, Y)))


class TestParamGradients:
    @pytest.mark.parametrize("k", FOUR_KERNELS, ids=kernel_id)
    def test_finite_differences(self, k, rng):
        for _ in range(5):
            s = random_state(k, 4, 3, rng, lam=0.01)
            X = rng.normal(size=(5, 3))
            if isinstance(k, GaussianKernel):
                # features near the data, so gradients sit above the difference noise
                s.W = X[:4] + k.sigma * rng.normal(size=(4, 3))
            Y = response_closed_form(s, X).Y
            g = param_gradients(s, X, Y)

            def with_(name, value):
                t = s.copy()
                setattr(t, name, value)
                return mean_energy(t, X, Y)

            for name, got in (("W", g.W), ("q", g.q), ("L", g.L)):
                fd = central_diff(lambda v: with_(name, v), getattr(s, name), h=1e-6)
                assert rel_err(got, fd) <= 1e-5, name

    def test_zero_responses(self, rng):
        k = PowerCosineKernel(2)
        s = random_state(k, 3, 4, rng)
        X = rng.normal(size=(6, 4))
        g = param_gradients(s, X, np.zeros((6, 3)))
        expected_w = np.array([0.5 * s.q[i] ** 2 * k.grad_self(s.W[i]) for i in range(3)])
        np.testing.assert_allclose(g.W, expected_w, rtol=1e-12)
        np.testing.assert_allclose(g.q, s.q * k.self_values(s.W), rtol=1e-14)
        np.testing.assert_allclose(g.L, -0.5 * s.L, rtol=1e-15)

    def test_gaussian_hebbian_form(self, rng):
        # descent direction is a y*g'-weighted pull of w toward the inputs
        sigma = 0.3
        k = GaussianKernel(sigma)
        s = random_state(k, 3, 2, rng)
        X = rng.normal(size=(8, 2)) * 0.3
        Y = response_closed_form(s, X).Y
        g = param_gradients(s, X, Y)
        F = k.cross(X, s.W)
        c = Y * F / sigma**2  # y_i g'_i up to sign
        expected = np.array([-s.q[i] * np.mean(c[:, i, None] * (X - s.W[i]), axis=0) for i in range(3)])
        np.testing.assert_allclose(g.W, expected, rtol=1e-12, atol=1e-15)

    def test_lateral_gradient_symmetric(self, rng):
        s = random_state(LinearKernel(), 5, 3, rng)
        X = rng.normal(size=(7, 3))
        g = param_gradients(s, X, response_closed_form(s, X).Y)
        np.testing.assert_array_equal(g.L, g.L.T)


class TestBounds:
    def test_linear_slack_is_squared_distance(self, rng):
        # for f(u, v) = u.v the gap is |mean_t y_t x_t / T ... | form: (1/2)|c - q w|^2
        for _ in range(20):
            T, M = rng.integers(1, 15), rng.integers(1, 5)
            X, y, w, q = rng.normal(size=(T, M)), rng.normal(size=T), rng.normal(size=M), rng.normal()
            c = X.T @ y / T
            np.testing.assert_allclose(bound_slack(LinearKernel(), X, y, w, q), 0.5 * np.sum((c - q * w) ** 2), rtol=1e-10, atol=1e-13)

    @pytest.mark.parametrize("k", FOUR_KERNELS, ids=kernel_id)
    def test_slack_non_negative(self, k, rng):
        for _ in range(50):
            T, M = rng.integers(1, 20), rng.integers(1, 5)
            slack = bound_slack(k, rng.normal(size=(T, M)), rng.normal(size=T), rng.normal(size=M), rng.normal() * 2)
            assert slack >= -1e-10

    @pytest.mark.parametrize("k", FOUR_KERNELS, ids=kernel_id)
    def test_upper_bound_chain(self, k, rng):
        for _ in range(20):
            s = random_state(k, 4, 3, rng)
            X = rng.normal(size=(10, 3))
            Y = response_closed_form(s, X).Y
            assert correlation_bound_objective(s, X, Y) >= cmds_y_terms(k.gram(X), Y) - 1e-8

    def test_bound_tight_at_optimum(self, rng):
        # choosing w, q to match the Hilbert-space correlation closes the gap (linear kernel)
        X, y = rng.normal(size=(6, 3)), rng.normal(size=6)
        c = X.T @ y / 6
        assert abs(bound_slack(LinearKernel(), X, y, c / 2.0, 2.0)) < 1e-14

    def test_legendre_identity(self):
        grid = np.linspace(-5, 5, 2001)
        for C in (-3.0, -0.4, 0.0, 1.0, 2.5):
            vals = C * grid - 0.5 * grid**2
            assert vals.max() == pytest.approx(0.5 * C**2, abs=1e-5)
            assert grid[np.argmax(vals)] == pytest.approx(C, abs=5e-3)
            assert C * C - 0.5 * C**2 == pytest.approx(0.5 * C**2)


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        s = random_state(PowerCosineKernel(3), 5, 4, rng, lam=0.002)
        s.seed_history = [{"seed": 7, "stream": "init"}]
        save_checkpoint(s, tmp_path / "c.json", extra={"config_hash": "abc"})
        back = load_checkpoint(tmp_path / "c.json")
        for name in ("W", "q", "L"):
            np.testing.assert_array_equal(getattr(back, name), getattr(s, name))
        assert back.kernel == s.kernel and back.lam == 0.002
        assert back.seed_history == s.seed_history
        doc = json.loads((tmp_path / "c.json").read_text())
        assert doc["W"]["dtype"] == "<f8" and doc["N"] == 5 and doc["M"] == 4
        assert doc["config_hash"] == "abc"

    def test_rejects_foreign_documents(self, rng):
        s = random_state(LinearKernel(), 2, 2, rng)
        doc = checkpoint_dict(s)
        with pytest.raises(ValueError):
            state_from_dict({**doc, "format": "other"})
        with pytest.raises(DimensionError):
            state_from_dict({**doc, "N": 3})
        bad = json.loads(json.dumps(doc))
        bad["q"]["dtype"] = "<f4"
        with pytest.raises(ValueError):
            state_from_dict(bad)
