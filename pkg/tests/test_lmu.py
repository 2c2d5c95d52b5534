"""Unit tests for the memory state-space core and synapse filters."""

import math

import numpy as np
import pytest

from hslmu.lmu import (
    LmuSystem,
    LowpassFilter,
    compensate_lowpass,
    discretize_zoh,
    legendre_reconstruct,
    legendre_state_matrices,
    lowpass_decay,
    lowpass_filter,
    shifted_legendre,
)

from conftest import bandlimited_noise


class TestStateMatrices:
    def test_order_one(self):
        A, B = legendre_state_matrices(1)
        np.testing.assert_array_equal(A, [[-1.0]])
        np.testing.assert_array_equal(B, [1.0])

    def test_order_two(self):
        A, B = legendre_state_matrices(2)
        np.testing.assert_array_equal(A, [[-1.0, -1.0], [3.0, -3.0]])
        np.testing.assert_array_equal(B, [1.0, -3.0])

    def test_specific_entries(self):
        A, B = legendre_state_matrices(6)
        assert A[2, 3] == -5.0  # above the diagonal: -(2i+1)
        assert B[2] == 5.0
        # alternating-sign structure on and below the diagonal
        assert A[3, 3] == -7.0 and A[3, 2] == 7.0 and A[3, 1] == -7.0

    def test_rejects_order_zero(self):
        with pytest.raises(ValueError):
            legendre_state_matrices(0)


class TestDiscretizeZoh:
    def test_scalar_closed_form(self):
        # d=1, theta=1: A_bar = e^-1, B_bar = 1 - e^-1
        A_bar, B_bar = discretize_zoh(np.array([[-1.0]]), np.array([1.0]), 1.0)
        np.testing.assert_allclose(A_bar, [[math.exp(-1)]], rtol=1e-12)
        np.testing.assert_allclose(B_bar, [1 - math.exp(-1)], rtol=1e-12)

    def test_infinite_window_limit(self):
        A, B = legendre_state_matrices(4)
        A_bar, B_bar = discretize_zoh(A, B, 1e9)
        assert np.abs(A_bar - np.eye(4)).max() < 1e-8
        assert np.abs(B_bar).max() < 1e-8

    def test_single_step_from_rest_matches_euler(self):
        # d=6, theta=100, substep 1e-4 of the window step
        A, B = legendre_state_matrices(6)
        A_bar, B_bar = discretize_zoh(A, B, 100.0)
        u = 0.37
        m_euler = np.zeros(6)
        h = (1.0 / 100.0) / 10**4
        for _ in range(10**4):
            m_euler = m_euler + h * (A @ m_euler + B * u)
        assert np.abs((A_bar @ np.zeros(6) + B_bar * u) - m_euler).max() <= 1e-6

    def test_matches_fine_step_euler_from_random_state(self):
        """One ZOH step equals explicit Euler integration at a tiny substep."""
        rng = np.random.default_rng(3)
        theta = 100.0
        for order, substeps in ((6, 10**5), (16, 10**6)):
            A, B = legendre_state_matrices(order)
            A_bar, B_bar = discretize_zoh(A, B, theta)
            m = rng.uniform(-1, 1, order)
            u = 0.37
            m_euler = m.copy()
            h = (1.0 / theta) / substeps
            for _ in range(substeps):
                m_euler = m_euler + h * (A @ m_euler + B * u)
            assert np.abs((A_bar @ m + B_bar * u) - m_euler).max() <= 1e-6

    def test_rejects_nonpositive_window(self):
        A, B = legendre_state_matrices(2)
        with pytest.raises(ValueError):
            discretize_zoh(A, B, 0.0)

    def test_spectral_radius_stable(self):
        for order in (2, 8, 32, 64):
            for theta in (10.0, 100.0, 784.0):
                A_bar, _ = discretize_zoh(*legendre_state_matrices(order), theta)
                radius = np.abs(np.linalg.eigvals(A_bar)).max()
                assert radius <= 1.0 + 1e-9, (order, theta, radius)


class TestCompensation:
    def test_vanishing_time_constant_is_identity(self):
        A, B = legendre_state_matrices(3)
        A_bar, B_bar = discretize_zoh(A, B, 50.0)
        A_H, B_H = compensate_lowpass(A_bar, B_bar, 1e-9)  # decay underflows to 0
        np.testing.assert_array_equal(A_H, A_bar)
        np.testing.assert_array_equal(B_H, B_bar)

    def test_half_decay_closed_form(self):
        A, B = legendre_state_matrices(3)
        A_bar, B_bar = discretize_zoh(A, B, 50.0)
        tau = 1.0 / math.log(2.0)  # a = 1/2
        A_H, B_H = compensate_lowpass(A_bar, B_bar, tau)
        np.testing.assert_allclose(A_H, 2.0 * A_bar - np.eye(3), rtol=1e-12)
        np.testing.assert_allclose(B_H, 2.0 * B_bar, rtol=1e-12)

    def test_filtered_recurrence_reproduces_unfiltered(self):
        """The compensated matrices make the synapse filter algebraically exact."""
        rng = np.random.default_rng(9)
        for order in (2, 8, 32, 64):
            sys = LmuSystem(order, theta_bar=100.0, tau_bar=200.0)
            a = lowpass_decay(200.0)
            u = rng.uniform(-1, 1, 1000)
            plain = np.zeros(order)
            filtered = np.zeros(order)
            worst = 0.0
            for t in range(1000):
                plain = sys.A_bar @ plain + sys.B_bar * u[t]
                filtered = a * filtered + (1 - a) * (sys.A_H @ filtered + sys.B_H * u[t])
                worst = max(worst, np.abs(plain - filtered).max())
            assert worst <= 1e-10, (order, worst)

    def test_rejects_nonpositive_tau(self):
        A, B = legendre_state_matrices(2)
        A_bar, B_bar = discretize_zoh(A, B, 10.0)
        with pytest.raises(ValueError):
            compensate_lowpass(A_bar, B_bar, 0.0)
        with pytest.raises(ValueError):
            compensate_lowpass(A_bar, B_bar, -1.0)


class TestLowpassFilter:
    def test_converges_to_constant_input(self):
        tau = 7.0
        filt = LowpassFilter(tau, 1)
        x = np.array([1.3])
        steps = int(10 * tau)
        for _ in range(steps):
            y = filt.step(x)
        assert abs(y[0] - x[0]) <= math.exp(-10) * abs(x[0]) * 1.01

    def test_impulse_response(self):
        tau = 5.0
        a = lowpass_decay(tau)
        filt = LowpassFilter(tau, 1)
        response = [filt.step(np.array([1.0]))[0]]
        for _ in range(9):
            response.append(filt.step(np.array([0.0]))[0])
        expected = [(1 - a) * a**t for t in range(10)]
        np.testing.assert_allclose(response, expected, rtol=1e-12)

    def test_tiny_tau_passes_through(self):
        filt = LowpassFilter(1e-9, 3)
        x = np.array([0.2, -0.7, 1.0])
        np.testing.assert_array_equal(filt.step(x), x)

    def test_vectorized_filter_matches_loop(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(40, 3))
        tau = 4.0
        filt = LowpassFilter(tau, 3)
        loop = np.stack([filt.step(row).copy() for row in x])
        np.testing.assert_allclose(lowpass_filter(x, tau), loop, atol=1e-12)


class TestLegendreBasis:
    def test_low_degree_closed_forms(self):
        r = np.linspace(0, 1, 11)
        P = shifted_legendre(3, r)
        np.testing.assert_allclose(P[0], np.ones_like(r))
        np.testing.assert_allclose(P[1], 2 * r - 1)
        np.testing.assert_allclose(P[2], 6 * r**2 - 6 * r + 1, atol=1e-12)

    def test_recurrence_matches_binomial_sum(self):
        """Cross-check against the explicit alternating binomial expansion."""
        def binomial_eval(i, r):
            return (-1) ** i * sum(
                math.comb(i, j) * math.comb(i + j, j) * (-r) ** j for j in range(i + 1)
            )

        r_values = np.linspace(0, 1, 9)
        P = shifted_legendre(10, r_values)
        for i in range(10):
            expected = [binomial_eval(i, r) for r in r_values]
            np.testing.assert_allclose(P[i], expected, atol=1e-9)

    def test_constant_input_reconstructs_everywhere(self):
        sys = LmuSystem(6, theta_bar=40.0, tau_bar=1e-9)
        u = 0.8
        m = np.zeros(6)
        for _ in range(int(40 * 8)):  # several windows to settle
            m = sys.A_bar @ m + sys.B_bar * u
        for r in (0.0, 0.25, 0.5, 1.0):
            assert abs(legendre_reconstruct(m, r) - u) / abs(u) < 1e-3

    def test_delay_reconstruction_nrmse(self):
        """Band-limited noise read back at the window's old end."""
        order, theta, T = 12, 100, 6000
        u = bandlimited_noise(T, cutoff=0.02, seed=42)
        A_bar, B_bar = discretize_zoh(*legendre_state_matrices(order), float(theta))
        m = np.zeros(order)
        recon = np.zeros(T)
        coeffs = shifted_legendre(order, 1.0)
        for t in range(T):
            m = A_bar @ m + B_bar * u[t]
            recon[t] = m @ coeffs
        idx = np.arange(3 * theta, T)  # discard the fill transient
        err = recon[idx] - u[idx - theta]
        nrmse = np.sqrt(np.mean(err**2)) / np.sqrt(np.mean(u[idx] ** 2))
        assert nrmse < 0.05, nrmse

    def test_reconstruction_error_nonincreasing_in_order(self):
        theta, T = 100, 6000
        u = bandlimited_noise(T, cutoff=0.005, seed=42)
        errors = []
        for order in (2, 4, 8, 16):
            A_bar, B_bar = discretize_zoh(*legendre_state_matrices(order), float(theta))
            m = np.zeros(order)
            recon = np.zeros(T)
            coeffs = shifted_legendre(order, 1.0)
            for t in range(T):
                m = A_bar @ m + B_bar * u[t]
                recon[t] = m @ coeffs
            idx = np.arange(3 * theta, T)
            errors.append(np.sqrt(np.mean((recon[idx] - u[idx - theta]) ** 2)))
        assert all(b <= a * 1.001 for a, b in zip(errors, errors[1:])), errors

    def test_reconstruct_validates_r(self):
        with pytest.raises(ValueError):
            legendre_reconstruct(np.zeros(4), 1.5)
