"""Closed-form kernel recursions against Monte Carlo and special values."""

import numpy as np
import pytest

from uvu_lab import kernels
from uvu_lab.net import MlpSpec


class TestPairExpectations:
    @pytest.mark.parametrize("nl", ["relu", "erf"])
    def test_monte_carlo_agreement(self, nl):
        k11, k12, k22 = 1.3, 0.45, 0.8
        e_mc, ed_mc = kernels.pair_expectation_mc(nl, k11, k12, k22, 10**6, 0)
        e = float(kernels.pair_expectation(nl, k11, k12, k22))
        ed = float(kernels.pair_derivative_expectation(nl, k11, k12, k22))
        assert abs(e_mc - e) / abs(e) < 0.005
        assert abs(ed_mc - ed) / abs(ed) < 0.005

    def test_relu_zero_angle(self):
        # identical points: E[phi(u)^2] = k/2
        val = kernels.pair_expectation("relu", 2.0, 2.0, 2.0)
        assert abs(val - 1.0) < 1e-12

    def test_identity(self):
        assert kernels.pair_expectation("identity", 1.0, 0.3, 2.0) == 0.3
        assert kernels.pair_derivative_expectation("identity", 1.0, 0.3, 2.0) == 1.0

    def test_unsupported_nonlinearity(self):
        with pytest.raises(ValueError):
            kernels.pair_expectation("tanh", 1.0, 0.0, 1.0)


class TestNngp:
    def test_linear_base_case(self):
        spec = MlpSpec(input_dim=4, hidden_widths=(), sigma_w=1.5, sigma_b=0.3)
        xs = np.random.default_rng(0).standard_normal((3, 4))
        kappa = kernels.nngp_kernel(spec, xs)
        expected = 1.5**2 / 4 * (xs @ xs.T) + 0.3**2
        np.testing.assert_allclose(kappa, expected, atol=1e-12)

    def test_relu_diagonal_recursion_on_sphere(self):
        # unit-sphere input, no bias: second-layer self-kernel halves
        spec = MlpSpec(input_dim=5, hidden_widths=(1,), sigma_w=1.3, sigma_b=0.0)
        x = kernels.unit_sphere(np.random.default_rng(1).standard_normal(5))
        k1 = 1.3**2 / 5
        k2 = float(kernels.nngp_kernel(spec, x)[0, 0])
        assert abs(k2 - 1.3**2 * k1 / 2) < 1e-12

    def test_symmetry_and_psd(self):
        spec = MlpSpec(input_dim=6, hidden_widths=(1, 1), nonlinearity="erf", sigma_b=0.4)
        xs = kernels.unit_sphere(np.random.default_rng(2).standard_normal((8, 6)))
        kappa = kernels.nngp_kernel(spec, xs)
        np.testing.assert_allclose(kappa, kappa.T, atol=1e-12)
        assert np.linalg.eigvalsh(kappa).min() > -1e-10


class TestNtk:
    def test_linear_depth_structure(self):
        # identity nonlinearity: each layer adds a kernel term on top of the
        # derivative-weighted previous one; closed form checkable by hand
        sw, sb = 1.2, 0.5
        spec = MlpSpec(input_dim=3, hidden_widths=(1,), nonlinearity="identity", sigma_w=sw, sigma_b=sb)
        xs = np.random.default_rng(3).standard_normal((2, 3))
        k1 = sw**2 / 3 * (xs @ xs.T) + sb**2
        k2 = sb**2 + sw**2 * k1
        expected = k1 * sw**2 + k2  # theta2 = theta1 * kappa_dot2 + kappa2
        pair = kernels.ntk_kernel(spec, xs)
        np.testing.assert_allclose(pair.theta, expected, atol=1e-12)
        np.testing.assert_allclose(pair.kappa, k2, atol=1e-12)

    def test_two_hidden_layers_symbolic(self):
        sw = 0.9
        spec = MlpSpec(input_dim=2, hidden_widths=(1, 1), nonlinearity="identity", sigma_w=sw, sigma_b=0.0)
        xs = np.array([[1.0, 0.0], [0.6, 0.8]])
        g = xs @ xs.T / 2
        k1 = sw**2 * g
        k2 = sw**2 * k1
        k3 = sw**2 * k2
        theta = (k1 * sw**2 + k2) * sw**2 + k3
        pair = kernels.ntk_kernel(spec, xs)
        np.testing.assert_allclose(pair.theta, theta, atol=1e-12)

    def test_recursion_consistency(self):
        spec = MlpSpec(input_dim=5, hidden_widths=(1, 1, 1), nonlinearity="relu", sigma_b=0.3)
        xs = kernels.unit_sphere(np.random.default_rng(4).standard_normal((6, 5)))
        states = kernels.kernel_layers(spec, xs)
        for prev, cur in zip(states, states[1:]):
            np.testing.assert_allclose(cur.theta, prev.theta * cur.kappa_dot + cur.kappa, atol=1e-12)

    def test_ntk_dominates_nngp_relu_no_bias(self):
        spec = MlpSpec(input_dim=7, hidden_widths=(1, 1), nonlinearity="relu", sigma_b=0.0)
        xs = kernels.unit_sphere(np.random.default_rng(5).standard_normal((10, 7)))
        pair = kernels.ntk_kernel(spec, xs)
        diag_t, diag_k = np.diag(pair.theta), np.diag(pair.kappa)
        assert np.all(diag_t >= diag_k - 1e-12)

    def test_theta_psd(self):
        spec = MlpSpec(input_dim=5, hidden_widths=(1, 1), nonlinearity="relu", sigma_b=0.2)
        xs = kernels.unit_sphere(np.random.default_rng(6).standard_normal((9, 5)))
        pair = kernels.ntk_kernel(spec, xs)
        assert np.linalg.eigvalsh(0.5 * (pair.theta + pair.theta.T)).min() > -1e-10


class TestBlocks:
    def test_blocks_consistent_with_direct(self):
        spec = MlpSpec(input_dim=4, hidden_widths=(1,), sigma_b=0.3)
        rng = np.random.default_rng(7)
        sets = {
            "test": kernels.unit_sphere(rng.standard_normal((3, 4))),
            "train": kernels.unit_sphere(rng.standard_normal((5, 4))),
            "next": kernels.unit_sphere(rng.standard_normal((5, 4))),
        }
        blocks = kernels.kernel_blocks(spec, sets)
        direct = kernels.ntk_kernel(spec, sets["test"], sets["train"])
        np.testing.assert_allclose(blocks[("test", "train")].theta, direct.theta, atol=1e-12)
        np.testing.assert_allclose(blocks[("train", "test")].kappa, direct.kappa.T, atol=1e-12)

    def test_unit_sphere_rejects_zero(self):
        with pytest.raises(ValueError):
            kernels.unit_sphere(np.zeros((1, 3)))
