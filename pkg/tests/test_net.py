"""Networks: init statistics, forward/backward correctness, NTK Gram."""

import numpy as np
import pytest

from uvu_lab import kernels, net
from uvu_lab.net import MlpSpec, ParamVector, PracticalArchSpec


def _fd_grad(fwd, params, idx, h=1e-5):
    out = {}
    for i in idx:
        pp = params.copy()
        pp[i] += h
        pm = params.copy()
        pm[i] -= h
        out[i] = (fwd(pp) - fwd(pm)) / (2 * h)
    return out


class TestInit:
    def test_unit_gaussian_moments(self):
        spec = MlpSpec(input_dim=50, hidden_widths=(100, 100), n_heads=1)
        p = net.init_params(spec, 0)
        assert p.size > 10**4
        assert abs(p.mean()) < 4 / np.sqrt(p.size)
        assert abs(p.var() - 1.0) < 0.05

    def test_fixed_seed_reproducible(self):
        spec = MlpSpec(input_dim=5, hidden_widths=(8,), n_heads=2)
        assert np.array_equal(net.init_params(spec, 42), net.init_params(spec, 42))

    def test_he_uniform_variance(self):
        spec = MlpSpec(
            input_dim=512, hidden_widths=(512,), parametrization="standard", init="he_uniform"
        )
        p = net.init_params(spec, 1)
        w1 = p[: 512 * 512]
        assert abs(w1.var() - 2.0 / 512) / (2.0 / 512) < 0.05
        b1 = p[512 * 512 : 512 * 512 + 512]
        assert np.all(b1 == 0)

    def test_param_vector_roles(self):
        spec = MlpSpec(input_dim=3, hidden_widths=())
        frozen = ParamVector(net.init_params(spec, 0), role="psi")
        with pytest.raises(ValueError):
            frozen.values[0] = 1.0
        with pytest.raises(ValueError):
            ParamVector(np.zeros(3), role="bogus")


class TestForward:
    def test_zero_input_zero_bias_relu(self):
        spec = MlpSpec(input_dim=4, hidden_widths=(8, 8), sigma_b=0.0)
        p = net.init_params(spec, 0)
        assert np.all(net.forward(spec, p, np.zeros(4)) == 0.0)

    def test_dimension_mismatch(self):
        spec = MlpSpec(input_dim=4, hidden_widths=(8,))
        p = net.init_params(spec, 0)
        with pytest.raises(ValueError):
            net.forward(spec, p, np.zeros(5))

    def test_multi_head_equals_single_heads(self):
        spec = MlpSpec(input_dim=5, hidden_widths=(16,), n_heads=3, sigma_b=0.3)
        p = net.init_params(spec, 7)
        x = np.random.default_rng(0).standard_normal(5)
        multi = net.forward(spec, p, x)
        # rebuild a single-head net per head: shared trunk, one output row
        layers = net._split_params(spec, p)
        single = spec.single_head()
        for head in range(3):
            parts = []
            for l, (w, b) in enumerate(layers):
                if l == len(layers) - 1:
                    parts.extend([w[head : head + 1].ravel(), b[head : head + 1]])
                else:
                    parts.extend([w.ravel(), b])
            p1 = np.concatenate(parts)
            assert net.forward(single, p1, x)[0] == multi[head]

    def test_output_variance_matches_nngp(self):
        # wide single-hidden-layer net: output variance over inits approaches
        # the closed-form kernel diagonal
        spec = MlpSpec(input_dim=6, hidden_widths=(2048,), nonlinearity="relu", sigma_b=0.2)
        x = kernels.unit_sphere(np.random.default_rng(3).standard_normal(6))[0]
        kappa = float(kernels.nngp_kernel(spec, x[None, :])[0, 0])
        rng = np.random.SeedSequence(11)
        outs = [net.forward(spec, net.init_params(spec, s), x)[0] for s in rng.spawn(4000)]
        assert abs(np.var(outs) - kappa) / kappa < 0.05

    def test_head_covariance_vanishes_with_width(self):
        spec = MlpSpec(input_dim=6, hidden_widths=(4096,), n_heads=2, sigma_b=0.2)
        x = kernels.unit_sphere(np.random.default_rng(4).standard_normal(6))[0]
        outs = np.array(
            [net.forward(spec, net.init_params(spec, s), x) for s in np.random.SeedSequence(5).spawn(1500)]
        )
        corr = np.corrcoef(outs[:, 0], outs[:, 1])[0, 1]
        assert abs(corr) < 0.06


class TestGrad:
    def test_ntk_net_finite_differences(self):
        spec = MlpSpec(input_dim=6, hidden_widths=(20, 20), n_heads=2, nonlinearity="relu", sigma_b=0.5)
        p = net.init_params(spec, 3)
        x = np.random.default_rng(5).standard_normal(6)
        g = net.grad(spec, p, x, head=1)
        idx = np.random.default_rng(6).choice(p.size, 120, replace=False)
        for i, fd in _fd_grad(lambda q: float(net.forward(spec, q, x)[1]), p, idx).items():
            denom = max(abs(fd), abs(g[i]))
            if denom > 1e-10:
                assert abs(fd - g[i]) / denom < 1e-4

    def test_erf_net_finite_differences(self):
        spec = MlpSpec(input_dim=4, hidden_widths=(12,), nonlinearity="erf", sigma_b=0.3)
        p = net.init_params(spec, 8)
        x = np.random.default_rng(9).standard_normal(4)
        g = net.grad(spec, p, x)
        idx = np.random.default_rng(10).choice(p.size, 60, replace=False)
        for i, fd in _fd_grad(lambda q: float(net.forward(spec, q, x)[0]), p, idx).items():
            denom = max(abs(fd), abs(g[i]))
            if denom > 1e-10:
                assert abs(fd - g[i]) / denom < 1e-4

    def test_linear_net_closed_form(self):
        # single affine layer: gradient w.r.t. weights is the scaled input
        spec = MlpSpec(input_dim=5, hidden_widths=(), sigma_w=2.0, sigma_b=0.7)
        p = net.init_params(spec, 0)
        x = np.arange(1.0, 6.0)
        g = net.grad(spec, p, x)
        np.testing.assert_allclose(g[:5], 2.0 / np.sqrt(5) * x)
        np.testing.assert_allclose(g[5], 0.7)

    def test_relu_derivative_zero_at_kink(self):
        z = np.array([-1.0, 0.0, 2.0])
        np.testing.assert_array_equal(net._phi_dot("relu", z), [0.0, 0.0, 1.0])


class TestEmpiricalNtk:
    def test_single_point_positive(self):
        spec = MlpSpec(input_dim=4, hidden_widths=(16,))
        p = net.init_params(spec, 0)
        x = np.random.default_rng(1).standard_normal((1, 4))
        theta = net.empirical_ntk(spec, p, x)
        assert theta.shape == (1, 1) and theta[0, 0] > 0

    def test_matches_explicit_gradient_gram(self):
        spec = MlpSpec(input_dim=5, hidden_widths=(10, 10), n_heads=2, sigma_b=0.4)
        p = net.init_params(spec, 2)
        xs = np.random.default_rng(3).standard_normal((5, 5))
        theta = net.empirical_ntk(spec, p, xs, head=1)
        grads = np.stack([net.grad(spec, p, x, head=1) for x in xs])
        np.testing.assert_allclose(theta, grads @ grads.T, atol=1e-12)

    def test_symmetric_psd(self):
        spec = MlpSpec(input_dim=5, hidden_widths=(32,))
        p = net.init_params(spec, 4)
        xs = np.random.default_rng(5).standard_normal((6, 5))
        theta = net.empirical_ntk(spec, p, xs)
        np.testing.assert_allclose(theta, theta.T, atol=1e-10)
        assert np.linalg.eigvalsh(theta).min() > -1e-10

    def test_wide_net_matches_analytic(self):
        spec = MlpSpec(input_dim=8, hidden_widths=(4096,), nonlinearity="relu", sigma_b=0.2)
        xs = kernels.unit_sphere(np.random.default_rng(7).standard_normal((6, 8)))
        emp = np.mean([net.empirical_ntk(spec, net.init_params(spec, 6 + k), xs) for k in range(3)], axis=0)
        ana = kernels.ntk_kernel(spec, xs)
        assert np.abs((emp - ana.theta) / ana.theta).max() < 0.05


class TestPracticalArch:
    def test_finite_differences(self):
        arch = PracticalArchSpec(state_dim=7, task_dim=4, embed_width=10, trunk_widths=(9, 9), n_actions=3, n_heads=2)
        p = net.init_practical_params(arch, 0)
        rng = np.random.default_rng(11)
        s, z = rng.standard_normal(7), rng.standard_normal(4)
        g = net.practical_grad(arch, p, s, z, action=2, head=0)
        idx = rng.choice(p.size, 120, replace=False)
        for i, fd in _fd_grad(lambda q: float(net.practical_forward(arch, q, s, z)[0, 2, 0]), p, idx).items():
            denom = max(abs(fd), abs(g[i]))
            if denom > 1e-10:
                assert abs(fd - g[i]) / denom < 1e-4

    @pytest.mark.parametrize("scale", [0.5, 2.0, 10.0])
    def test_norm_absorbs_embedding_scale(self, scale):
        # doubling the joint embedding (by scaling both encoder weight blocks
        # by sqrt(scale)) leaves the output unchanged up to the norm guard
        arch = PracticalArchSpec(state_dim=5, task_dim=3, embed_width=8, trunk_widths=(8,), n_actions=2, n_heads=1)
        p = net.init_practical_params(arch, 1)
        rng = np.random.default_rng(2)
        s, z = rng.standard_normal(5), rng.standard_normal(3)
        base = net.practical_forward(arch, p, s, z)
        n_enc = arch.embed_width * (arch.state_dim + arch.task_dim) + 2 * arch.embed_width
        p2 = p.copy()
        p2[:n_enc] *= np.sqrt(scale)
        scaled = net.practical_forward(arch, p2, s, z)
        np.testing.assert_allclose(scaled, base, atol=1e-9)

    def test_out_shape(self):
        arch = PracticalArchSpec(state_dim=5, task_dim=3, embed_width=8, trunk_widths=(8,), n_actions=4, n_heads=3)
        p = net.init_practical_params(arch, 0)
        out = net.practical_forward(arch, p, np.zeros((7, 5)), np.zeros((7, 3)))
        assert out.shape == (7, 4, 3)
