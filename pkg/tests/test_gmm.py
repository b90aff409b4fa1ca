import numpy as np
import pytest
from scipy import stats

from glyphlearn import autodiff as ad
from glyphlearn.gmm import (
    GmmParams,
    SamplerConfig,
    gmm_log_pdf,
    gmm_mode_of_top_component,
    gmm_sample,
    temper_weights,
)

from oracles import fd_gradient, rel_err


def random_gmm(rng, k=3, spread=4.0):
    w = rng.dirichlet(np.ones(k))
    mu = rng.normal(0, spread, (k, 2))
    sc = rng.uniform(0.4, 1.8, (k, 2))
    rho = rng.uniform(-0.7, 0.7, k)
    return GmmParams(w, mu, sc, rho).validate()


class TestLogPdf:
    def test_standard_bivariate_normal_at_origin(self):
        g = GmmParams(np.array([1.0]), np.zeros((1, 2)), np.ones((1, 2)), np.zeros(1))
        val = gmm_log_pdf(g, np.zeros(2)).item()
        assert val == pytest.approx(-np.log(2 * np.pi), abs=1e-12)

    def test_duplicate_components_collapse(self):
        mu = np.array([[1.0, -2.0]])
        one = GmmParams(np.array([1.0]), mu, np.array([[0.8, 1.3]]), np.array([0.4]))
        two = GmmParams(
            np.array([0.5, 0.5]),
            np.repeat(mu, 2, axis=0),
            np.repeat(np.array([[0.8, 1.3]]), 2, axis=0),
            np.array([0.4, 0.4]),
        )
        rng = np.random.default_rng(0)
        for _ in range(20):
            pt = rng.normal(0, 3, 2)
            assert gmm_log_pdf(one, pt).item() == pytest.approx(gmm_log_pdf(two, pt).item(), abs=1e-12)

    def test_density_integrates_to_one(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            g = random_gmm(rng)
            span = float(np.abs(g.means).max() + 8 * g.scales.max())
            xs = np.linspace(-span, span, 500)
            gx, gy = np.meshgrid(xs, xs, indexing="ij")
            pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
            vals = np.exp(gmm_log_pdf(g, pts).value)
            mass = vals.sum() * (xs[1] - xs[0]) ** 2
            assert mass == pytest.approx(1.0, abs=1e-2)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            g = random_gmm(rng)
            pt0 = rng.normal(0, 2, 2)

            def build(wv, muv, scv, rhov, ptv):
                return gmm_log_pdf(GmmParams(wv, muv, scv, rhov), ptv)

            leaves = [ad.Tensor(g.weights), ad.Tensor(g.means), ad.Tensor(g.scales), ad.Tensor(g.corrs), ad.Tensor(pt0)]
            grads = ad.gradient(build(*leaves), leaves)
            arrays = [g.weights, g.means, g.scales, g.corrs, pt0]
            for i in range(5):
                def f(v, i=i):
                    vals = [a.copy() for a in arrays]
                    vals[i] = v
                    return float(build(*vals).value)
                numeric = fd_gradient(f, arrays[i].copy())
                assert rel_err(grads[i], numeric) < 1e-4


class TestSampling:
    def test_zero_temperature_limit_returns_argmax_mean(self):
        rng = np.random.default_rng(3)
        g = random_gmm(rng, k=4)
        mode = gmm_mode_of_top_component(g)
        draws = [gmm_sample(g, SamplerConfig(temperature=1e-3), np.random.default_rng(i)) for i in range(50)]
        top_mu = g.means[np.argmax(g.weights)]
        assert np.allclose(mode, top_mu)
        assert np.max(np.abs(np.stack(draws) - top_mu)) < 0.3

    def test_unit_temperature_moments(self):
        g = GmmParams(np.array([1.0]), np.array([[2.0, -1.0]]), np.array([[1.5, 0.7]]), np.array([0.3]))
        rng = np.random.default_rng(4)
        draws = np.stack([gmm_sample(g, SamplerConfig(1.0), rng) for _ in range(100_000)])
        se = g.scales[0] / np.sqrt(len(draws))
        assert np.all(np.abs(draws.mean(axis=0) - g.means[0]) < 3 * se)

    def test_component_entropy_drops_at_low_temperature(self):
        w = np.array([0.6, 0.3, 0.1])

        def entropy(t):
            p = temper_weights(w, t)
            return -(p * np.log(p)).sum()

        assert entropy(0.5) < entropy(1.0)

    def test_unit_temperature_matches_direct_mixture_sampling(self):
        rng = np.random.default_rng(5)
        g = random_gmm(rng, k=3)
        tempered = np.stack([gmm_sample(g, SamplerConfig(1.0), rng) for _ in range(10_000)])

        direct = []
        for _ in range(10_000):
            k = rng.choice(3, p=g.weights)
            sx, sy = g.scales[k]
            r = g.corrs[k]
            z1, z2 = rng.standard_normal(2)
            direct.append(
                [g.means[k, 0] + sx * z1, g.means[k, 1] + sy * (r * z1 + np.sqrt(1 - r * r) * z2)]
            )
        direct = np.array(direct)
        for axis in range(2):
            res = stats.ks_2samp(tempered[:, axis], direct[:, axis])
            assert res.pvalue > 0.001

    def test_temperature_scales_within_component_covariance(self):
        g = GmmParams(np.array([1.0]), np.zeros((1, 2)), np.ones((1, 2)), np.zeros(1))
        rng = np.random.default_rng(6)
        hot = np.stack([gmm_sample(g, SamplerConfig(4.0), rng) for _ in range(40_000)])
        assert hot[:, 0].std() == pytest.approx(2.0, rel=0.05)
