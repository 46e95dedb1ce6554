import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from pivpricing.model_core import (
    BsParams,
    HestonParams,
    Pearson4Shape,
    PivParams,
    girsanov_kernel_u,
    novikov_bound_check,
    novikov_constant,
    pearson4_pdf,
    piv_diffusion,
    piv_drift,
    stationary_cdf_p,
    stationary_density_p,
)

pos = st.floats(0.05, 10.0)
params_st = st.builds(PivParams, theta=pos, a=st.floats(0.01, 5.0), mu=st.floats(-1.0, 1.0), sigma=st.floats(0.1, 3.0))


class TestParams:
    def test_derived(self):
        p = PivParams(2.0, 0.5, 0.1, 0.3)
        assert p.c == pytest.approx(0.045)
        assert p.kappa == pytest.approx(0.09)

    @pytest.mark.parametrize("kw", [dict(theta=0), dict(a=-1), dict(sigma=0), dict(mu=math.nan)])
    def test_invalid(self, kw):
        base = dict(theta=1.0, a=1.0, mu=0.0, sigma=1.0)
        with pytest.raises(ValueError):
            PivParams(**{**base, **kw})

    def test_from_kappa(self):
        p = PivParams.from_kappa(0.03, c=0.5, mu=0.2)
        assert p.kappa == pytest.approx(0.03)
        assert p.sigma == 1.0 and p.a == 0.5 and p.mu == 0.2

    def test_bs_heston_validation(self):
        with pytest.raises(ValueError):
            BsParams(0.0)
        with pytest.raises(ValueError):
            HestonParams(2.0, 0.04, -0.1, 0.0, 0.04)
        with pytest.raises(ValueError):
            HestonParams(2.0, 0.04, 0.3, 1.5, 0.04)
        h = HestonParams(2.0, 0.04, 0.3, -0.7, 0.04)
        assert h.feller_ratio == pytest.approx(2 * 2 * 0.04 / 0.09)

    def test_pearson4_shape(self):
        with pytest.raises(ValueError):
            Pearson4Shape(m=0.5, a4=1.0)
        with pytest.raises(ValueError):
            Pearson4Shape(m=2.0, a4=0.0)


class TestCoefficients:
    def test_drift_examples(self):
        assert piv_drift(PivParams(2, 0.5, 0.1, 1), 0.1) == 0.0
        assert piv_drift(PivParams(2, 0.5, 0.0, 1), 0.5) == -1.0
        assert piv_drift(PivParams(1.7, 0.3, -0.05, 0.9), 0.2) == pytest.approx(-0.425, abs=1e-15)

    def test_diffusion_examples(self):
        p = PivParams(2, 0.5, 0, 1)
        assert piv_diffusion(p, 0.0) == pytest.approx(math.sqrt(2), abs=1e-15)
        assert piv_diffusion(p, 1.0) == pytest.approx(2.0, abs=1e-15)

    def test_rejects_non_finite(self):
        p = PivParams(2, 0.5, 0, 1)
        for f in (piv_drift, piv_diffusion):
            with pytest.raises(ValueError):
                f(p, math.inf)
        with pytest.raises(ValueError):
            girsanov_kernel_u(p, math.nan, 0.0)

    def test_vectorized(self):
        p = PivParams(2, 0.5, 0, 1)
        x = np.linspace(-1, 1, 5)
        np.testing.assert_allclose(piv_diffusion(p, x), np.sqrt(2 * (1 + x * x)))

    def test_girsanov_examples(self):
        assert girsanov_kernel_u(PivParams(1, 1, 0, 1), 0.0, 0.0) == pytest.approx(1 / math.sqrt(2), abs=1e-15)
        # independent evaluation of (-r - theta (R - mu) + sigma^2 theta a (1 + R^2)) / (sigma sqrt(2 theta a (1 + R^2)))
        th, a, mu, s, r, x = 2.0, 0.5, 0.1, 1.0, 0.05, 0.3
        num = -r - th * (x - mu) + s * s * th * a * (1 + x * x)
        den = s * math.sqrt(2 * th * a * (1 + x * x))
        assert girsanov_kernel_u(PivParams(th, a, mu, s), r, x) == pytest.approx(num / den, rel=1e-14)

    def test_girsanov_root(self):
        # choose R = 0, mu = 0: numerator -r + kappa vanishes when r = kappa
        p = PivParams(1.5, 0.2, 0.0, 1.0)
        assert girsanov_kernel_u(p, p.kappa, 0.0) == pytest.approx(0.0, abs=1e-15)

    def test_novikov_examples(self):
        assert novikov_constant(PivParams(1, 1, 0, 1), 0.0) == pytest.approx(3.0, abs=1e-14)
        p = PivParams(2, 0.5, 0.1, 1)
        k, ok = novikov_bound_check(p, 0.05, np.arange(-10, 10.0001, 0.01))
        assert ok
        k0, ok0 = novikov_bound_check(p, 0.05, [0.0])
        assert ok0 and girsanov_kernel_u(p, 0.05, 0.0) ** 2 <= k0

    @settings(max_examples=200, deadline=None)
    @given(p=params_st, t=st.floats(0.1, 10.0), x=st.floats(-50, 50), rate=st.floats(-0.1, 0.3))
    def test_product_invariance(self, p, t, x, rate):
        q = PivParams(p.theta, p.a / t**2, p.mu, p.sigma * t)
        # sigma^2 a is the only combination used; equality up to the rounding of that product
        assert piv_diffusion(q, x) == pytest.approx(piv_diffusion(p, x), rel=1e-13)
        assert girsanov_kernel_u(q, rate, x) == pytest.approx(girsanov_kernel_u(p, rate, x), rel=1e-12, abs=1e-12)
        assert novikov_constant(q, rate) == pytest.approx(novikov_constant(p, rate), rel=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(p=params_st, x=st.floats(-50, 50), y=st.floats(-50, 50))
    def test_lipschitz(self, p, x, y):
        lhs = abs(piv_diffusion(p, x) - piv_diffusion(p, y))
        assert lhs <= p.sigma * math.sqrt(2 * p.theta * p.a) * abs(x - y) * (1 + 1e-12) + 1e-12

    @settings(max_examples=100, deadline=None)
    @given(p=params_st, rate=st.floats(-0.1, 0.3))
    def test_novikov_holds(self, p, rate):
        _, ok = novikov_bound_check(p, rate, np.linspace(-50, 50, 2001))
        assert ok


class TestDensities:
    def test_pearson4_student_t(self):
        for nu_t in (1.0, 3.0, 7.5):
            shape = Pearson4Shape(m=(nu_t + 1) / 2, a4=math.sqrt(nu_t))
            x = np.linspace(-4000, 4000, 800_001) if nu_t == 1.0 else np.linspace(-400, 400, 400_001)
            if nu_t == 1.0:
                with pytest.raises(ValueError):
                    pearson4_pdf(shape, x)  # Cauchy tails: mass outside the grid is too large
                continue
            p = pearson4_pdf(shape, x)
            sel = np.abs(x) < 10
            np.testing.assert_allclose(p[sel], stats.t.pdf(x[sel], nu_t), atol=1e-8)

    def test_pearson4_normalized_and_symmetric(self):
        shape = Pearson4Shape(m=2.5, a4=1.3)
        x = np.linspace(-100, 100, 200_001)
        p = pearson4_pdf(shape, x)
        assert np.trapezoid(p, x) == pytest.approx(1.0, abs=1e-8)
        np.testing.assert_allclose(p, p[::-1], rtol=1e-13)

    @pytest.mark.parametrize("nu", [-1.0, 1.0])
    def test_pearson4_skew_sign(self, nu):
        # with exp(+nu arctan x) the mean sits at nu a4 / (2 (m - 1)) and the skew follows sign(nu)
        x = np.linspace(-200, 200, 400_001)
        p = pearson4_pdf(Pearson4Shape(m=3.0, a4=1.0, nu=nu), x)
        mean = np.trapezoid(x * p, x)
        third = np.trapezoid((x - mean) ** 3 * p, x)
        assert mean == pytest.approx(nu / 4.0, abs=1e-6)
        assert np.sign(third) == np.sign(nu)

    def test_pearson4_narrow_grid_rejected(self):
        with pytest.raises(ValueError):
            pearson4_pdf(Pearson4Shape(m=2.0, a4=1.0), np.linspace(-3, 3, 1001))

    def test_stationary_mu0_shape(self):
        p = PivParams(2.0, 0.5, 0.0, 1.0)
        x = np.linspace(-200, 200, 400_001)
        d = stationary_density_p(p, x)
        ratio = d / (1 + x * x) ** -2.0
        np.testing.assert_allclose(ratio, ratio[0], rtol=1e-10)
        np.testing.assert_allclose(d, d[::-1], rtol=1e-13)
        assert np.trapezoid(d, x) == pytest.approx(1.0, abs=1e-8)

    def test_non_normalizable(self):
        # exponent 1 + 1/(2c) must exceed 1/2: always true for c > 0, but the tail test rejects huge c
        with pytest.raises(ValueError):
            stationary_density_p(PivParams(1.0, 1e6, 0.0, 1.0), np.linspace(-40, 40, 10001))

    def test_fokker_planck_residual(self):
        p = PivParams(2.0, 0.5, 0.0, 1.0)
        h = 1e-3
        x = np.arange(-100, 100 + h / 2, h)
        d = stationary_density_p(p, x)
        half_v2 = 0.5 * piv_diffusion(p, x) ** 2
        g = half_v2 * d
        drift_flux = piv_drift(p, x) * d
        res = (g[2:] - 2 * g[1:-1] + g[:-2]) / h**2 - (drift_flux[2:] - drift_flux[:-2]) / (2 * h)
        assert np.max(np.abs(res)) < 1e-4

    def test_stationary_cdf(self):
        p = PivParams(2.0, 0.5, 0.0, 1.0)
        # mu = 0, c = 1/2: density 2/pi (1 + x^2)^-2, CDF has a closed form
        x = np.array([-2.0, -0.5, 0.0, 0.7, 3.0])
        exact = 0.5 + (np.arctan(x) + x / (1 + x * x)) / math.pi
        np.testing.assert_allclose(stationary_cdf_p(p, x), exact, atol=1e-7)
