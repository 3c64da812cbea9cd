import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from pcelab.densities import StageDensity, jump_signal_moments
from pcelab.gaussian import gaussian_posterior, log_mgf_quadratic, ou_cov, ou_mean
from pcelab.market import SignalSystem
from pcelab.market import two_insider_reference


@pytest.fixture(scope="module")
def ref():
    s = two_insider_reference()
    return s, SignalSystem(s)


def simulate_ou_exact(scenario, t, n_paths, rng, n_steps=16):
    """Exact-transition OU path endpoint samples started at x0."""
    dt = t / n_steps
    mdecay = np.exp(-scenario.ou.kappa[0, 0] * dt)
    sd = np.sqrt(ou_cov(scenario.ou, dt)[0, 0])
    x = np.full(n_paths, scenario.x0[0])
    theta = scenario.ou.theta[0]
    for _ in range(n_steps):
        x = theta + mdecay * (x - theta) + sd * rng.standard_normal(n_paths)
    return x


class TestEll:
    def test_no_signals_is_zero(self, ref):
        s, sig = ref
        sd = StageDensity(s, sig, 0)
        assert sd.ell(0.3, [0.5], []) == 0.0

    def test_vanishing_precision(self):
        # a worthless private signal (C near zero) makes E near zero and the
        # likelihood log collapses to zero
        from pcelab.market import AgentSpec, MarketScenario, two_insider_reference

        base = two_insider_reference()
        agents = (
            base.agents[0],
            AgentSpec(1, 3.0, 1 / 3, 0.0, C=[[1e-12]], D=[[1.0]]),
            base.agents[2],
        )
        s = MarketScenario(base.ou, base.Pi, base.times, agents)
        sig = SignalSystem(s)
        sd = StageDensity(s, sig, 1)
        assert abs(sd.ell(0.0, [0.0], [3.0])) < 1e-9

    def test_stage_one_conditional_concavity(self, ref):
        # the released-signal log density ell_1(h) - h' E_1 h / 2 must be
        # concave with curvature -E_1 (P(1) + E_1)^{-1} P(1)
        s, sig = ref
        sd = StageDensity(s, sig, 1)
        E1 = sig.E[0][0, 0]
        S1 = ou_cov(s.ou, 1.0)[0, 0]
        expected = -E1 / (1.0 + E1 * S1)
        f = lambda h: sd.ell(0.0, [0.0], [h]) - 0.5 * E1 * h**2
        curv = f(1.0) + f(-1.0) - 2 * f(0.0)
        assert curv == pytest.approx(expected, rel=1e-10)
        assert curv < 0


class TestDensityRatio:
    def test_time_zero_is_one(self, ref):
        s, sig = ref
        sd = StageDensity(s, sig, 2)
        assert sd.density_ratio(0.0, s.x0, [0.4, -0.2]) == 1.0

    def test_positive(self, ref):
        s, sig = ref
        sd = StageDensity(s, sig, 2)
        rng = np.random.default_rng(0)
        for _ in range(20):
            t = rng.uniform(0.0, 0.99)
            x = rng.standard_normal()
            h = rng.standard_normal(2) * 3
            assert sd.density_ratio(t, [x], h) > 0

    def test_martingale_property(self, ref):
        s, sig = ref
        sd = StageDensity(s, sig, 2)
        rng = np.random.default_rng(1)
        t = 0.6
        n = 200_000
        x = simulate_ou_exact(s, t, n, rng)
        hbar = np.array([0.8, -0.5])
        # vectorized evaluation of the ratio along sampled endpoints
        vals = np.array([sd.density_ratio(t, [xi], hbar) for xi in x[:20000]])
        se = vals.std(ddof=1) / np.sqrt(vals.size)
        assert abs(vals.mean() - 1.0) < 3 * se

    def test_insider_ratio_normalizes_over_private_signal(self, ref):
        # with a single signal in the system, integrating the insider density
        # over the unconditional private-signal law returns exactly 1
        s, sig = ref
        sd = StageDensity(s, sig, 1)
        C = s.insider(1).C[0, 0]
        g_sd = np.sqrt(ou_cov(s.ou, 1.0)[0, 0] + 1.0 / C)
        g_mean = ou_mean(s.ou, s.x0, 1.0)[0]
        t, x = 0.4, 0.7
        val, _ = quad(
            lambda g: sd.density_ratio(t, [x], [0.0], k=1, g_k=[g])
            * norm.pdf(g, g_mean, g_sd),
            g_mean - 10 * g_sd,
            g_mean + 10 * g_sd,
            epsabs=1e-11,
            limit=200,
        )
        assert val == pytest.approx(1.0, abs=1e-8)

    def test_insider_ratio_marginalizes_to_reduced_system(self, ref):
        # integrating insider 1's stage-2 density over the law of G_1 given
        # H_2 recovers the public density of the system with signal 1 removed
        s, sig = ref
        sd = StageDensity(s, sig, 2)
        t, x, h2 = 0.4, 0.7, -0.6
        C1 = s.insider(1).C[0, 0]
        mean, prec = gaussian_posterior(
            ou_mean(s.ou, s.x0, 1.0),
            [[1.0 / ou_cov(s.ou, 1.0)[0, 0]]],
            [sig.E[1]],
            [[h2]],
        )
        g_mean = mean[0]
        g_sd = np.sqrt(1.0 / prec[0, 0] + 1.0 / C1)
        lhs, _ = quad(
            lambda g: sd.density_ratio(t, [x], [0.0, h2], k=1, g_k=[g])
            * norm.pdf(g, g_mean, g_sd),
            g_mean - 10 * g_sd,
            g_mean + 10 * g_sd,
            epsabs=1e-11,
            limit=200,
        )
        # reduced system: only the time-1/2 signal, at precision E_2
        E2 = sig.E[1][0, 0]
        ou = s.ou
        lam = lambda tt, xx: log_mgf_quadratic(ou, tt, [xx], 1.0, [[E2]], [E2 * h2])
        rhs = np.exp(lam(t, x) - lam(0.0, s.x0[0]))
        assert lhs == pytest.approx(rhs, abs=1e-8)


class TestJumpSignalMoments:
    def test_stage_one_no_conditioning(self, ref):
        s, sig = ref
        mu, cov = jump_signal_moments(s, sig, 1, [0.4], [])
        assert mu[0] == pytest.approx(ou_mean(s.ou, [0.4], 1.0)[0])
        assert cov[0, 0] == pytest.approx(ou_cov(s.ou, 1.0)[0, 0] + 82.0)

    def _ratio_pdf(self, s, sig, n, x, hbar_prev, h, k=0, g_k=None):
        """Conditional pdf of the stage-n signal from the likelihood ratio."""
        sd_n = StageDensity(s, sig, n)
        sd_p = StageDensity(s, sig, n - 1)
        t_n = s.times[n - 1]
        full = np.concatenate([np.asarray(hbar_prev, float).reshape(-1), [h]])
        E = sig.E[n - 1][0, 0]
        base = np.sqrt(E / (2 * np.pi)) * np.exp(-0.5 * E * h**2)
        if k == 0:
            ell_hi = sd_n.ell(t_n, x, full)
            ell_lo = sd_p.ell(t_n, x, hbar_prev)
        else:
            ell_hi = sd_n.ell_k(t_n, x, full, k, g_k)
            ell_lo = sd_p.ell_k(t_n, x, hbar_prev, k, g_k)
        return base * np.exp(ell_hi - ell_lo)

    def test_matches_ratio_pdf_uninformed(self, ref):
        s, sig = ref
        x, hbar = [0.3], [1.1]
        mu, cov = jump_signal_moments(s, sig, 2, x, hbar)
        sd = np.sqrt(cov[0, 0])
        for h in np.linspace(mu[0] - 3 * sd, mu[0] + 3 * sd, 20):
            ratio = self._ratio_pdf(s, sig, 2, x, hbar, h)
            gauss = norm.pdf(h, mu[0], sd)
            assert ratio == pytest.approx(gauss, rel=1e-6)

    def test_matches_ratio_pdf_insider(self, ref):
        s, sig = ref
        x, hbar, g = [0.3], [1.1], [-0.7]
        mu, cov = jump_signal_moments(s, sig, 2, x, hbar, insider_k=1, g_k=g)
        sd = np.sqrt(cov[0, 0])
        for h in np.linspace(mu[0] - 3 * sd, mu[0] + 3 * sd, 20):
            ratio = self._ratio_pdf(s, sig, 2, x, hbar, h, k=1, g_k=g)
            gauss = norm.pdf(h, mu[0], sd)
            assert ratio == pytest.approx(gauss, rel=1e-6)

    def test_noise_widens_covariance(self, ref):
        s, sig = ref
        _, cov = jump_signal_moments(s, sig, 2, [0.0], [0.0])
        # covariance must exceed the release-noise floor E_2^{-1} = 41.5
        assert cov[0, 0] > 41.5
