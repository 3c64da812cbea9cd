import numpy as np
import pytest

from pcelab.common_eq import representative_coeffs, solve_single_period
from pcelab.engine import (
    PCESolution,
    coefficient_rows,
    jump_problem,
    solve_pce,
    stage_handback_forms,
)
from pcelab.errors import InvalidSpec
from pcelab.market import (
    AgentSpec,
    MarketScenario,
    OUParams,
    SignalSystem,
    two_insider_reference,
)


@pytest.fixture(scope="module")
def ref_sol():
    s = two_insider_reference()
    return s, solve_pce(s)


def three_insider_scenario():
    ou = OUParams(kappa=[[1.0]], theta=[0.0], sigma=[[1.0]])
    agents = (
        AgentSpec(0, 4.0, 0.25, None),
        AgentSpec(1, 4.0, 0.25, 0.0, C=[[1.0]], D=[[1.0]]),
        AgentSpec(2, 4.0, 0.25, 1.0 / 3.0, C=[[1.0]], D=[[2.0]]),
        AgentSpec(3, 4.0, 0.25, 2.0 / 3.0, C=[[1.0]], D=[[3.0]]),
    )
    return MarketScenario(ou, [1.0], (0.0, 1.0 / 3.0, 2.0 / 3.0), agents)


def bivariate_scenario():
    ou = OUParams(
        kappa=[[1.0, 0.2], [0.0, 0.8]],
        theta=[0.1, -0.1],
        sigma=[[0.9, 0.0], [0.3, 0.7]],
    )
    agents = (
        AgentSpec(0, 2.0, 0.4, None),
        AgentSpec(1, 3.0, 0.3, 0.0, C=[[1.0, 0.2], [0.2, 0.8]], D=np.eye(2)),
        AgentSpec(2, 3.0, 0.3, 0.4, C=[[0.7, 0.0], [0.0, 1.1]], D=2 * np.eye(2)),
    )
    return MarketScenario(ou, [1.0, 0.5], (0.0, 0.4), agents).with_x0([0.2, -0.3])


def noise_demand(scenario, k, h_k, g_k):
    ins = scenario.insider(k)
    return ins.alpha * ins.C @ (np.asarray(h_k) - np.asarray(g_k))


def clearing_residual(scenario, sol, n, t, x, hbar, gbar):
    """omega-weighted total positions plus noise demand minus supply."""
    st = sol.stage(n)
    d = scenario.d
    tot = np.zeros(d)
    for j in range(n + 1):
        g_j = None if j == 0 else gbar[(j - 1) * d:j * d]
        tot += scenario.agents[j].omega * st.total_strategy(j, t, x, hbar, g_j)
    for k in range(1, n + 1):
        tot += noise_demand(scenario, k, hbar[(k - 1) * d:k * d],
                            gbar[(k - 1) * d:k * d])
    return tot - scenario.Pi


class TestLastStage:
    def test_terminal_payoff_is_state(self, ref_sol):
        _, sol = ref_sol
        Mx, Mh, v0 = sol.stage(2).price_coeffs(1.0)
        assert np.array_equal(Mx, np.eye(1))
        assert np.all(Mh == 0.0)
        assert np.all(v0 == 0.0)

    def test_reference_aggregate_coefficients(self, ref_sol):
        # the aggregate risk tolerance sums over every trading agent, so the
        # representative gamma is 3 and the aggregate curvature is
        # (2/3)(1 + E_1 + E_2) in the reference scenario
        s, sol = ref_sol
        sig = sol.signals
        st = sol.stage(2)
        assert st.gamma == pytest.approx(3.0, rel=1e-12)
        expected = (2.0 / 3.0) * (1.0 + sig.E[0][0, 0] + sig.E[1][0, 0])
        assert st.Mbar[0, 0] == pytest.approx(expected, rel=1e-12)

    def test_price_affine_in_signals(self, ref_sol):
        s, sol = ref_sol
        st = sol.stage(2)
        t = 0.8
        x = [0.4]
        base = st.price(t, x, [0.0, 0.0])
        d1 = st.price(t, x, [1.0, 0.0]) - base
        d2 = st.price(t, x, [0.0, 1.0]) - base
        combo = st.price(t, x, [0.7, -1.3])
        assert combo[0] == pytest.approx(base[0] + 0.7 * d1[0] - 1.3 * d2[0],
                                         abs=1e-12)

    def test_price_matches_pointwise_solution(self, ref_sol):
        s, sol = ref_sol
        st = sol.stage(2)
        h = np.array([0.6, -0.2])
        for t in (0.5, 0.75, 0.999):
            direct = st.solution_at(h).price(t, [0.3])
            assert st.price(t, [0.3], h)[0] == pytest.approx(direct[0], abs=1e-12)


class TestJump:
    def test_pre_release_price_is_pricing_measure_mean(self, ref_sol):
        # the pre-release price equals the post-release price evaluated at
        # the mean of the signal under the jump pricing measure
        s, sol = ref_sol
        sig = sol.signals
        st2 = sol.stage(2)
        forms = stage_handback_forms(st2)
        z = np.array([0.3, 0.8])
        p = jump_problem(s, sig, 2, st2, forms, z)
        _, Mbar, Vbar = representative_coeffs(
            p.alphas, [e.A for e in p.endowments], [e.b for e in p.endowments],
            p.M, p.Psi,
        )
        m_q = np.linalg.solve(sig.E[1] + Mbar, Vbar)
        post = st2.price(0.5, z[:1], np.concatenate([z[1:], m_q]))
        assert sol.jump(2).price_map(z)[0] == pytest.approx(post[0], abs=1e-10)

    def test_price_map_matches_pointwise_solve(self, ref_sol):
        s, sol = ref_sol
        st2 = sol.stage(2)
        forms = stage_handback_forms(st2)
        rng = np.random.default_rng(3)
        for _ in range(5):
            z = rng.standard_normal(2)
            direct = solve_single_period(
                jump_problem(s, sol.signals, 2, st2, forms, z)
            ).price
            assert sol.jump(2).price_map(z)[0] == pytest.approx(direct[0],
                                                                abs=1e-10)

    def test_jump_clearing(self, ref_sol):
        s, sol = ref_sol
        jp = sol.jump(2)
        rng = np.random.default_rng(4)
        for _ in range(5):
            x, h1, g1 = rng.standard_normal(3)
            z = np.array([x, h1])
            tot = s.agents[0].omega * jp.strategy_maps[0](z)
            tot += s.agents[1].omega * (
                jp.strategy_maps[1](z)
                + s.insider(1).C @ [g1] / s.agents[1].gamma
            )
            tot += noise_demand(s, 1, [h1], [g1])
            assert abs(tot[0] - s.Pi[0]) < 1e-10

    def test_price_jumps_for_generic_signal(self, ref_sol):
        s, sol = ref_sol
        pre = sol.jump(2).price_map(np.array([0.3, 0.8]))
        post = sol.stage(2).price(0.5, [0.3], [0.8, 0.0])
        assert abs(pre[0] - post[0]) > 1e-3


class TestStitching:
    def test_interior_terminal_price_equals_pre_release(self, ref_sol):
        s, sol = ref_sol
        Mx, Mh, v0 = sol.stage(1).price_coeffs(s.times[1])
        pm = sol.jump(2).price_map
        assert np.allclose(Mx, pm.A[:, :1], atol=0.0)
        assert np.allclose(Mh, pm.A[:, 1:], atol=0.0)
        assert np.allclose(v0, pm.b, atol=0.0)

    def test_price_path_continuity_within_stage(self, ref_sol):
        s, sol = ref_sol
        st = sol.stage(1)
        h = np.array([0.5])
        vals = [st.price(t, [0.2], h)[0] for t in np.linspace(0.0, 0.5, 40)]
        assert np.max(np.abs(np.diff(vals))) < 0.2


class TestStrategies:
    def test_continuous_clearing_both_stages(self, ref_sol):
        s, sol = ref_sol
        rng = np.random.default_rng(5)
        for _ in range(5):
            x = rng.standard_normal(1)
            h = rng.standard_normal(2)
            g = rng.standard_normal(2)
            r2 = clearing_residual(s, sol, 2, rng.uniform(0.5, 1.0), x, h, g)
            r1 = clearing_residual(s, sol, 1, rng.uniform(0.0, 0.5), x, h[:1],
                                   g[:1])
            assert np.max(np.abs(r2)) < 1e-8
            assert np.max(np.abs(r1)) < 1e-8

    def test_insider_private_dependence_is_static(self, ref_sol):
        # changing the private signal shifts the position by C Delta g / gamma
        # only, at every time and state
        s, sol = ref_sol
        st = sol.stage(2)
        for t in (0.55, 0.9):
            a = st.total_strategy(1, t, [0.3], [0.8, -0.4], [0.5])
            b = st.total_strategy(1, t, [0.3], [0.8, -0.4], [1.7])
            shift = s.insider(1).C @ [1.2] / s.agents[1].gamma
            assert np.allclose(b - a, shift, atol=1e-12)

    def test_hedge_coefficients_match_pointwise(self, ref_sol):
        s, sol = ref_sol
        h = np.array([0.7, -0.9])
        for n, t, hh in ((2, 0.8, h), (1, 0.25, h[:1])):
            st = sol.stage(n)
            for j in range(n + 1):
                Px, Ph, p0 = st.hedge_coeffs(j, t)
                fast = Px @ [0.4] + Ph @ hh + p0
                slow = st.hedge(j, t, [0.4], hh)
                assert np.allclose(fast, slow, atol=1e-11)

    def test_mpr_matches_pointwise(self, ref_sol):
        s, sol = ref_sol
        st = sol.stage(2)
        h = np.array([0.7, -0.9])
        direct = st.solution_at(h).mpr(0.7, [0.4])
        assert np.allclose(st.mpr(0.7, [0.4], h), direct, atol=1e-12)


class TestPriceRank:
    def test_state_coefficient_full_rank_on_grid(self, ref_sol):
        s, sol = ref_sol
        for n in (1, 2):
            st = sol.stage(n)
            for t in np.linspace(st.a, st.b, 100):
                Mx, _, _ = st.price_coeffs(float(t))
                assert np.linalg.svd(Mx, compute_uv=False).min() > 1e-8


class TestDeeperRecursion:
    def test_three_insiders_solves_and_clears(self):
        s = three_insider_scenario()
        sol = solve_pce(s)
        assert sol.N == 3
        assert len(sol.jumps) == 2
        rng = np.random.default_rng(6)
        x = rng.standard_normal(1)
        h = rng.standard_normal(3)
        g = rng.standard_normal(3)
        checks = ((1, 0.2), (2, 0.5), (3, 0.9))
        for n, t in checks:
            r = clearing_residual(s, sol, n, t, x, h[:n], g[:n])
            assert np.max(np.abs(r)) < 1e-8
        # stitching at both release times
        for n in (2, 3):
            Mx, Mh, v0 = sol.stage(n - 1).price_coeffs(s.times[n - 1])
            pm = sol.jump(n).price_map
            assert np.allclose(np.hstack([Mx, Mh]), pm.A, atol=1e-12)
            assert np.allclose(v0, pm.b, atol=1e-12)

    def test_bivariate_state_solves_and_clears(self):
        s = bivariate_scenario()
        sol = solve_pce(s)
        rng = np.random.default_rng(7)
        x = rng.standard_normal(2)
        h = rng.standard_normal(4)
        g = rng.standard_normal(4)
        r2 = clearing_residual(s, sol, 2, 0.7, x, h, g)
        r1 = clearing_residual(s, sol, 1, 0.2, x, h[:2], g[:2])
        assert np.max(np.abs(r2)) < 1e-8
        assert np.max(np.abs(r1)) < 1e-8
        Mx, Mh, v0 = sol.stage(2).price_coeffs(1.0)
        assert np.allclose(Mx, np.eye(2), atol=0.0)

    def test_bivariate_hedge_coeffs_match_pointwise(self):
        """The vectorized hedge coefficients agree with the pointwise
        solver when the factor is multivariate (the coefficient algebra is
        order-sensitive there)."""
        s = bivariate_scenario()
        sol = solve_pce(s)
        rng = np.random.default_rng(11)
        for n, t in ((1, 0.15), (1, 0.39), (2, 0.6), (2, 0.95)):
            st = sol.stage(n)
            for _ in range(3):
                x = rng.standard_normal(2)
                h = rng.standard_normal(2 * n)
                for j in range(n + 1):
                    Px, Ph, p0 = st.hedge_coeffs(j, t)
                    via_coeffs = Px @ x + Ph @ h + p0
                    assert np.allclose(
                        via_coeffs, st.hedge(j, t, x, h), atol=1e-10)


class TestValidationAndExport:
    def test_invalid_scenario_rejected(self):
        base = two_insider_reference()
        bad = MarketScenario(base.ou, base.Pi, (0.0, 1.5), base.agents)
        with pytest.raises(InvalidSpec):
            solve_pce(bad)

    def test_coefficient_rows_shape(self, ref_sol):
        _, sol = ref_sol
        rows = coefficient_rows(sol, grid=10)
        # per stage and grid point: d*d + d*(d*n) + d values
        assert len(rows) == 10 * (1 + 2 + 1) + 10 * (1 + 1 + 1)
        stages = {r[0] for r in rows}
        assert stages == {1, 2}
        blocks = {r[2] for r in rows}
        assert blocks == {"Mx", "Mh", "v0"}
