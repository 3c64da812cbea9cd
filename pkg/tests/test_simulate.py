"""Tests for the exact-transition path simulator."""

import filecmp

import numpy as np
import pytest

from pcelab.engine import solve_pce
from pcelab.errors import DegenerateVolatility, InvalidSpec
from pcelab.gaussian import OUParams, ou_cov, ou_mean
from pcelab.market import AgentSpec, MarketScenario, two_insider_reference
from pcelab.simulate import (
    SimConfig,
    _draw_paths,
    _row_layout,
    double_jump_report,
    export_csv,
    market_price_of_risk,
    simulate,
)


@pytest.fixture(scope="module")
def ref():
    s = two_insider_reference()
    return s, solve_pce(s)


@pytest.fixture(scope="module")
def ref_samples(ref):
    s, sol = ref
    return simulate(SimConfig(s, sol, seed=42, n_paths=100, grid=120))


def bivariate_scenario():
    ou = OUParams(
        kappa=[[1.0, 0.2], [0.0, 0.8]],
        theta=[0.1, -0.1],
        sigma=[[0.9, 0.0], [0.3, 0.7]],
    )
    agents = (
        AgentSpec(0, 2.0, 0.4, None),
        AgentSpec(1, 3.0, 0.3, 0.0, C=[[1.0, 0.2], [0.2, 0.8]], D=np.eye(2)),
        AgentSpec(2, 3.0, 0.3, 0.4, C=[[0.7, 0.0], [0.0, 1.1]],
                  D=2 * np.eye(2)),
    )
    return MarketScenario(ou, [1.0, 0.5], (0.0, 0.4), agents).with_x0(
        [0.2, -0.3])


def test_config_validation(ref):
    s, sol = ref
    with pytest.raises(InvalidSpec):
        SimConfig(s, sol, grid=1)
    with pytest.raises(InvalidSpec):
        SimConfig(s, sol, n_paths=0)


def test_row_layout_reference(ref):
    s, _ = ref
    rows, x_times = _row_layout(s, 50)
    # 50 rows per period plus one jump row
    assert len(rows) == 101
    # three rows at the release time, ordered left, jump, right
    at_half = [(n, ph) for (t, n, ph) in rows if abs(t - 0.5) < 1e-12]
    assert at_half == [(1, "left"), (2, "jump"), (2, "right")]
    # the factor grid does not duplicate the release time
    assert np.all(np.diff(x_times) > 0)
    assert x_times[0] == 0.0 and x_times[-1] == 1.0
    # times are globally sorted
    ts = [t for t, _, _ in rows]
    assert ts == sorted(ts)


def test_factor_transition_moments(ref):
    """Simulated factor marginals match the exact transition law."""
    s, sol = ref
    cfg = SimConfig(s, sol, seed=5, n_paths=30000, grid=4)
    _, x_times = _row_layout(s, cfg.grid)
    X, _, _, _ = _draw_paths(cfg, x_times)
    n = cfg.n_paths
    for i, t in enumerate(x_times):
        if t == 0.0:
            continue
        mean = ou_mean(s.ou, s.x0, t)[0]
        var = ou_cov(s.ou, t)[0, 0]
        xs = X[:, i, 0]
        assert abs(xs.mean() - mean) < 4 * np.sqrt(var / n)
        # variance of the sample variance for a Gaussian is 2 var^2 / n
        assert abs(xs.var() - var) < 4 * var * np.sqrt(2.0 / n)


def test_signal_noise_moments(ref):
    """H_n - X_1 is centered with variance E_n^{-1} (within 4 SE)."""
    s, sol = ref
    cfg = SimConfig(s, sol, seed=7, n_paths=30000, grid=2)
    _, x_times = _row_layout(s, cfg.grid)
    X, _, Y, Z = _draw_paths(cfg, x_times)
    x1 = X[:, -1, 0]
    for n in (1, 2):
        ins = s.insider(n)
        h = x1 + Y[:, n - 1, 0] + Z[:, n - 1, 0] / (ins.alpha * ins.C[0, 0])
        resid = h - x1
        var = np.linalg.inv(sol.signals.E[n - 1])[0, 0]
        m = cfg.n_paths
        assert abs(resid.mean()) < 4 * np.sqrt(var / m)
        assert abs(resid.var() - var) < 4 * var * np.sqrt(2.0 / m)


def test_clearing_on_all_rows(ref_samples):
    worst = max(sm.residual.max() for sm in ref_samples)
    assert worst <= 1e-8


def test_terminal_price_equals_factor(ref_samples):
    for sm in ref_samples:
        assert sm.phase[-1] == "diffusive"
        assert abs(sm.S[-1, 0] - sm.x1[0]) < 1e-12


def test_price_discontinuous_at_release(ref_samples):
    """The price path is continuous except at the release time."""
    jumped = 0
    for sm in ref_samples:
        rows = {ph: r for r, ph in enumerate(sm.phase) if ph in
                ("left", "jump", "right")}
        # the one-shot trade happens at the pre-release price
        assert abs(sm.S[rows["jump"], 0] - sm.S[rows["left"], 0]) < 1e-12
        if abs(sm.S[rows["right"], 0] - sm.S[rows["left"], 0]) > 1e-3:
            jumped += 1
        # elsewhere steps are small (grid-size moves, not jumps)
        dS = np.abs(np.diff(sm.S[:, 0]))
        dS = np.delete(dS, [rows["jump"] - 1, rows["jump"]])
        assert dS.max() < 0.5
    assert jumped >= 95


def test_mpr_discontinuous_at_release(ref_samples):
    moved = 0
    for sm in ref_samples:
        rows = {ph: r for r, ph in enumerate(sm.phase) if ph in
                ("left", "right")}
        assert np.isnan(sm.mpr[sm.phase.index("jump"), 0])
        if abs(sm.mpr[rows["right"], 0] - sm.mpr[rows["left"], 0]) > 1e-3:
            moved += 1
    assert moved >= 95


def test_mpr_matches_price_drift(ref):
    """The market price of risk equals (dS/dx sigma)^{-1} times the price
    drift, with the drift recovered by central differences in time."""
    s, sol = ref
    rng = np.random.default_rng(3)
    dt = 1e-5
    for _ in range(20):
        n = int(rng.integers(1, 3))
        st = sol.stage(n)
        lo, hi = (0.0, 0.5) if n == 1 else (0.5, 1.0)
        t = float(rng.uniform(lo + 0.01, hi - 0.01))
        x = rng.normal(size=1)
        hbar = rng.normal(size=n)

        def price(tt):
            Mx, Mh, v0 = st.price_coeffs(tt)
            return Mx @ x + Mh @ hbar + v0

        time_part = (price(t + dt) - price(t - dt)) / (2 * dt)
        Mx, _, _ = st.price_coeffs(t)
        drift = time_part + Mx @ (s.ou.kappa @ (s.ou.theta - x))
        theta_fd = np.linalg.solve(Mx @ s.ou.sigma, drift)
        theta = market_price_of_risk(st, t, x, hbar)
        assert np.allclose(theta, theta_fd, rtol=1e-5, atol=1e-6)


def test_mpr_degenerate_volatility(ref):
    s, sol = ref

    from types import SimpleNamespace

    class Stub:
        scenario = SimpleNamespace(
            ou=SimpleNamespace(sigma=np.array([[1e-14]])))

        def price_coeffs(self, t):
            return np.eye(1), np.zeros((1, 1)), np.zeros(1)

        def mpr(self, t, x, hbar):  # pragma: no cover
            return np.zeros(1)

    with pytest.raises(DegenerateVolatility):
        market_price_of_risk(Stub(), 0.3, np.zeros(1), np.zeros(1))


def test_wealth_accounting(ref_samples):
    """Wealth rows are cumulative left-point gains of the stored positions."""
    sm = ref_samples[0]
    J = sm.strategies.shape[1]
    w = np.zeros(J)
    for r in range(1, len(sm.t)):
        dS = sm.S[r] - sm.S[r - 1]
        prev = np.nan_to_num(sm.strategies[r - 1])
        w = w + prev @ dS
        assert np.allclose(sm.wealth[r], w, atol=1e-12)
    # uninformed and insider 1 trade from the start; insider 2 starts flat
    assert sm.wealth[0].tolist() == [0.0] * J


def test_determinism_bitwise(ref, tmp_path):
    s, sol = ref
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    export_csv(simulate(SimConfig(s, sol, seed=11, n_paths=5, grid=20)), a)
    export_csv(simulate(SimConfig(s, sol, seed=11, n_paths=5, grid=20)), b)
    assert filecmp.cmp(a, b, shallow=False)
    assert a.read_bytes() == b.read_bytes()


def test_seed_changes_output(ref, tmp_path):
    s, sol = ref
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    export_csv(simulate(SimConfig(s, sol, seed=11, n_paths=3, grid=10)), a)
    export_csv(simulate(SimConfig(s, sol, seed=12, n_paths=3, grid=10)), b)
    assert a.read_bytes() != b.read_bytes()


def test_csv_round_trip(ref, tmp_path):
    import csv as csvmod

    s, sol = ref
    samples = simulate(SimConfig(s, sol, seed=9, n_paths=2, grid=12))
    path = tmp_path / "paths.csv"
    export_csv(samples, path)
    with open(path, newline="") as fh:
        reader = csvmod.DictReader(fh)
        rows = list(reader)
    assert reader.fieldnames == [
        "path_id", "stage", "phase", "t", "X", "S", "mpr",
        "pi_0", "pi_1", "pi_2", "residual",
    ]
    assert len(rows) == 2 * len(samples[0].t)
    for sm in samples:
        mine = [r for r in rows if int(r["path_id"]) == sm.path_id]
        for r, row in enumerate(mine):
            assert float(row["t"]) == sm.t[r]
            assert float(row["X"]) == sm.X[r, 0]
            assert float(row["S"]) == sm.S[r, 0]
            assert row["phase"] == sm.phase[r]
            if sm.phase[r] == "jump":
                assert np.isnan(float(row["mpr"]))
            else:
                assert float(row["mpr"]) == sm.mpr[r, 0]


def test_csv_empty(tmp_path):
    path = tmp_path / "empty.csv"
    export_csv([], path)
    assert path.read_text().strip() == \
        "path_id,stage,phase,t,X,S,mpr,residual"


def test_double_jump_report_structure(ref_samples):
    report = double_jump_report(ref_samples)
    assert len(report) == 100
    rec = report[0]
    assert rec["n"] == 2 and rec["t"] == 0.5
    assert rec["pre"].shape == (2, 1)
    # the realized-signal move is nonzero for every path and agent
    for rec in report:
        assert np.all(np.abs(rec["post"] - rec["trade"]) > 1e-6)


def test_univariate_first_move_vanishes(ref_samples):
    """For a univariate factor the pre-release limit of the continuous
    strategy coincides with the one-shot trade, so only the second of the
    two discontinuities at the release time is nonzero."""
    report = double_jump_report(ref_samples)
    for rec in report:
        assert np.all(np.abs(rec["trade"] - rec["pre"]) < 1e-9)
        assert not rec["flag"]


def test_bivariate_release_behavior():
    """The bivariate model clears on every row and shows the same release
    pattern as the univariate one: the pre-release limit equals the
    one-shot trade and the post-release adjustment is nonzero."""
    s = bivariate_scenario()
    sol = solve_pce(s)
    samples = simulate(SimConfig(s, sol, seed=21, n_paths=40, grid=60))
    worst = max(sm.residual.max() for sm in samples)
    assert worst <= 1e-8
    for rec in double_jump_report(samples):
        assert np.all(np.abs(rec["trade"] - rec["pre"]) < 1e-9)
        assert np.all(np.abs(rec["post"] - rec["trade"]) > 1e-6)


def test_vanishing_signal_release_effects_shrink():
    """As the second signal loses information content (C down) and its
    noise trading dries up (D up), the price move at the release shrinks
    toward zero. Positions still rebalance because a new agent enters."""
    ou = OUParams(kappa=[[1.0]], theta=[0.0], sigma=[[1.0]])
    price_moves, strat_moves = [], []
    for c in (1e-1, 1e-2, 1e-3):
        agents = (
            AgentSpec(0, 3.0, 1 / 3, None),
            AgentSpec(1, 3.0, 1 / 3, 0.0, C=[[1.0]], D=[[1.0]]),
            AgentSpec(2, 3.0, 1 / 3, 0.5, C=[[c]], D=[[1.0 / c ** 2]]),
        )
        s = MarketScenario(ou, [1.0], (0.0, 0.5), agents)
        sol = solve_pce(s)
        samples = simulate(SimConfig(s, sol, seed=4, n_paths=20, grid=40))
        assert max(sm.residual.max() for sm in samples) <= 1e-8
        pm = 0.0
        for sm in samples:
            rows = {ph: r for r, ph in enumerate(sm.phase) if ph in
                    ("left", "right")}
            pm = max(pm, abs(sm.S[rows["right"], 0] - sm.S[rows["left"], 0]))
        sm_move = max(np.abs(rec["post"] - rec["trade"]).max()
                      for rec in double_jump_report(samples))
        price_moves.append(pm)
        strat_moves.append(sm_move)
    assert price_moves[0] > price_moves[1] > price_moves[2]
    assert price_moves[2] < 0.05
    # the entry rebalancing stays bounded while the price effect dies
    assert max(strat_moves) < 5.0
