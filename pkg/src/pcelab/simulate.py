"""Exact-transition path simulation of the equilibrium.

A run draws, per path, the factor path X on the union time grid, the private
signal noises Y_n, and the noise-trader demands Z_n, then evaluates prices,
total positions, the market price of risk and clearing residuals from the
solved equilibrium coefficients.  The factor is simulated all the way to the
horizon before any signal is formed, because the private signals observe the
terminal factor value directly.

Randomness is derived from one root seed through numpy SeedSequence
spawning: path i always uses child i, so results are identical regardless of
how paths are batched or threaded.  Within a path the draw order is fixed:
first the standardized factor innovations over the whole grid, then
(Y_n, Z_n) per insider in entry order.

CSV schema (long format, one row per path and grid time):

    path_id, stage, phase, t, X, S, mpr, pi_0, ..., pi_J-1, residual

with phase one of diffusive / left / jump / right.  Release times carry
three rows: the pre-release limit (left), the one-shot trade at the
pre-release price (jump, mpr blank), and the post-release value (right).
For a multivariate factor the value columns fan out with _i suffixes.
Values are printed with 17 significant digits so a round trip is exact.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .engine import PCESolution
from .errors import DegenerateVolatility, InvalidSpec
from .gaussian import ou_cov, ou_mean
from .market import MarketScenario, market_signal

FMT = "%.17g"


@dataclass(frozen=True)
class SimConfig:
    scenario: MarketScenario
    solution: PCESolution
    seed: int = 42
    n_paths: int = 100
    grid: int = 500  # points per diffusive period, boundaries included

    def __post_init__(self):
        if self.grid < 2:
            raise InvalidSpec("grid must have at least 2 points per period")
        if self.n_paths < 1:
            raise InvalidSpec("need at least one path")


@dataclass
class PathSample:
    """One simulated world, row-aligned across all per-time fields."""

    path_id: int
    stage: np.ndarray  # per row
    phase: list  # diffusive / left / jump / right
    t: np.ndarray
    X: np.ndarray  # (rows, d)
    innovations: np.ndarray  # standardized factor innovations, (steps, d)
    G: np.ndarray  # (N, d) private signals
    Y: np.ndarray  # (N, d) private signal noises
    Z: np.ndarray  # (N, d) noise-trader demands
    H: np.ndarray  # (N, d) public versions of the signals
    S: np.ndarray  # (rows, d)
    strategies: np.ndarray  # (rows, J, d) total positions / jump trades
    mpr: np.ndarray  # (rows, d), nan on jump rows
    residual: np.ndarray  # (rows,) max-abs clearing residual
    wealth: np.ndarray  # (rows, J) gains-integral wealth, left-point sums

    @property
    def x1(self) -> np.ndarray:
        return self.X[-1]


def _row_layout(scenario: MarketScenario, grid: int):
    """Global row schedule: (t, stage, phase) plus the union X grid."""
    N = scenario.N
    bounds = list(scenario.times) + [1.0]
    rows = []
    x_times = []
    for n in range(1, N + 1):
        ts = np.linspace(bounds[n - 1], bounds[n], grid)
        for i, t in enumerate(ts):
            first, last = i == 0, i == grid - 1
            if last and n < N:
                phase = "left"
            elif first and n > 1:
                phase = "right"
            else:
                phase = "diffusive"
            rows.append((float(t), n, phase))
            if not (first and n > 1):
                x_times.append(float(t))
        if n < N:
            rows.append((bounds[n], n + 1, "jump"))
    # order rows as left, jump, right at each release time
    rows.sort(key=lambda r: (r[0], {"diffusive": 0, "left": 0, "jump": 1,
                                    "right": 2}[r[2]]))
    return rows, np.array(x_times)


def _draw_paths(config: SimConfig, x_times: np.ndarray):
    """All random draws, vectorized across paths with per-path streams."""
    s = config.scenario
    d, N = s.d, s.N
    steps = len(x_times) - 1
    children = np.random.SeedSequence(config.seed).spawn(config.n_paths)
    X = np.empty((config.n_paths, len(x_times), d))
    innov = np.empty((config.n_paths, steps, d))
    Y = np.empty((config.n_paths, N, d))
    Z = np.empty((config.n_paths, N, d))
    decays = []
    chols = []
    for i in range(steps):
        dt = x_times[i + 1] - x_times[i]
        cov = ou_cov(s.ou, dt)
        decays.append(dt)
        chols.append(np.linalg.cholesky(cov))
    y_chols = [np.linalg.cholesky(np.linalg.inv(s.insider(n).C))
               for n in range(1, N + 1)]
    z_chols = [np.linalg.cholesky(np.linalg.inv(s.insider(n).D))
               for n in range(1, N + 1)]
    for p, child in enumerate(children):
        rng = np.random.default_rng(child)
        eps = rng.standard_normal((steps, d))
        innov[p] = eps
        x = s.x0.astype(float).copy()
        X[p, 0] = x
        for i in range(steps):
            x = ou_mean(s.ou, x, decays[i]) + chols[i] @ eps[i]
            X[p, i + 1] = x
        for n in range(N):
            Y[p, n] = y_chols[n] @ rng.standard_normal(d)
            Z[p, n] = z_chols[n] @ rng.standard_normal(d)
    return X, innov, Y, Z


def market_price_of_risk(stage, t: float, x, hbar) -> np.ndarray:
    """Market price of risk of the stage price process at (t, x)."""
    Mx, _, _ = stage.price_coeffs(t)
    vol = Mx @ stage.scenario.ou.sigma
    sv = np.linalg.svd(vol, compute_uv=False)
    if sv.min() <= 1e-12 * max(sv.max(), 1.0):
        raise DegenerateVolatility("price volatility is singular")
    return stage.mpr(t, x, hbar)


def simulate(config: SimConfig) -> list:
    """Simulate n_paths equilibrium worlds on the configured grid."""
    s = config.scenario
    sol = config.solution
    d, N, J = s.d, s.N, s.N + 1
    rows, x_times = _row_layout(s, config.grid)
    X, innov, Y, Z = _draw_paths(config, x_times)
    P = config.n_paths
    x1 = X[:, -1, :]
    G = x1[:, None, :] + Y
    H = np.empty_like(G)
    for n in range(1, N + 1):
        ins = s.insider(n)
        for p in range(P):
            H[p, n - 1] = market_signal(G[p, n - 1], Z[p, n - 1], ins.C,
                                        ins.alpha)

    t_to_xi = {round(t, 12): i for i, t in enumerate(x_times)}
    R = len(rows)
    S = np.empty((P, R, d))
    PI = np.empty((P, R, J, d))
    MPR = np.full((P, R, d), np.nan)
    RES = np.empty((P, R))
    Wealth = np.zeros((P, R, J))
    stage_col = np.empty(R, dtype=int)
    phase_col = []
    t_col = np.empty(R)

    for r, (t, n, phase) in enumerate(rows):
        stage_col[r] = n
        phase_col.append(phase)
        t_col[r] = t
        xi = t_to_xi[round(t, 12)]
        x_all = X[:, xi, :]  # (P, d)
        hbar = H[:, :n, :].reshape(P, n * d)
        if phase == "jump":
            jp = sol.jump(n)
            hprev = H[:, : n - 1, :].reshape(P, (n - 1) * d)
            z = np.hstack([x_all, hprev])
            S[:, r, :] = z @ jp.price_map.A.T + jp.price_map.b
            PI[:, r, :, :] = np.nan
            res = -np.tile(s.Pi, (P, 1)).astype(float)
            for j in range(n):
                pij = z @ jp.strategy_maps[j].A.T + jp.strategy_maps[j].b
                if j >= 1:
                    pij = pij + G[:, j - 1, :] @ (
                        s.insider(j).C / s.agents[j].gamma
                    ).T
                PI[:, r, j, :] = pij
                res += s.agents[j].omega * pij
            res += Z[:, : n - 1, :].sum(axis=1)
            RES[:, r] = np.abs(res).max(axis=1)
            continue
        st = sol.stage(n)
        Mx, Mh, v0 = st.price_coeffs(t)
        S[:, r, :] = x_all @ Mx.T + hbar @ Mh.T + v0
        MPR[:, r, :] = np.stack(
            [st.mpr(t, x_all[p], hbar[p]) for p in range(P)]
        )
        res = -np.tile(s.Pi, (P, 1)).astype(float)
        for j in range(J):
            if j <= n:
                Px, Ph, p0 = st.hedge_coeffs(j, t)
                pij = x_all @ Px.T + hbar @ Ph.T + p0
                gamma_j = s.agents[j].gamma
                if j >= 1:
                    pij += G[:, j - 1, :] @ (s.insider(j).C / gamma_j).T
                if st.is_last:
                    for m in range(1, n + 1):
                        if m != j:
                            E_m = sol.signals.E[m - 1]
                            pij += H[:, m - 1, :] @ (E_m / gamma_j).T
                res += s.agents[j].omega * pij
            else:
                pij = np.full((P, d), np.nan)
            PI[:, r, j, :] = pij
        res += Z[:, :n, :].sum(axis=1)
        RES[:, r] = np.abs(res).max(axis=1)

    # gains-integral wealth: left-point sums of position times price change;
    # the left->jump transition contributes nothing (the pre-release limit
    # equals the pre-release price by stitching) and the jump->right
    # transition books the one-shot trade against the post-release value
    for r in range(1, R):
        dS = S[:, r, :] - S[:, r - 1, :]
        prev = PI[:, r - 1, :, :]
        gains = np.einsum("pjd,pd->pj", np.nan_to_num(prev), dS)
        Wealth[:, r, :] = Wealth[:, r - 1, :] + gains

    out = []
    for p in range(P):
        out.append(PathSample(
            path_id=p, stage=stage_col.copy(), phase=list(phase_col),
            t=t_col.copy(), X=np.stack([X[p, t_to_xi[round(t, 12)]]
                                        for t, _, _ in rows]),
            innovations=innov[p], G=G[p], Y=Y[p], Z=Z[p], H=H[p],
            S=S[p], strategies=PI[p], mpr=MPR[p], residual=RES[p],
            wealth=Wealth[p],
        ))
    return out


def double_jump_report(samples) -> list:
    """Per path and release time: the position just before the release, the
    one-shot trade, and the position just after, per participating agent.

    A record is flagged when every participating agent moves by more than
    1e-6 both into and out of the one-shot trade.
    """
    out = []
    for sm in samples:
        jump_rows = [r for r, ph in enumerate(sm.phase) if ph == "jump"]
        for r in jump_rows:
            n = sm.stage[r]
            pre = sm.strategies[r - 1, :n, :]
            trade = sm.strategies[r, :n, :]
            post = sm.strategies[r + 1, :n, :]
            first = np.abs(trade - pre).max(axis=1)
            second = np.abs(post - trade).max(axis=1)
            out.append({
                "path_id": sm.path_id, "n": int(n), "t": float(sm.t[r]),
                "pre": pre.copy(), "trade": trade.copy(), "post": post.copy(),
                "flag": bool(np.all(first > 1e-6) and np.all(second > 1e-6)),
            })
    return out


def _value_columns(d: int, J: int):
    def fan(name):
        return [name] if d == 1 else [f"{name}_{i}" for i in range(d)]

    cols = fan("X") + fan("S") + fan("mpr")
    for j in range(J):
        cols += fan(f"pi_{j}")
    return cols + ["residual"]


def export_csv(samples, out_path) -> None:
    """Write the documented long-format CSV, 17 significant digits."""
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        if not samples:
            w.writerow(["path_id", "stage", "phase", "t", "X", "S", "mpr",
                        "residual"])
            return
        d = samples[0].X.shape[1]
        J = samples[0].strategies.shape[1]
        w.writerow(["path_id", "stage", "phase", "t"] + _value_columns(d, J))
        for sm in samples:
            for r in range(len(sm.t)):
                vals = np.concatenate([
                    sm.X[r], sm.S[r], sm.mpr[r], sm.strategies[r].reshape(-1),
                    [sm.residual[r]],
                ])
                w.writerow([sm.path_id, sm.stage[r], sm.phase[r],
                            FMT % sm.t[r]] + [FMT % v for v in vals])
