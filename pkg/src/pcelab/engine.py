"""Backward-induction construction of the partial communication equilibrium.

Stages are numbered by the count of signals already public: stage n covers
the diffusive interval [t_n, t_{n+1}) (stage N runs to the horizon 1) with
agents 0..n trading, and between stage n-1 and stage n sits a one-shot trade
at t_n where the new public signal h_n is priced before its release.

Every price map is affine and every effective endowment is linear-quadratic
in the stacked coordinate (x, h_1, ..., h_n).  Rather than expanding that
algebra by hand, each stage is solved pointwise at probe coordinates and the
affine/quadratic coefficients are recovered exactly by fitting, with an
extra probe validating the assumed structure.

The recursion:

* stage N is a diffusive problem with terminal payoff X_1, curvature-only
  endowments (the public/private likelihood precisions), and a supply
  adjusted for all signal-position translations;
* the endowments handed back across the one-shot trade at t_n are the
  certainty equivalents of the stage-n problem, restricted to the h_n block
  and priced on the common noise law N(0, E_n^{-1});
* each interior stage is a diffusive problem whose terminal payoff is the
  pre-release price of the next signal.

Total positions decompose into a static translation (carrying the private
signal and, in the last stage, the public signal positions) plus the
diffusive hedge of the stage problem; noise-trader demand completes market
clearing exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .common_eq import (
    ContinuousProblem,
    SinglePeriodProblem,
    solve_continuous,
    solve_single_period,
)
from .errors import AssumptionViolated, InvalidSpec
from .gaussian import (
    AffineMap,
    LQForm,
    StackedIndex,
    affine_fit,
    lq_fit,
    lq_restrict,
    ou_cov,
    ou_mean,
)
from .market import MarketScenario, SignalSystem, validate_scenario


@dataclass(frozen=True)
class JumpSolution:
    """One-shot trade at t_n, before signal n is released."""

    n: int
    t: float
    price_map: AffineMap  # (x, hbar_{n-1}) -> pre-release price
    strategy_maps: tuple  # per agent 0..n-1: public part of the jump trade
    pre_endowments: tuple  # per agent 0..n-1: LQForm over (x, hbar_{n-1})


class ContStage:
    """One diffusive trading interval with everything parameterized by the
    realized public signals hbar_n."""

    def __init__(self, scenario, signals, n, a, b, M_b, V_b_map, endow_forms, Psi_map,
                 is_last):
        self.scenario = scenario
        self.signals = signals
        self.n = n
        self.a = a
        self.b = b
        self.M_b = np.atleast_2d(np.asarray(M_b, float))
        self.V_b_map = V_b_map          # AffineMap: hbar_n -> d-vector
        self.endow_forms = tuple(endow_forms)  # LQForm over (x, hbar_n), agents 0..n
        self.Psi_map = Psi_map          # AffineMap: hbar_n -> d-vector
        self.is_last = is_last
        self.index = StackedIndex(scenario.d, n)
        d = scenario.d
        # the aggregate curvature is signal-independent; precompute it and the
        # affine map hbar -> Vbar once, by fitting over a cheap probe solve
        probe = solve_continuous(self.problem_at(np.zeros(d * n)))
        self.Mbar = probe.Mbar
        self.gamma = probe.gamma
        self.Vbar_map = affine_fit(
            lambda h: solve_continuous(self.problem_at(h)).Vbar, d * n
        )
        # per-agent linear endowment coefficient as a function of the signals
        self._Vj_maps = tuple(
            AffineMap(f.A[self.index.x, d:], f.b[self.index.x])
            for f in self.endow_forms
        )
        self._kern_cache = {}
        self._sol_cache = {}

    @property
    def d(self) -> int:
        return self.scenario.d

    def participants(self):
        return range(self.n + 1)

    def problem_at(self, hbar) -> ContinuousProblem:
        s = self.scenario
        z0 = np.concatenate([np.zeros(self.d), np.asarray(hbar, float).reshape(-1)])
        endows = tuple(
            lq_restrict(f, self.index.x, z0) for f in self.endow_forms
        )
        agents = [s.agents[j] for j in self.participants()]
        return ContinuousProblem(
            a=self.a, b=self.b, ou=s.ou,
            M_b=self.M_b, V_b=self.V_b_map(hbar),
            gammas=tuple(a.gamma for a in agents),
            omegas=tuple(a.omega for a in agents),
            endowments=endows,
            Psi=self.Psi_map(hbar),
        )

    def solution_at(self, hbar):
        key = np.asarray(hbar, float).reshape(-1).tobytes()
        if key not in self._sol_cache:
            self._sol_cache[key] = solve_continuous(self.problem_at(hbar))
        return self._sol_cache[key]

    # -- vectorization-friendly coefficient views ---------------------------

    def _kernels(self, t: float):
        """Time-t matrices shared by price/strategy/mpr evaluations."""
        key = float(t)
        if key not in self._kern_cache:
            ou = self.scenario.ou
            d = self.d
            tau = self.b - t
            S = ou_cov(ou, tau)
            E = expm(-tau * ou.kappa)
            G = np.linalg.inv(np.eye(d) + S @ self.Mbar)
            self._kern_cache[key] = (S, E, G)
        return self._kern_cache[key]

    def price_coeffs(self, t: float):
        """S(t, x, hbar) = Mx x + Mh hbar + v0, exactly."""
        ou = self.scenario.ou
        S, E, G = self._kernels(t)
        Mx = self.M_b @ G @ E
        # mu(x,tau) = theta + E(x - theta); Vbar(h) = Vbar0 + Vbar1 h
        core_h = self.M_b @ G @ S @ self.Vbar_map.A
        Mh = self.V_b_map.A + core_h
        v0 = (
            self.V_b_map.b
            + self.M_b @ G @ (ou.theta - E @ ou.theta)
            + self.M_b @ G @ S @ self.Vbar_map.b
        )
        return Mx, Mh, v0

    def price(self, t: float, x, hbar) -> np.ndarray:
        Mx, Mh, v0 = self.price_coeffs(t)
        return Mx @ np.atleast_1d(np.asarray(x, float)) + Mh @ np.asarray(
            hbar, float
        ).reshape(-1) + v0

    def hedge(self, j: int, t: float, x, hbar) -> np.ndarray:
        """Diffusive part of agent j's position at (t, x) given signals."""
        return self.solution_at(hbar).hedging_strategy(j, t, x)

    def hedge_coeffs(self, j: int, t: float):
        """hedge_j(t, x, hbar) = Px x + Ph hbar + p0, for vectorized paths."""
        ou = self.scenario.ou
        gamma_j = self.scenario.agents[j].gamma
        S, E, G = self._kernels(t)
        F = self.endow_forms[j]
        A_j = -(F.A[self.index.x, self.index.x] - self.Mbar) / gamma_j
        Vj = self._Vj_maps[j]
        W = np.linalg.solve((self.M_b @ G @ E).T, (G @ E).T)
        mu0 = ou.theta - E @ ou.theta
        Px = W @ A_j @ G @ E
        Ph = W @ (A_j @ G @ S @ self.Vbar_map.A - (self.Vbar_map.A + Vj.A) / gamma_j)
        p0 = W @ (A_j @ G @ (mu0 + S @ self.Vbar_map.b)
                  - (self.Vbar_map.b + Vj.b) / gamma_j)
        return Px, Ph, p0

    def mpr(self, t: float, x, hbar) -> np.ndarray:
        ou = self.scenario.ou
        S, E, G = self._kernels(t)
        mu = ou.theta + E @ (np.atleast_1d(np.asarray(x, float)) - ou.theta)
        Vbar = self.Vbar_map(np.asarray(hbar, float).reshape(-1))
        core = np.linalg.solve(np.eye(self.d) + self.Mbar @ S, Vbar - self.Mbar @ mu)
        return -ou.sigma.T @ E.T @ core

    def translation(self, j: int, hbar, g_j=None) -> np.ndarray:
        """Static component of agent j's total position over this stage."""
        s = self.scenario
        sig = self.signals
        h = np.asarray(hbar, float).reshape(-1)
        d = self.d
        out = np.zeros(d)
        if self.is_last:
            for m in range(1, self.n + 1):
                if m != j:
                    out += sig.E[m - 1] @ h[(m - 1) * d:m * d]
        if j >= 1:
            out += s.insider(j).C @ np.atleast_1d(np.asarray(g_j, float))
        return out / s.agents[j].gamma

    def total_strategy(self, j: int, t: float, x, hbar, g_j=None) -> np.ndarray:
        return self.translation(j, hbar, g_j) + self.hedge(j, t, x, hbar)


@dataclass(frozen=True)
class PCESolution:
    scenario: MarketScenario
    signals: SignalSystem
    stages: tuple  # ContStage for n = 1..N
    jumps: tuple  # JumpSolution for n = 2..N

    def stage(self, n: int) -> ContStage:
        return self.stages[n - 1]

    def jump(self, n: int) -> JumpSolution:
        return self.jumps[n - 2]

    @property
    def N(self) -> int:
        return len(self.stages)


def _last_stage(scenario: MarketScenario, signals: SignalSystem) -> ContStage:
    d, N = scenario.d, scenario.N
    idx = StackedIndex(d, N)
    endows = []
    for j in range(N + 1):
        A = np.zeros((idx.dim, idx.dim))
        if j == 0:
            A[idx.x, idx.x] = signals.cumulative_precision(N)
        else:
            A[idx.x, idx.x] = scenario.insider(j).C + (
                signals.cumulative_precision(N) - signals.E[j - 1]
            )
        endows.append(LQForm(A, np.zeros(idx.dim), 0.0))
    gamma_bar = signals.gamma_bar(N)
    PsiA = np.zeros((d, d * N))
    for m in range(1, N + 1):
        E_m = signals.E[m - 1]
        C_m = scenario.insider(m).C
        alpha_m = scenario.insider(m).alpha
        PsiA[:, (m - 1) * d:m * d] = -(
            E_m / gamma_bar + alpha_m * (C_m - E_m)
        )
    return ContStage(
        scenario, signals, N, scenario.times[N - 1], 1.0,
        M_b=np.eye(d),
        V_b_map=AffineMap(np.zeros((d, d * N)), np.zeros(d)),
        endow_forms=endows,
        Psi_map=AffineMap(PsiA, scenario.Pi.copy()),
        is_last=True,
    )


def _supply_map(scenario, signals, n) -> AffineMap:
    """Pi minus the noise-trader-absorbed insider translations for stages
    with n public signals."""
    d = scenario.d
    A = np.zeros((d, d * n))
    for k in range(1, n + 1):
        A[:, (k - 1) * d:k * d] = -scenario.insider(k).alpha * scenario.insider(k).C
    return AffineMap(A, scenario.Pi.copy())


def stage_handback_forms(stage: ContStage) -> list[LQForm]:
    """Effective endowments at the stage's opening time, as stacked LQ forms
    over (x, hbar_n), for the agents that trade before this stage opens.

    For the last stage the translated public-signal positions add an exact
    signal-times-price cross term; interior stages hand back the certainty
    equivalent alone.
    """
    sig = stage.signals
    d, n = stage.d, stage.n
    idx = stage.index
    t_open = stage.a
    Mx, Mh, v0 = stage.price_coeffs(t_open)

    forms = []
    for j in range(n):
        def f(z, j=j):
            x, h = idx.split(z)
            price = Mx @ x + Mh @ h + v0
            val = stage.solution_at(h).gamma_ce(j, x)
            if stage.is_last:
                w = np.zeros(d)
                for m in range(1, n + 1):
                    if m != j:
                        w += sig.E[m - 1] @ h[(m - 1) * d:m * d]
                val -= w @ price
            return val

        forms.append(lq_fit(f, idx.dim))
    return forms


def jump_problem(scenario, signals, n, next_stage: ContStage, endow_forms, z):
    """One-shot problem for the release of signal n, at a fixed stacked
    coordinate z = (x, hbar_{n-1}).

    The payoff is the post-release stage price as a function of the new
    signal block, the endowments are the hand-back forms restricted to that
    block, and the shared belief is the centered release-noise law.
    """
    d = scenario.d
    t_n = scenario.times[n - 1]
    idx_next = next_stage.index
    Mx, Mh, v0 = next_stage.price_coeffs(t_n)
    z = np.asarray(z, float).reshape(-1)
    x = z[:d]
    h_prev = z[d:]
    z_full = np.concatenate([x, h_prev, np.zeros(d)])
    endows = tuple(lq_restrict(f, idx_next.h(n), z_full) for f in endow_forms)
    agents = [scenario.agents[j] for j in range(n)]
    return SinglePeriodProblem(
        gammas=tuple(a.gamma for a in agents),
        omegas=tuple(a.omega for a in agents),
        endowments=endows,
        M=Mh[:, (n - 1) * d:n * d],
        V=Mx @ x + Mh[:, : (n - 1) * d] @ h_prev + v0,
        mu_H=np.zeros(d),
        Sigma_H=np.linalg.inv(signals.E[n - 1]),
        Psi=_supply_map(scenario, signals, n - 1)(h_prev),
    )


def _solve_jump(scenario, signals, n, next_stage: ContStage,
                endow_forms) -> JumpSolution:
    """Price the release of signal n for the agents 0..n-1, probing the
    affine/quadratic structure over (x, hbar_{n-1}) and fitting it exactly."""
    d = scenario.d
    t_n = scenario.times[n - 1]
    zdim = d * n  # (x, hbar_{n-1})

    def problem(z):
        return jump_problem(scenario, signals, n, next_stage, endow_forms, z)

    price_map = affine_fit(lambda z: solve_single_period(problem(z)).price, zdim)
    strategy_maps = tuple(
        affine_fit(lambda z, j=j: solve_single_period(problem(z)).strategies[j], zdim)
        for j in range(n)
    )
    pre_endowments = tuple(
        lq_fit(lambda z, j=j: solve_single_period(problem(z)).gamma_ce[j], zdim)
        for j in range(n)
    )
    return JumpSolution(n, t_n, price_map, strategy_maps, pre_endowments)


def _interior_stage(scenario, signals, n, jump: JumpSolution) -> ContStage:
    """Diffusive stage n on [t_n, t_{n+1}] whose terminal value is the
    pre-release price of signal n+1."""
    d = scenario.d
    a = scenario.times[n - 1]
    b = scenario.times[n]
    M_b = jump.price_map.A[:, :d]
    V_b_map = AffineMap(jump.price_map.A[:, d:], jump.price_map.b)
    idx = StackedIndex(d, n)
    endows = []
    for j in range(n + 1):
        q = jump.pre_endowments[j]
        # same stacked layout (x, hbar_n): embed directly
        endows.append(LQForm(q.A, q.b, q.c))
    return ContStage(
        scenario, signals, n, a, b, M_b, V_b_map, endows,
        _supply_map(scenario, signals, n), is_last=False,
    )


def solve_pce(scenario: MarketScenario) -> PCESolution:
    """Run the full backward recursion for a validated scenario."""
    problems = validate_scenario(scenario)
    if problems:
        raise InvalidSpec("; ".join(problems))
    signals = SignalSystem(scenario)
    N = scenario.N
    stages = [None] * N
    jumps = []
    stage = _last_stage(scenario, signals)
    stages[N - 1] = stage
    endow_forms = stage_handback_forms(stage)
    for n in range(N, 1, -1):
        try:
            jump = _solve_jump(scenario, signals, n, stages[n - 1], endow_forms)
        except AssumptionViolated as exc:
            raise AssumptionViolated(f"jump stage {n}: {exc}") from exc
        jumps.append(jump)
        stage = _interior_stage(scenario, signals, n - 1, jump)
        stages[n - 2] = stage
        if n > 2:
            endow_forms = stage_handback_forms(stage)
    return PCESolution(scenario, signals, tuple(stages), tuple(reversed(jumps)))


def coefficient_rows(sol: PCESolution, grid: int = 50):
    """Flatten the per-stage price coefficients to rows
    (stage, t, block, row, col, value) for CSV export."""
    rows = []
    d = sol.scenario.d
    for n in range(1, sol.N + 1):
        st = sol.stage(n)
        for t in np.linspace(st.a, st.b, grid):
            Mx, Mh, v0 = st.price_coeffs(float(t))
            for i in range(d):
                for j in range(d):
                    rows.append((n, float(t), "Mx", i, j, Mx[i, j]))
                for j in range(Mh.shape[1]):
                    rows.append((n, float(t), "Mh", i, j, Mh[i, j]))
                rows.append((n, float(t), "v0", i, 0, v0[i]))
    return rows
