"""Many-insider refinement lab.

A refinement family places 2^N insiders at a time change tau of the dyadic
rationals, with risk aversions, signal precisions and weights read off
smooth profile functions. As N grows the running precision of the public
signal flow converges to a deterministic matrix curve F_t, and the
precision-weighted running signal converges to a process J_t = X_1 + noise
driven by two shared Brownian drivers (one for the private signal noises,
one for the noise-trader demands). This module builds the refined
scenarios, evaluates the pre-limit step processes and their limits on
common random numbers, computes the information drift of the factor
Brownian motion under the enlarged filtration, and classifies the t -> 1
behavior through the divergence of two scalar integrals.

All convergence studies share drivers across refinement levels: level N
uses the first 2^N unit-time increments of the signal-noise driver and
block sums of one fine grid of noise-demand increments, so errors shrink
pathwise, not only in distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.linalg import expm
from scipy.optimize import brentq

from .errors import DivergentIntegral, Inconclusive, InvalidSpec
from .gaussian import OUParams, ou_cov, ou_mean, ou_prec
from .market import AgentSpec, MarketScenario, SignalSystem

QUAD_TOL = 1e-10
EPS_LADDER = tuple(10.0 ** -k for k in range(2, 9))


@dataclass(frozen=True)
class LimitSpec:
    """Profile functions of a refinement family.

    tau maps the insider index fraction to calendar time; gamma, p and
    omega are the risk-aversion, precision-scale and weight profiles; the
    uninformed agent keeps fixed risk aversion gamma_0 and weight omega_0.
    The single combination that drives every limit is
    lam(t) = p(t) omega(t) / gamma(t).
    """

    tau: object
    tau_dot: object
    gamma: object
    p: object
    omega: object
    gamma_0: float
    omega_0: float
    C_I: np.ndarray
    D_Z: np.ndarray
    N_range: tuple = (4, 6, 8, 10)
    spec_id: str = "limit-spec"

    def __post_init__(self):
        object.__setattr__(self, "C_I", np.atleast_2d(np.asarray(self.C_I, float)))
        object.__setattr__(self, "D_Z", np.atleast_2d(np.asarray(self.D_Z, float)))
        if abs(self.tau(0.0)) > 1e-12 or abs(self.tau(1.0) - 1.0) > 1e-12:
            raise InvalidSpec("tau must map [0, 1] onto [0, 1]")
        grid = np.linspace(0.0, 1.0, 10_000, endpoint=False)
        td = np.array([self.tau_dot(float(u)) for u in grid])
        if np.any(td <= 0.0):
            raise InvalidSpec("tau must be strictly increasing (tau_dot > 0)")
        for name, f in (("gamma", self.gamma), ("p", self.p),
                        ("omega", self.omega)):
            vals = np.array([f(float(u)) for u in grid[:: 100]])
            if np.any(vals <= 0.0):
                raise InvalidSpec(f"{name} must be strictly positive on [0, 1)")
        if not 0.0 < self.omega_0 < 1.0:
            raise InvalidSpec("omega_0 must lie in (0, 1)")
        mass, _ = quad(lambda u: self.omega(self.tau(u)), 0.0, 1.0,
                       epsabs=QUAD_TOL, limit=200)
        if mass >= 1.0 - self.omega_0:
            raise InvalidSpec(
                "insider weight mass must leave room for the first insider: "
                "integral of omega(tau(u)) must be < 1 - omega_0"
            )

    @property
    def d(self) -> int:
        return self.C_I.shape[0]

    def lam(self, t: float) -> float:
        """Risk-tolerance weighted precision p(t) omega(t) / gamma(t)."""
        return self.p(t) * self.omega(t) / self.gamma(t)

    def tau_inv(self, t: float) -> float:
        if t <= 0.0:
            return 0.0
        if t >= 1.0:
            return 1.0
        return brentq(lambda u: self.tau(u) - t, 0.0, 1.0, xtol=1e-14)


def reference_limit_spec(N_range=(4, 6, 8, 10, 12)) -> LimitSpec:
    """Scalar family with identity time change and lam identically one."""
    return LimitSpec(
        tau=lambda u: u, tau_dot=lambda u: 1.0,
        gamma=lambda t: 0.5, p=lambda t: 2.0, omega=lambda t: 0.25,
        gamma_0=1.0, omega_0=0.15, C_I=[[1.0]], D_Z=[[1.0]],
        N_range=tuple(N_range), spec_id="flat-lam",
    )


def power_limit_spec(exponent: float, N_range=(4, 6, 8, 10)) -> LimitSpec:
    """Scalar family with lam(t) = (1 - t)^(-exponent), identity time change."""
    return LimitSpec(
        tau=lambda u: u, tau_dot=lambda u: 1.0,
        gamma=lambda t: 0.9, p=lambda t: 2.0 * (1.0 - t) ** (-exponent),
        omega=lambda t: 0.45, gamma_0=1.0, omega_0=0.1,
        C_I=[[1.0]], D_Z=[[1.0]], N_range=tuple(N_range),
        spec_id=f"power-{exponent:g}",
    )


def dyadic_times(spec: LimitSpec, N: int) -> np.ndarray:
    """Signal times tau((n - 1) / 2^N) for n = 1 .. 2^N."""
    r = (np.arange(2 ** N)) / 2 ** N
    return np.array([spec.tau(float(u)) for u in r])


def build_dyadic_scenario(spec: LimitSpec, N: int, ou: OUParams = None,
                          Pi=None) -> MarketScenario:
    """Market scenario of the N-th refinement level.

    Insider n enters at tau((n - 1) / 2^N) with risk aversion gamma(t_n),
    signal precision p(t_n) C_I and noise-demand precision D_Z divided by
    the forward time gap. Insiders from the second on carry weight
    2^(-N) omega(t_n); the first insider absorbs the rest of the insider
    mass so that total weights sum to one.
    """
    if N < 0:
        raise InvalidSpec("refinement level must be nonnegative")
    d = spec.d
    if ou is None:
        ou = OUParams(np.eye(d), np.zeros(d), np.eye(d))
    if Pi is None:
        Pi = np.ones(d)
    times = dyadic_times(spec, N)
    n_ins = len(times)
    gaps = np.diff(np.append(times, 1.0))
    if np.any(gaps <= 0.0):
        raise InvalidSpec("signal times must be strictly increasing")
    small = [2.0 ** -N * spec.omega(float(t)) for t in times[1:]]
    omega_1 = 1.0 - spec.omega_0 - sum(small)
    if omega_1 <= 0.0:
        raise InvalidSpec("first insider weight is not positive at this level")
    agents = [AgentSpec(0, spec.gamma_0, spec.omega_0, None)]
    for n in range(n_ins):
        t_n = float(times[n])
        agents.append(AgentSpec(
            n + 1,
            gamma=spec.gamma(t_n),
            omega=omega_1 if n == 0 else small[n - 1],
            entry_time=t_n,
            C=spec.p(t_n) * spec.C_I,
            D=spec.D_Z / gaps[n],
        ))
    return MarketScenario(ou, Pi, tuple(float(t) for t in times),
                          tuple(agents))


@dataclass(frozen=True)
class EffectiveProcesses:
    """Step-function views of the running public precision and signal."""

    scenario: MarketScenario
    times: np.ndarray = field(init=False)  # signal times plus terminal 1
    E: np.ndarray = field(init=False)  # (n_ins, d, d) per-signal precisions
    F: np.ndarray = field(init=False)  # (n_ins, d, d) running sums

    def __post_init__(self):
        signals = SignalSystem(self.scenario)
        E = np.stack(signals.E)
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "F", np.cumsum(E, axis=0))
        object.__setattr__(
            self, "times", np.append(np.asarray(self.scenario.times), 1.0)
        )

    def stage_of(self, t: float) -> int:
        """Index n (1-based) with t in [t_n, t_{n+1})."""
        if not 0.0 <= t < 1.0:
            raise InvalidSpec("step views are defined on [0, 1)")
        return int(np.searchsorted(self.times, t, side="right"))

    def F_at(self, t: float) -> np.ndarray:
        return self.F[self.stage_of(t) - 1]

    def J_steps(self, H: np.ndarray) -> np.ndarray:
        """Precision-weighted running signals from per-insider signals.

        H has shape (n_samples, n_ins, d); the result aligns with it.
        """
        weighted = np.cumsum(np.einsum("nij,snj->sni", self.E, H), axis=1)
        return np.einsum("nij,snj->sni", np.linalg.inv(self.F), weighted)

    def J_at(self, t: float, H: np.ndarray) -> np.ndarray:
        return self.J_steps(H)[:, self.stage_of(t) - 1, :]


@dataclass(frozen=True)
class SharedDrivers:
    """Common random numbers for all refinement levels of one study.

    by holds unit-time standard-normal increments of the signal-noise
    driver, one per insider index; xi holds standard-normal increments of
    the noise-demand driver on a fine grid of 2^K equal steps of the index
    fraction. Level N consumes the first 2^N columns of by and blocks of
    2^(K - N) columns of xi, so refining the level refines the same noise
    paths instead of redrawing them.
    """

    by: np.ndarray  # (n_samples, 2^max_level, d)
    xi: np.ndarray  # (n_samples, 2^K, d)
    K: int

    @classmethod
    def draw(cls, spec: LimitSpec, max_level: int, n_samples: int,
             seed: int, K: int = None) -> "SharedDrivers":
        if K is None:
            K = max_level
        if K < max_level:
            raise InvalidSpec("driver grid must be at least as fine as levels")
        rng = np.random.default_rng(seed)
        by = rng.standard_normal((n_samples, 2 ** max_level, spec.d))
        xi = rng.standard_normal((n_samples, 2 ** K, spec.d))
        return cls(by=by, xi=xi, K=K)


def _sqrtm_spd(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(a)
    return v @ np.diag(np.sqrt(np.maximum(w, 0.0))) @ v.T


def sample_signals(spec: LimitSpec, N: int, drivers: SharedDrivers,
                   x1: np.ndarray) -> np.ndarray:
    """Per-insider public signals H_n at level N from the shared drivers.

    Insider n's private noise uses the n-th unit increment of the
    signal-noise driver; the incremental noise-trader demand integrates
    sqrt(tau_dot) against the fine-grid demand driver over the forward
    index-fraction interval. Returns shape (n_samples, 2^N, d).
    """
    if 2 ** N > drivers.by.shape[1]:
        raise InvalidSpec("drivers were drawn for a lower maximum level")
    n_samples = drivers.by.shape[0]
    d = spec.d
    times = dyadic_times(spec, N)
    x1 = np.broadcast_to(np.atleast_2d(np.asarray(x1, float)), (n_samples, d))
    block = 2 ** (drivers.K - N)
    step = 2.0 ** -drivers.K
    mids = (np.arange(2 ** drivers.K) + 0.5) * step
    w = np.sqrt(np.array([spec.tau_dot(float(u)) for u in mids]) * step)
    dz_half_inv = np.linalg.inv(_sqrtm_spd(spec.D_Z))
    H = np.empty((n_samples, 2 ** N, d))
    ci_half_inv = np.linalg.inv(_sqrtm_spd(spec.C_I))
    for n in range(2 ** N):
        t_n = float(times[n])
        Y = drivers.by[:, n, :] @ (ci_half_inv / math.sqrt(spec.p(t_n))).T
        sl = slice(n * block, (n + 1) * block)
        Z = (drivers.xi[:, sl, :] * w[sl, None]).sum(axis=1) @ dz_half_inv.T
        C_n = spec.p(t_n) * spec.C_I
        alpha_n = _level_alpha(spec, N, n, times)
        H[:, n, :] = x1 + Y + np.linalg.solve(C_n, Z.T).T / alpha_n
    return H


def _level_alpha(spec: LimitSpec, N: int, n: int, times) -> float:
    t_n = float(times[n])
    if n == 0:
        small = sum(2.0 ** -N * spec.omega(float(t)) for t in times[1:])
        omega_n = 1.0 - spec.omega_0 - small
    else:
        omega_n = 2.0 ** -N * spec.omega(t_n)
    return omega_n / spec.gamma(t_n)


def precision_integral(spec: LimitSpec, r: float) -> float:
    """integral of lam(tau(u))^2 / tau_dot(u) over [0, r] in index fraction."""
    if r <= 0.0:
        return 0.0
    val, _ = quad(lambda u: spec.lam(spec.tau(u)) ** 2 / spec.tau_dot(u),
                  0.0, r, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=400)
    return val


def limit_F(spec: LimitSpec, t: float) -> np.ndarray:
    """Limiting public precision curve at calendar time t < 1."""
    if not 0.0 <= t < 1.0:
        raise InvalidSpec("the precision curve is defined on [0, 1)")
    integral = precision_integral(spec, spec.tau_inv(t))
    return (spec.p(0.0) * spec.C_I
            + integral * spec.C_I @ spec.D_Z @ spec.C_I)


def limit_J(spec: LimitSpec, t: float, drivers: SharedDrivers,
            x1: np.ndarray) -> np.ndarray:
    """Limiting running signal at t from the same shared drivers.

    J_t = X_1 plus F_t^{-1} applied to the surviving first-insider noise
    and the accumulated noise-demand integral; the stochastic integral is
    discretized on the demand driver's grid.
    """
    n_samples = drivers.by.shape[0]
    d = spec.d
    x1 = np.broadcast_to(np.atleast_2d(np.asarray(x1, float)), (n_samples, d))
    step = 2.0 ** -drivers.K
    mids = (np.arange(2 ** drivers.K) + 0.5) * step
    r = spec.tau_inv(t)
    keep = mids < r
    lam_w = np.zeros(len(mids))
    td = np.array([spec.tau_dot(float(u)) for u in mids[keep]])
    lam_w[keep] = (
        np.array([spec.lam(spec.tau(float(u))) for u in mids[keep]])
        / np.sqrt(td) * math.sqrt(step)
    )
    core = spec.C_I @ _sqrtm_spd(spec.D_Z)
    acc = (drivers.xi * lam_w[None, :, None]).sum(axis=1) @ core.T
    first = drivers.by[:, 0, :] @ (math.sqrt(spec.p(0.0))
                                   * _sqrtm_spd(spec.C_I)).T
    return x1 + np.linalg.solve(limit_F(spec, t), (first + acc).T).T


def information_drift(ou: OUParams, t: float, x, F: np.ndarray,
                      J) -> np.ndarray:
    """Drift that compensates the factor Brownian motion under the
    signal-enlarged filtration:

        sigma' e^{-(1-t) kappa'} P(1-t) (P(1-t) + F)^{-1} F (J - mu(x, 1-t))

    x and J may be single vectors or (n_samples, d) stacks.
    """
    if not 0.0 <= t < 1.0:
        raise InvalidSpec("information drift is defined on [0, 1)")
    tau = 1.0 - t
    P = ou_prec(ou, tau)
    A = P @ np.linalg.solve(P + F, F)
    M = ou.sigma.T @ expm(-tau * ou.kappa).T @ A
    x = np.asarray(x, float)
    J = np.asarray(J, float)
    if x.ndim == 1 and J.ndim == 1:
        return M @ (J - ou_mean(ou, x, tau))
    x2 = np.atleast_2d(x)
    J2 = np.atleast_2d(J)
    mu = ou.theta + (x2 - ou.theta) @ expm(-tau * ou.kappa).T
    return (J2 - mu) @ M.T


def expected_log_density_shift(ou: OUParams, t: float, x0,
                               F: np.ndarray) -> float:
    """Expectation of the running log density tilt of the terminal factor
    under precision F, evaluated in closed form; only the log-determinant
    term carries the time dependence."""
    d = ou.d
    Sigma_tail = ou_cov(ou, 1.0 - t)
    mu1 = ou_mean(ou, x0, 1.0)
    sign, logdet = np.linalg.slogdet(np.eye(d) + Sigma_tail @ F)
    return float(
        -0.5 * sign * logdet
        + 0.5 * mu1 @ F @ mu1
        + 0.5 * np.trace(F @ ou_cov(ou, 1.0))
    )


def _tail_ladders(spec: LimitSpec):
    """Partial integrals over [0, 1 - eps] of the running precision
    integrand and of the drift-energy integrand, at the eps ladder.

    Both cumulative integrals are advanced together as one initial value
    problem in the log-distance variable s = -log(1 - t), where endpoint
    blowup of the integrands becomes at most exponential growth and one
    stiff-free solve covers the whole ladder.
    """
    from scipy.integrate import solve_ivp

    def rhs(s, y):
        t = 1.0 - math.exp(-s)
        w = math.exp(-s)
        g = spec.lam(spec.tau(t)) ** 2 / spec.tau_dot(t) * w
        i_t = y[0]
        q = spec.tau_dot(t) * i_t / (1.0 + (1.0 - spec.tau(t)) * i_t) * w
        return [g, q]

    s_pts = [-math.log(eps) for eps in EPS_LADDER]
    sol = solve_ivp(rhs, (0.0, s_pts[-1]), [0.0, 0.0], rtol=1e-10,
                    atol=1e-13, dense_output=True, max_step=0.25)
    vals = np.stack([sol.sol(s) for s in s_pts])
    return list(vals[:, 0]), list(vals[:, 1])


def _classify_ladder(vals: list, what: str):
    """Divergence decision from the per-decade increments.

    A convergent tail shows geometrically decaying increments (a power
    tail of order b > 0 decays at ratio 10^-b per decade of distance to
    the endpoint); a divergent tail shows increments that do not decay,
    the slowest being the logarithmic case with ratio one. The rule reads
    the last three increment ratios: all >= 0.9 means divergent, all
    <= 0.75 means convergent (with a geometric tail correction), anything
    else is reported as inconclusive rather than silently classified.
    """
    d = np.diff(vals)
    floor = 1e-13 * max(1.0, abs(vals[-1]))
    if np.all(np.abs(d[-3:]) < floor):
        return float(vals[-1])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = d[1:] / d[:-1]
    last = ratios[-3:]
    if np.all(last >= 0.9):
        return math.inf
    if np.all(np.abs(last) <= 0.75):
        rho = float(np.clip(last[-1], 0.0, 0.75))
        return float(vals[-1] + d[-1] * rho / (1.0 - rho))
    raise Inconclusive(
        f"{what}: increment ratios {np.round(last, 3).tolist()} match "
        "neither a convergent nor a divergent tail"
    )


def q_integral(spec: LimitSpec) -> float:
    """Scalar deciding whether the information drift has finite total
    energy up to the horizon; math.inf when the integral diverges."""
    grid = np.linspace(0.0, 1.0, 41, endpoint=False)
    if all(spec.lam(spec.tau(float(u))) == 0.0 for u in grid):
        return 0.0
    _, q_vals = _tail_ladders(spec)
    return _classify_ladder(q_vals, "drift energy integral")


@dataclass(frozen=True)
class TerminalClassification:
    """Joint t -> 1 behavior: what the limiting signal reveals at the
    horizon, and whether the information drift energy stays finite."""

    terminal_signal: str  # "terminal-factor" or "noisy"
    drift_energy: str  # "finite" or "infinite"
    q_value: float


def classify_t1(spec: LimitSpec) -> TerminalClassification:
    i_vals, q_vals = _tail_ladders(spec)
    total = _classify_ladder(i_vals, "precision integral")
    q = _classify_ladder(q_vals, "drift energy integral")
    return TerminalClassification(
        terminal_signal="terminal-factor" if math.isinf(total) else "noisy",
        drift_energy="infinite" if math.isinf(q) else "finite",
        q_value=q,
    )


def sup_error_rows(spec: LimitSpec, t_grid=None) -> list:
    """Deterministic sup-error of the level-N precision step curve against
    its limit, as study rows (spec_id, N, t, metric, value)."""
    if t_grid is None:
        t_grid = np.linspace(0.0, 0.9, 91)
    limits = [limit_F(spec, float(t)) for t in t_grid]
    rows = []
    for N in spec.N_range:
        eff = EffectiveProcesses(build_dyadic_scenario(spec, N))
        err = max(
            np.abs(eff.F_at(float(t)) - limits[i]).max()
            for i, t in enumerate(t_grid)
        )
        rows.append((spec.spec_id, N, float(t_grid[-1]), "precision_sup_error",
                     float(err)))
    return rows


def signal_error_rows(spec: LimitSpec, t: float = 0.5, n_samples: int = 10_000,
                      seed: int = 0) -> list:
    """Mean squared distance between the level-N running signal and its
    limit at time t, on common random numbers."""
    drivers = SharedDrivers.draw(spec, max(spec.N_range), n_samples, seed)
    x1 = np.zeros(spec.d)
    J_lim = limit_J(spec, t, drivers, x1)
    rows = []
    for N in spec.N_range:
        eff = EffectiveProcesses(build_dyadic_scenario(spec, N))
        H = sample_signals(spec, N, drivers, x1)
        J_N = eff.J_at(t, H)
        err = float(np.mean(np.sum((J_N - J_lim) ** 2, axis=1)))
        rows.append((spec.spec_id, N, t, "signal_mse", err))
    return rows


def drift_energy_rows(spec: LimitSpec, t: float = 0.9, ou: OUParams = None,
                      n_samples: int = 400, grid: int = 256,
                      seed: int = 1) -> list:
    """Monte Carlo estimate of the expected integrated squared information
    drift up to t, per refinement level, on common random numbers."""
    if ou is None:
        ou = OUParams(np.eye(spec.d), np.zeros(spec.d), np.eye(spec.d))
    drivers = SharedDrivers.draw(spec, max(spec.N_range), n_samples, seed)
    rng = np.random.default_rng(seed + 1)
    ts = np.linspace(0.0, t, grid + 1)
    d = spec.d
    X = np.zeros((n_samples, grid + 1, d))
    x = np.zeros((n_samples, d))
    for i in range(grid):
        dt = ts[i + 1] - ts[i]
        mean = ou.theta + (x - ou.theta) @ expm(-dt * ou.kappa).T
        x = mean + rng.standard_normal((n_samples, d)) @ np.linalg.cholesky(
            ou_cov(ou, dt)).T
        X[:, i + 1] = x
    # terminal value consistent with the path up to t
    tail = 1.0 - t
    x1 = (ou.theta + (x - ou.theta) @ expm(-tail * ou.kappa).T
          + rng.standard_normal((n_samples, d)) @ np.linalg.cholesky(
              ou_cov(ou, tail)).T)
    rows = []
    for N in spec.N_range:
        eff = EffectiveProcesses(build_dyadic_scenario(spec, N))
        H = sample_signals(spec, N, drivers, x1)
        J_all = eff.J_steps(H)
        energy = np.zeros(n_samples)
        for i in range(grid):
            u = float(ts[i])
            n_stage = eff.stage_of(u)
            theta = information_drift(
                ou, u, X[:, i, :], eff.F[n_stage - 1],
                J_all[:, n_stage - 1, :],
            )
            energy += np.sum(theta ** 2, axis=1) * (ts[i + 1] - ts[i])
        rows.append((spec.spec_id, N, t, "drift_energy",
                     float(energy.mean())))
    return rows


def limit_study(spec: LimitSpec, n_samples: int = 10_000,
                seed: int = 0) -> list:
    """Full study report: rows (spec_id, N, t, metric, value)."""
    rows = []
    rows += sup_error_rows(spec)
    rows += signal_error_rows(spec, n_samples=n_samples, seed=seed)
    rows += drift_energy_rows(spec, seed=seed + 1)
    return rows


def export_study_csv(rows, out_path) -> None:
    """Write study rows with 17 significant digits."""
    import csv

    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["spec_id", "N", "t", "metric", "value"])
        for spec_id, N, t, metric, value in rows:
            w.writerow([spec_id, N, "%.17g" % t, metric, "%.17g" % value])
