"""Market scenario description: agents, signal times, precisions, supply.

A scenario lists one uninformed agent (id 0) and N insiders (ids 1..N), each
insider entering at a time t_n with a private signal about the terminal factor
value and a block of noise traders.  The derived quantity of interest is the
effective precision E_n of the public version of each signal, which is what
the equilibrium recursion actually consumes.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSpec
from .gaussian import OUParams, is_spd, symmetrize


@dataclass(frozen=True)
class AgentSpec:
    """One market participant.  Insiders carry signal data, agent 0 does not."""

    id: int
    gamma: float
    omega: float
    entry_time: float | None = None
    C: np.ndarray | None = None
    D: np.ndarray | None = None

    def __post_init__(self):
        if self.C is not None:
            object.__setattr__(self, "C", symmetrize(np.atleast_2d(np.asarray(self.C, float))))
        if self.D is not None:
            object.__setattr__(self, "D", symmetrize(np.atleast_2d(np.asarray(self.D, float))))

    @property
    def alpha(self) -> float:
        """Weighted risk tolerance omega / gamma, always recomputed."""
        return self.omega / self.gamma


@dataclass(frozen=True)
class MarketScenario:
    ou: OUParams
    Pi: np.ndarray
    times: tuple
    agents: tuple

    def __post_init__(self):
        object.__setattr__(self, "Pi", np.atleast_1d(np.asarray(self.Pi, float)))
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        object.__setattr__(self, "agents", tuple(self.agents))

    @property
    def d(self) -> int:
        return self.ou.d

    @property
    def N(self) -> int:
        return len(self.agents) - 1

    @property
    def x0(self) -> np.ndarray:
        return getattr(self, "_x0", np.zeros(self.d))

    def with_x0(self, x0) -> "MarketScenario":
        s = MarketScenario(self.ou, self.Pi, self.times, self.agents)
        object.__setattr__(s, "_x0", np.atleast_1d(np.asarray(x0, float)))
        return s

    def insider(self, n: int) -> AgentSpec:
        """Insider n = 1..N."""
        return self.agents[n]


def effective_precision(C, D, alpha: float) -> np.ndarray:
    """Precision E of the public signal H = X_1 + noise with covariance
    C^{-1} + alpha^{-2} C^{-1} D^{-1} C^{-1}."""
    C = np.atleast_2d(np.asarray(C, float))
    D = np.atleast_2d(np.asarray(D, float))
    Cinv = np.linalg.inv(C)
    cov = Cinv + (1.0 / alpha**2) * Cinv @ np.linalg.inv(D) @ Cinv
    return symmetrize(np.linalg.inv(cov))


def market_signal(G, Z, C, alpha: float) -> np.ndarray:
    """Public signal H = G + (1/alpha) C^{-1} Z."""
    G = np.atleast_1d(np.asarray(G, float))
    Z = np.atleast_1d(np.asarray(Z, float))
    C = np.atleast_2d(np.asarray(C, float))
    return G + np.linalg.solve(C, Z) / alpha


@dataclass(frozen=True)
class SignalSystem:
    """Per-insider effective precisions and cumulative risk tolerances."""

    scenario: MarketScenario
    E: tuple = field(init=False)

    def __post_init__(self):
        s = self.scenario
        object.__setattr__(
            self,
            "E",
            tuple(
                effective_precision(a.C, a.D, a.alpha) for a in s.agents[1:]
            ),
        )

    def cumulative_precision(self, n: int) -> np.ndarray:
        """Sum of E_1..E_n (zero matrix for n = 0)."""
        total = np.zeros((self.scenario.d, self.scenario.d))
        for m in range(n):
            total = total + self.E[m]
        return total

    def gamma_bar(self, n: int) -> float:
        """Representative risk aversion of agents 0..n: inverse sum of alphas."""
        return 1.0 / sum(a.alpha for a in self.scenario.agents[: n + 1])


def validate_scenario(s: MarketScenario) -> list[str]:
    """Check all scenario invariants; returns human-readable violations."""
    out = []
    d = s.d
    if len(s.times) != s.N:
        out.append("times: need one entry time per insider")
        return out
    if s.N < 1:
        out.append("agents: at least one insider required")
        return out
    if s.times and s.times[0] != 0.0:
        out.append("times: first entry time must be 0")
    for a, b in zip(s.times, s.times[1:]):
        if not a < b:
            out.append("times: entry times must be strictly increasing")
            break
    if s.times and not s.times[-1] < 1.0:
        out.append("times: last entry time must be before 1")
    wsum = sum(a.omega for a in s.agents)
    if abs(wsum - 1.0) > 1e-12:
        out.append(f"weights: agent weights sum to {wsum:.6g}, expected 1")
    for a in s.agents:
        if a.gamma <= 0 or a.omega <= 0:
            out.append(f"agent {a.id}: gamma and omega must be positive")
    for n, a in enumerate(s.agents[1:], start=1):
        if a.C is None or a.D is None:
            out.append(f"agent {n}: insider needs C and D precision matrices")
            continue
        if a.C.shape != (d, d) or a.D.shape != (d, d):
            out.append(f"agent {n}: C and D must be {d}x{d}")
            continue
        if not is_spd(a.C):
            out.append(f"agent {n}: C is not positive definite")
        if not is_spd(a.D):
            out.append(f"agent {n}: D is not positive definite")
    if s.Pi.shape != (d,):
        out.append(f"supply: Pi must be a {d}-vector")
    return out


def two_insider_reference() -> MarketScenario:
    """The standard two-insider benchmark: scalar OU with kappa = 1, unit
    vol, zero mean, three equal-weight agents with risk aversion 3, signal
    times 0 and 1/2, unit supply."""
    ou = OUParams(np.array([[1.0]]), np.array([0.0]), np.array([[1.0]]))
    agents = (
        AgentSpec(0, gamma=3.0, omega=1 / 3),
        AgentSpec(1, gamma=3.0, omega=1 / 3, entry_time=0.0,
                  C=np.array([[1.0]]), D=np.array([[1.0]])),
        AgentSpec(2, gamma=3.0, omega=1 / 3, entry_time=0.5,
                  C=np.array([[1.0]]), D=np.array([[2.0]])),
    )
    return MarketScenario(ou=ou, Pi=np.array([1.0]), times=(0.0, 0.5), agents=agents)


def _parse_matrix(text: str) -> np.ndarray:
    rows = [r for r in text.strip().split(";") if r.strip()]
    try:
        return np.array([[float(v) for v in r.split(",")] for r in rows])
    except ValueError as exc:
        raise InvalidSpec(f"malformed matrix {text!r}: {exc}") from exc


def _parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.strip().split(",")])
    except ValueError as exc:
        raise InvalidSpec(f"malformed vector {text!r}: {exc}") from exc


def load_scenario(path) -> MarketScenario:
    """Read a scenario from an ini-style config file.

    Sections: [ou] kappa, theta, sigma, optional x0; [market] Pi, times;
    [agent.k] gamma, omega and, for k >= 1, C and D.  Matrices are row-major
    with ';' between rows and ',' between entries.
    """
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise InvalidSpec(f"cannot read scenario file {path}")
    try:
        ou = OUParams(
            _parse_matrix(cp["ou"]["kappa"]),
            _parse_vector(cp["ou"]["theta"]),
            _parse_matrix(cp["ou"]["sigma"]),
        )
        Pi = _parse_vector(cp["market"]["Pi"])
        times = tuple(float(t) for t in cp["market"]["times"].split(","))
        agents = []
        k = 0
        while cp.has_section(f"agent.{k}"):
            sec = cp[f"agent.{k}"]
            if k == 0:
                agents.append(AgentSpec(0, float(sec["gamma"]), float(sec["omega"])))
            else:
                agents.append(
                    AgentSpec(
                        k,
                        float(sec["gamma"]),
                        float(sec["omega"]),
                        entry_time=times[k - 1] if k - 1 < len(times) else None,
                        C=_parse_matrix(sec["C"]),
                        D=_parse_matrix(sec["D"]),
                    )
                )
            k += 1
        if k == 0:
            raise InvalidSpec("no [agent.k] sections found")
    except (KeyError, ValueError) as exc:
        raise InvalidSpec(f"scenario file {path}: {exc}") from exc
    scenario = MarketScenario(ou=ou, Pi=Pi, times=times, agents=tuple(agents))
    if cp.has_option("ou", "x0"):
        scenario = scenario.with_x0(_parse_vector(cp["ou"]["x0"]))
    return scenario
