"""Conditional-density calculus for the public signal system.

The running quantity is

    ell_n(t, x, hbar) = Lambda(t, x; 1, sum_m E_m, sum_m E_m h_m)

the log conditional expectation given X_t = x of the exponential-quadratic
signal likelihood.  Ratios of exp(ell) give the density processes that tilt
the factor law toward the realized signals, and normalizing the stage-n ratio
over h_n gives the conditional law of the next public signal at its release
time.  All evaluations route through the single Lambda implementation in
pcelab.gaussian; there are no independent closed forms here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussian import gaussian_posterior, log_mgf_quadratic, ou_cov, ou_mean, symmetrize
from .market import MarketScenario, SignalSystem


@dataclass(frozen=True)
class StageDensity:
    """Evaluators for the stage-n likelihood logs and density ratios."""

    scenario: MarketScenario
    signals: SignalSystem
    n: int

    @property
    def d(self) -> int:
        return self.scenario.d

    def _split(self, hbar) -> list[np.ndarray]:
        h = np.asarray(hbar, float).reshape(-1)
        if h.shape[0] != self.d * self.n:
            raise ValueError(f"expected {self.n} signal blocks of size {self.d}")
        return [h[m * self.d:(m + 1) * self.d] for m in range(self.n)]

    def ell(self, t: float, x, hbar) -> float:
        """Uninformed log likelihood: all n public signals at precision E_m."""
        blocks = self._split(hbar)
        M = np.zeros((self.d, self.d))
        V = np.zeros(self.d)
        for E, h in zip(self.signals.E[: self.n], blocks):
            M = M + E
            V = V + E @ h
        return log_mgf_quadratic(self.scenario.ou, t, x, 1.0, M, V)

    def ell_k(self, t: float, x, hbar, k: int, g_k) -> float:
        """Insider-k variant: private signal at full precision C_k replaces
        the public block h_k."""
        blocks = self._split(hbar)
        C = self.scenario.insider(k).C
        M = C.copy()
        V = C @ np.atleast_1d(np.asarray(g_k, float))
        for m, (E, h) in enumerate(zip(self.signals.E[: self.n], blocks), start=1):
            if m == k:
                continue
            M = M + E
            V = V + E @ h
        return log_mgf_quadratic(self.scenario.ou, t, x, 1.0, M, V)

    def density_ratio(self, t: float, x, hbar, k: int = 0, g_k=None) -> float:
        """The density process value exp(ell(t, x) - ell(0, X_0)).

        k = 0 is the uninformed version; k >= 1 uses insider k's private
        signal g_k in place of the k-th public block.
        """
        x0 = self.scenario.x0
        if k == 0:
            return float(np.exp(self.ell(t, x, hbar) - self.ell(0.0, x0, hbar)))
        return float(
            np.exp(self.ell_k(t, x, hbar, k, g_k) - self.ell_k(0.0, x0, hbar, k, g_k))
        )


def jump_signal_moments(
    scenario: MarketScenario,
    signals: SignalSystem,
    n: int,
    x,
    hbar_prev,
    insider_k: int = 0,
    g_k=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Conditional mean and covariance of the signal released at t_n, given
    the factor value x at t_n and the information of one agent.

    The signal is H_n = X_1 + noise of covariance E_n^{-1}.  Conditioning on
    the factor and the observed signals is a conjugate Gaussian update of the
    X_1 forecast, after which the independent release noise adds E_n^{-1} to
    the covariance.  insider_k = 0 conditions on the public signals only;
    insider_k = k >= 1 replaces the k-th public block with the private signal
    g_k at full precision C_k.
    """
    t_n = scenario.times[n - 1]
    tau = 1.0 - t_n
    prior_mean = ou_mean(scenario.ou, x, tau)
    prior_prec = np.linalg.inv(ou_cov(scenario.ou, tau))
    blocks = np.asarray(hbar_prev, float).reshape(-1)
    d = scenario.d
    precs = []
    vals = []
    for m in range(1, n):
        if m == insider_k:
            precs.append(scenario.insider(m).C)
            vals.append(np.atleast_1d(np.asarray(g_k, float)))
        else:
            precs.append(signals.E[m - 1])
            vals.append(blocks[(m - 1) * d:m * d])
    mean, post_prec = gaussian_posterior(prior_mean, prior_prec, precs, vals)
    cov = np.linalg.inv(post_prec) + np.linalg.inv(signals.E[n - 1])
    return mean, symmetrize(cov)
