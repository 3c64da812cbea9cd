"""Common-information CARA equilibria: one-shot and continuous-time.

Two building blocks are solved here in closed form.

* A single trading round where all agents share the same Gaussian belief
  about the payoff variable H and hold quadratic endowments in H.
* A diffusive trading interval [a, b] where the asset pays an affine
  function of the factor X_b and agents hold quadratic endowments in X_b.

Both return prices, optimal positions and certainty equivalents.  The
continuous-time hedge is reconstructed explicitly from the optimal terminal
wealth (a quadratic in X_b) by differentiating its pricing-measure value
function; market clearing of the reconstructed hedges is checked by the test
suite rather than assumed.

A slow quadrature-plus-Newton solver for the single round is included as an
independent oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    AssumptionViolated,
    DegenerateVolatility,
    NoConvergence,
    SingularPayoffMap,
)
from .gaussian import (
    LQForm,
    OUParams,
    is_spd,
    lambda_grad_V,
    lambda_hess_V,
    ou_cov,
    ou_mean,
    symmetrize,
)
from scipy.linalg import expm


def representative_coeffs(alphas, Mbars, Vbars, M, Psi):
    """Risk-tolerance weighted aggregate coefficients.

    gamma = (sum alpha_j)^{-1}; Mbar = gamma sum alpha_j Mbar_j;
    Vbar = -gamma (sum alpha_j Vbar_j + M' Psi).
    """
    gamma = 1.0 / sum(alphas)
    Mbar = gamma * sum(a * np.asarray(m, float) for a, m in zip(alphas, Mbars))
    Vsum = sum(a * np.asarray(v, float) for a, v in zip(alphas, Vbars))
    Vbar = -gamma * (Vsum + np.asarray(M, float).T @ np.asarray(Psi, float))
    return gamma, symmetrize(np.atleast_2d(Mbar)), np.atleast_1d(Vbar)


@dataclass(frozen=True)
class SinglePeriodProblem:
    """One round of trade in an asset S = M H + V on a shared belief
    H ~ N(mu_H, Sigma_H), with per-agent quadratic endowments in H."""

    gammas: tuple
    omegas: tuple
    endowments: tuple  # LQForm per agent, variable H
    M: np.ndarray
    V: np.ndarray
    mu_H: np.ndarray
    Sigma_H: np.ndarray
    Psi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "M", np.atleast_2d(np.asarray(self.M, float)))
        object.__setattr__(self, "V", np.atleast_1d(np.asarray(self.V, float)))
        object.__setattr__(self, "mu_H", np.atleast_1d(np.asarray(self.mu_H, float)))
        object.__setattr__(
            self, "Sigma_H", symmetrize(np.atleast_2d(np.asarray(self.Sigma_H, float)))
        )
        object.__setattr__(self, "Psi", np.atleast_1d(np.asarray(self.Psi, float)))

    @property
    def d(self) -> int:
        return self.mu_H.shape[0]

    @property
    def J(self) -> int:
        return len(self.gammas)

    @property
    def alphas(self) -> tuple:
        return tuple(w / g for w, g in zip(self.omegas, self.gammas))


@dataclass(frozen=True)
class SinglePeriodSolution:
    price: np.ndarray
    strategies: tuple  # one d-vector per agent
    gamma_ce: tuple  # per agent: gamma_j times the certainty equivalent


def solve_single_period(p: SinglePeriodProblem) -> SinglePeriodSolution:
    d = p.d
    eye = np.eye(d)
    if abs(np.linalg.det(p.M)) < 1e-300 or np.linalg.cond(p.M) > 1e12:
        raise SingularPayoffMap("payoff matrix M is not invertible")
    P_H = np.linalg.inv(p.Sigma_H)
    for j, e in enumerate(p.endowments):
        if not is_spd(e.A + P_H):
            raise AssumptionViolated(
                f"agent {j}: endowment curvature + payoff precision not positive"
            )
    Mbars = [e.A for e in p.endowments]
    Vbars = [e.b for e in p.endowments]
    gamma, Mbar, Vbar = representative_coeffs(p.alphas, Mbars, Vbars, p.M, p.Psi)
    if not is_spd(P_H + Mbar):
        raise AssumptionViolated("aggregate curvature + payoff precision not positive")
    price = p.V + p.M @ np.linalg.solve(eye + p.Sigma_H @ Mbar, p.mu_H + p.Sigma_H @ Vbar)

    Minv_gap = np.linalg.solve(p.M, p.V - price)
    strategies = []
    for gamma_j, e in zip(p.gammas, p.endowments):
        rhs = P_H @ p.mu_H - e.b + (P_H + e.A) @ Minv_gap
        strategies.append(np.linalg.solve(p.M.T, rhs) / gamma_j)
    resid = sum(w * s for w, s in zip(p.omegas, strategies)) - p.Psi
    assert np.abs(resid).max() <= 1e-10 * max(1.0, np.abs(p.Psi).max()), resid

    G = np.linalg.inv(P_H + Mbar)
    ces = []
    for e in p.endowments:
        Mj, Vj, lamj = e.A, e.b, e.c
        # the log-determinant carries the agent's own curvature: it comes from
        # the agent's expectation over H, not from the aggregate pricing
        # density, and quadrature confirms the own-curvature version
        sign, logdet = np.linalg.slogdet(eye + p.Sigma_H @ Mj)
        ce = (
            lamj
            + 0.5 * sign * logdet
            + Vbar @ G @ Vj
            + 0.5 * Vbar @ G @ (P_H + Mj) @ G @ Vbar
            + p.mu_H @ P_H @ G @ (Vj - (Mbar - Mj) @ G @ Vbar)
            + 0.5 * p.mu_H @ P_H @ G @ (Mbar @ p.Sigma_H @ Mbar + Mj) @ G @ P_H @ p.mu_H
        )
        ces.append(float(ce))
    return SinglePeriodSolution(price, tuple(strategies), tuple(ces))


def brute_force_single_period(
    p: SinglePeriodProblem, order: int = 40, max_iter: int = 200
):
    """Independent slow solver: per-agent expected utility by tensor
    Gauss-Hermite quadrature, positions by damped Newton, price by damped
    Newton on the clearing residual.  d <= 3 only."""
    d = p.d
    if d > 3:
        raise ValueError("quadrature oracle limited to d <= 3")
    nodes, weights = np.polynomial.hermite_e.hermegauss(order)
    grids = np.meshgrid(*([nodes] * d), indexing="ij")
    U = np.stack([g.reshape(-1) for g in grids], axis=1)
    wg = np.meshgrid(*([weights] * d), indexing="ij")
    W = np.prod(np.stack([g.reshape(-1) for g in wg], axis=1), axis=1)
    logW = np.log(W / (2 * np.pi) ** (d / 2.0))
    chol = np.linalg.cholesky(p.Sigma_H)
    H = p.mu_H + U @ chol.T
    S = H @ p.M.T + p.V
    endow_vals = [
        np.array([e.value(h) for h in H]) / g for e, g in zip(p.endowments, p.gammas)
    ]

    def best_response(j, price):
        gamma_j = p.gammas[j]
        gap = S - price

        def newton(pi):
            for _ in range(100):
                expo = logW - gamma_j * (gap @ pi + endow_vals[j])
                shift = expo.max()
                w = np.exp(expo - shift)
                f = w.sum()
                grad = -gamma_j * gap.T @ w
                hess = gamma_j**2 * (gap * w[:, None]).T @ gap
                step = np.linalg.solve(hess, grad)
                if np.abs(step).max() < 1e-14 * max(1.0, np.abs(pi).max()):
                    return pi
                lam = 1.0
                for _ in range(60):
                    cand = pi - lam * step
                    e2 = logW - gamma_j * (gap @ cand + endow_vals[j])
                    if np.log(np.exp(e2 - shift).sum()) < np.log(f):
                        break
                    lam *= 0.5
                pi = pi - lam * step
            return pi

        return newton(np.zeros(d))

    def residual(price):
        return sum(
            w * best_response(j, price) for j, w in enumerate(p.omegas)
        ) - p.Psi

    price = p.V + p.M @ p.mu_H
    for it in range(max_iter):
        r = residual(price)
        if np.abs(r).max() <= 1e-10:
            strategies = tuple(best_response(j, price) for j in range(p.J))
            return price, strategies
        h = 1e-6
        jac = np.zeros((d, d))
        for i in range(d):
            e = np.zeros(d)
            e[i] = h
            jac[:, i] = (residual(price + e) - r) / h
        step = np.linalg.solve(jac, r)
        lam = 1.0
        base = np.abs(r).max()
        for _ in range(40):
            if np.abs(residual(price - lam * step)).max() < base:
                break
            lam *= 0.5
        price = price - lam * step
    raise NoConvergence(f"clearing Newton did not converge in {max_iter} iterations")


@dataclass(frozen=True)
class ContinuousProblem:
    """Diffusive trading of S_t on [a, b] with terminal value M_b X_b + V_b
    and per-agent quadratic endowments in X_b."""

    a: float
    b: float
    ou: OUParams
    M_b: np.ndarray
    V_b: np.ndarray
    gammas: tuple
    omegas: tuple
    endowments: tuple  # LQForm per agent, variable X_b
    Psi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "M_b", np.atleast_2d(np.asarray(self.M_b, float)))
        object.__setattr__(self, "V_b", np.atleast_1d(np.asarray(self.V_b, float)))
        object.__setattr__(self, "Psi", np.atleast_1d(np.asarray(self.Psi, float)))

    @property
    def d(self) -> int:
        return self.ou.d

    @property
    def J(self) -> int:
        return len(self.gammas)

    @property
    def alphas(self) -> tuple:
        return tuple(w / g for w, g in zip(self.omegas, self.gammas))


class ContinuousSolution:
    """Price map, pricing-density coefficients, hedges and welfare for one
    diffusive interval."""

    def __init__(self, problem: ContinuousProblem):
        p = problem
        self.problem = p
        self.gamma, self.Mbar, self.Vbar = representative_coeffs(
            p.alphas, [e.A for e in p.endowments], [e.b for e in p.endowments],
            p.M_b, p.Psi,
        )
        Sigma_ab = ou_cov(p.ou, p.b - p.a)
        P_ab = np.linalg.inv(Sigma_ab)
        if not is_spd(P_ab + self.Mbar):
            raise AssumptionViolated(
                "interval precision + aggregate endowment curvature not positive"
            )

    def tilted_mean(self, t: float, x) -> np.ndarray:
        """Pricing-measure conditional mean of X_b given X_t = x."""
        return lambda_grad_V(self.problem.ou, t, x, self.problem.b, self.Mbar, self.Vbar)

    def price(self, t: float, x) -> np.ndarray:
        p = self.problem
        return p.V_b + p.M_b @ self.tilted_mean(t, x)

    def dmean_dx(self, t: float) -> np.ndarray:
        """Jacobian of the tilted mean in x: (1 + Sigma(b-t) Mbar)^{-1} e^{-(b-t)kappa}."""
        p = self.problem
        tau = p.b - t
        S = ou_cov(p.ou, tau)
        return np.linalg.solve(np.eye(p.d) + S @ self.Mbar, expm(-tau * p.ou.kappa))

    def price_jacobian(self, t: float) -> np.ndarray:
        return self.problem.M_b @ self.dmean_dx(t)

    def wealth_coeffs(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Quadratic and linear coefficients of agent j's optimal terminal
        wealth in X_b (the budget-fixed constant is not needed for hedging)."""
        p = self.problem
        A_j = -(p.endowments[j].A - self.Mbar) / p.gammas[j]
        b_j = -(p.endowments[j].b + self.Vbar) / p.gammas[j]
        return A_j, b_j

    def hedging_strategy(self, j: int, t: float, x) -> np.ndarray:
        p = self.problem
        dS = self.price_jacobian(t)
        if np.linalg.cond(dS) > 1e12:
            raise DegenerateVolatility("price sensitivity to the factor is singular")
        A_j, b_j = self.wealth_coeffs(j)
        m = self.tilted_mean(t, x)
        dm = self.dmean_dx(t)
        grad_value = dm.T @ (A_j @ m + b_j)
        return np.linalg.solve(dS.T, grad_value)

    def wealth_constant(self, j: int, t: float, x) -> float:
        """Budget constant: pricing-measure value of the quadratic wealth
        part, so that the strategy is financed from zero capital at (t, x)."""
        p = self.problem
        A_j, b_j = self.wealth_coeffs(j)
        m = self.tilted_mean(t, x)
        G = lambda_hess_V(p.ou, t, x, p.b, self.Mbar)
        return -float(0.5 * m @ A_j @ m + 0.5 * np.trace(A_j @ G) + b_j @ m)

    def mpr(self, t: float, x) -> np.ndarray:
        """Market price of risk of S under the physical measure."""
        p = self.problem
        tau = p.b - t
        S = ou_cov(p.ou, tau)
        mu = ou_mean(p.ou, x, tau)
        edk = expm(-tau * p.ou.kappa)
        core = np.linalg.solve(np.eye(p.d) + self.Mbar @ S, self.Vbar - self.Mbar @ mu)
        return -p.ou.sigma.T @ edk.T @ core

    def gamma_ce(self, j: int, x_a) -> float:
        """gamma_j times agent j's time-a certainty equivalent at X_a = x_a."""
        p = self.problem
        Sigma = ou_cov(p.ou, p.b - p.a)
        P = np.linalg.inv(Sigma)
        mu = ou_mean(p.ou, x_a, p.b - p.a)
        Mb, Vb = self.Mbar, self.Vbar
        Mj, Vj, lamj = p.endowments[j].A, p.endowments[j].b, p.endowments[j].c
        G = np.linalg.inv(P + Mb)
        sign, logdet = np.linalg.slogdet(np.eye(p.d) + Sigma @ Mb)
        return float(
            lamj
            + 0.5 * sign * logdet
            - 0.5 * np.trace((Mb - Mj) @ G)
            + Vb @ G @ Vj
            + 0.5 * Vb @ G @ (P + Mj) @ G @ Vb
            + mu @ P @ G @ (Vj - (Mb - Mj) @ G @ Vb)
            + 0.5 * mu @ P @ G @ (Mb @ Sigma @ Mb + Mj) @ G @ P @ mu
        )


def solve_continuous(problem: ContinuousProblem) -> ContinuousSolution:
    return ContinuousSolution(problem)
