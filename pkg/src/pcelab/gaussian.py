"""Gaussian core: OU transition moments, exponential-quadratic expectations,
conjugate updates, and linear-quadratic form algebra on stacked coordinates.

Everything here is exact linear algebra; there is no sampling.  The central
object is the log expectation

    Lambda(t, x; b, M, V) = log E[ exp(-1/2 X_b' M X_b + X_b' V) | X_t = x ]

for an OU process X, evaluated in a form that stays finite at b = t.  All
equilibrium formulas in the rest of the package are built from Lambda and its
V-derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import DimensionMismatch, DivergentIntegral, SingularCovariance

# A symmetric matrix counts as SPD when min eig > SPD_REL_TOL * max(1, max eig).
SPD_REL_TOL = 1e-10
COND_LIMIT = 1e14


def _as_matrix(a, d: int) -> np.ndarray:
    m = np.atleast_2d(np.asarray(a, dtype=float))
    if m.shape != (d, d):
        raise DimensionMismatch(f"expected {d}x{d} matrix, got {m.shape}")
    return m


def _as_vector(a, d: int) -> np.ndarray:
    v = np.atleast_1d(np.asarray(a, dtype=float))
    if v.shape != (d,):
        raise DimensionMismatch(f"expected {d}-vector, got {v.shape}")
    return v


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def is_spd(a: np.ndarray, rel_tol: float = SPD_REL_TOL) -> bool:
    """Fixed, documented SPD cutoff so error conditions are deterministic."""
    w = np.linalg.eigvalsh(symmetrize(a))
    return w.min() > rel_tol * max(1.0, w.max())


@dataclass(frozen=True)
class OUParams:
    """Parameters of dX = kappa (theta - X) dt + sigma dB, with Sigma = sigma sigma'."""

    kappa: np.ndarray
    theta: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        d = np.atleast_1d(np.asarray(self.theta, dtype=float)).shape[0]
        object.__setattr__(self, "kappa", _as_matrix(self.kappa, d))
        object.__setattr__(self, "theta", _as_vector(self.theta, d))
        object.__setattr__(self, "sigma", _as_matrix(self.sigma, d))
        if not is_spd(self.Sigma):
            raise SingularCovariance("sigma sigma' must be positive definite")

    @property
    def d(self) -> int:
        return self.theta.shape[0]

    @property
    def Sigma(self) -> np.ndarray:
        return self.sigma @ self.sigma.T


def ou_mean(params: OUParams, x, tau: float) -> np.ndarray:
    """Conditional mean theta + e^{-tau kappa} (x - theta)."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    x = _as_vector(x, params.d)
    return params.theta + expm(-tau * params.kappa) @ (x - params.theta)


def ou_cov(params: OUParams, tau: float) -> np.ndarray:
    """Transition covariance integral int_0^tau e^{-u kappa} Sigma e^{-u kappa'} du.

    Evaluated with the block matrix exponential (Van Loan) so no quadrature or
    diagonalizability assumption is needed.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    d = params.d
    if tau == 0.0:
        return np.zeros((d, d))
    block = np.zeros((2 * d, 2 * d))
    block[:d, :d] = -params.kappa
    block[:d, d:] = params.Sigma
    block[d:, d:] = params.kappa.T
    e = expm(tau * block)
    cov = e[:d, d:] @ expm(-tau * params.kappa.T)
    return symmetrize(cov)


def ou_prec(params: OUParams, tau: float) -> np.ndarray:
    """Inverse of ou_cov(tau) for tau > 0; raises when numerically singular."""
    cov = ou_cov(params, tau)
    if tau <= 0 or np.linalg.cond(cov) > COND_LIMIT:
        raise SingularCovariance(f"Sigma({tau}) is numerically singular")
    return symmetrize(np.linalg.inv(cov))


def _check_convergent(params: OUParams, tau: float, M: np.ndarray) -> None:
    """The expectation exists iff P(tau) + M is SPD (always true at tau = 0)."""
    if tau == 0.0:
        return
    p = ou_prec(params, tau)
    if not is_spd(p + M):
        raise DivergentIntegral(
            "P(tau) + M has a nonpositive eigenvalue; the Gaussian integral diverges"
        )


def log_mgf_quadratic(params: OUParams, t: float, x, b: float, M, V) -> float:
    """Lambda(t, x; b, M, V) = log E[exp(-X_b'M X_b / 2 + X_b'V) | X_t = x].

    Uses the precision-free rearrangement

        -1/2 log|1 + S M| - 1/2 mu' M (1 + S M)^{-1} mu
        + mu'(1 + M S)^{-1} V + 1/2 V' S (1 + M S)^{-1} V

    with S = Sigma(b - t), mu = mu(x, b - t), which is finite at b = t.
    """
    d = params.d
    tau = b - t
    if tau < 0:
        raise ValueError("horizon b must satisfy b >= t")
    M = symmetrize(_as_matrix(M, d))
    V = _as_vector(V, d)
    _check_convergent(params, tau, M)
    S = ou_cov(params, tau)
    mu = ou_mean(params, x, tau)
    eye = np.eye(d)
    sign, logdet = np.linalg.slogdet(eye + S @ M)
    if sign <= 0:
        raise DivergentIntegral("det(1 + Sigma(tau) M) is not positive")
    ism = np.linalg.inv(eye + S @ M)  # (1 + S M)^{-1}
    ims = np.linalg.inv(eye + M @ S)  # (1 + M S)^{-1}
    return float(
        -0.5 * logdet
        - 0.5 * mu @ M @ ism @ mu
        + mu @ ims @ V
        + 0.5 * V @ S @ ims @ V
    )


def lambda_grad_V(params: OUParams, t: float, x, b: float, M, V) -> np.ndarray:
    """Gradient of Lambda in V: the exponentially tilted mean of X_b.

    Equals (1 + Sigma(tau) M)^{-1} (mu(x, tau) + Sigma(tau) V).
    """
    d = params.d
    tau = b - t
    M = symmetrize(_as_matrix(M, d))
    V = _as_vector(V, d)
    _check_convergent(params, tau, M)
    S = ou_cov(params, tau)
    mu = ou_mean(params, x, tau)
    return np.linalg.solve(np.eye(d) + S @ M, mu + S @ V)


def lambda_hess_V(params: OUParams, t: float, x, b: float, M, V=None) -> np.ndarray:
    """Hessian of Lambda in V: the tilted covariance (P(tau) + M)^{-1}."""
    d = params.d
    tau = b - t
    M = symmetrize(_as_matrix(M, d))
    _check_convergent(params, tau, M)
    S = ou_cov(params, tau)
    return symmetrize(np.linalg.solve(np.eye(d) + S @ M, S))


def gaussian_posterior(prior_mean, prior_precision, signal_precisions, signal_values):
    """Conjugate normal update: precision adds, mean is precision-weighted.

    Returns (mean, precision).  Order of signals is irrelevant by construction.
    """
    mean = np.atleast_1d(np.asarray(prior_mean, dtype=float))
    d = mean.shape[0]
    prec = symmetrize(_as_matrix(prior_precision, d))
    rhs = prec @ mean
    for E, h in zip(signal_precisions, signal_values):
        E = symmetrize(_as_matrix(E, d))
        rhs = rhs + E @ _as_vector(h, d)
        prec = prec + E
    return np.linalg.solve(prec, rhs), symmetrize(prec)


@dataclass(frozen=True)
class StackedIndex:
    """Layout of the stacked coordinate z = (x, h_1, ..., h_n) in R^{d(n+1)}."""

    d: int
    n: int

    @property
    def dim(self) -> int:
        return self.d * (self.n + 1)

    @property
    def x(self) -> slice:
        return slice(0, self.d)

    def h(self, k: int) -> slice:
        """Slice of the k-th signal block, k = 1..n."""
        if not 1 <= k <= self.n:
            raise DimensionMismatch(f"signal index {k} outside 1..{self.n}")
        return slice(self.d * k, self.d * (k + 1))

    def stack(self, x, hbar) -> np.ndarray:
        z = np.zeros(self.dim)
        z[self.x] = _as_vector(x, self.d)
        h = np.asarray(hbar, dtype=float).reshape(-1)
        if h.shape[0] != self.d * self.n:
            raise DimensionMismatch("signal stack has wrong length")
        z[self.d:] = h
        return z

    def split(self, z) -> tuple[np.ndarray, np.ndarray]:
        z = _as_vector(z, self.dim)
        return z[self.x].copy(), z[self.d:].copy()


@dataclass(frozen=True)
class LQForm:
    """The quadratic functional z -> z'Az/2 + b'z + c, with A kept symmetric."""

    A: np.ndarray
    b: np.ndarray
    c: float = 0.0

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        A = _as_matrix(self.A, b.shape[0])
        scale = max(1.0, np.abs(A).max())
        if np.abs(A - A.T).max() > 1e-12 * scale:
            raise DimensionMismatch("quadratic coefficient is not symmetric")
        object.__setattr__(self, "A", symmetrize(A))
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", float(self.c))

    @property
    def dim(self) -> int:
        return self.b.shape[0]

    @classmethod
    def zero(cls, dim: int) -> "LQForm":
        return cls(np.zeros((dim, dim)), np.zeros(dim), 0.0)

    def value(self, z) -> float:
        z = _as_vector(z, self.dim)
        return float(0.5 * z @ self.A @ z + self.b @ z + self.c)

    def add(self, other: "LQForm") -> "LQForm":
        if other.dim != self.dim:
            raise DimensionMismatch("cannot add forms of different dimension")
        return LQForm(self.A + other.A, self.b + other.b, self.c + other.c)

    def scale(self, s: float) -> "LQForm":
        return LQForm(s * self.A, s * self.b, s * self.c)


def lq_embed(form: LQForm, dim: int, offset: int) -> LQForm:
    """Place a form over coordinates [offset, offset + form.dim) of a larger space."""
    m = form.dim
    if offset < 0 or offset + m > dim:
        raise DimensionMismatch("embedding block falls outside the target space")
    A = np.zeros((dim, dim))
    b = np.zeros(dim)
    A[offset:offset + m, offset:offset + m] = form.A
    b[offset:offset + m] = form.b
    return LQForm(A, b, form.c)


def lq_restrict(form: LQForm, free: slice, fixed_z) -> LQForm:
    """Freeze all coordinates outside `free` at the values in fixed_z.

    Returns the form over the free block only; fixed_z must be a full-length
    vector (its entries inside the free block are ignored).
    """
    z0 = _as_vector(fixed_z, form.dim).copy()
    z0[free] = 0.0
    idx = np.arange(form.dim)[free]
    A_ff = form.A[np.ix_(idx, idx)]
    b_f = form.b[idx] + form.A[idx, :] @ z0
    c = 0.5 * z0 @ form.A @ z0 + form.b @ z0 + form.c
    return LQForm(A_ff, b_f, c)


def lq_fit(f, dim: int, validate: bool = True, scale: float = 1.0) -> LQForm:
    """Recover an exact LQForm from point evaluations of a quadratic function.

    Probes the origin, +/- unit vectors and pairwise sums (all scaled by
    `scale`), which determines a quadratic exactly; a random extra probe guards
    against f not actually being quadratic.
    """
    s = scale
    c = f(np.zeros(dim))
    A = np.zeros((dim, dim))
    b = np.zeros(dim)
    fp = np.empty(dim)
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = s
        fp[i] = f(e)
        fm = f(-e)
        b[i] = (fp[i] - fm) / (2 * s)
        A[i, i] = (fp[i] + fm - 2 * c) / s**2
    for i in range(dim):
        for j in range(i + 1, dim):
            e = np.zeros(dim)
            e[i] = s
            e[j] = s
            A[i, j] = A[j, i] = (f(e) - fp[i] - fp[j] + c) / s**2
    form = LQForm(A, b, c)
    if validate:
        rng = np.random.default_rng(7)
        z = rng.standard_normal(dim) * s
        ref = f(z)
        tol = 1e-8 * max(1.0, abs(ref))
        if abs(form.value(z) - ref) > tol:
            from .errors import AffinityViolated

            raise AffinityViolated(
                f"function is not quadratic: residual {form.value(z) - ref:.3e}"
            )
    return form


@dataclass(frozen=True)
class AffineMap:
    """The map z -> A z + b with A of shape (out_dim, in_dim)."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if A.shape[0] != b.shape[0]:
            raise DimensionMismatch("matrix and offset of affine map disagree")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def in_dim(self) -> int:
        return self.A.shape[1]

    @property
    def out_dim(self) -> int:
        return self.A.shape[0]

    @classmethod
    def constant(cls, b, in_dim: int) -> "AffineMap":
        b = np.atleast_1d(np.asarray(b, dtype=float))
        return cls(np.zeros((b.shape[0], in_dim)), b)

    def __call__(self, z) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        if z.shape[0] != self.in_dim:
            raise DimensionMismatch("affine map applied to wrong dimension")
        return self.A @ z + self.b


def affine_fit(f, in_dim: int, validate: bool = True) -> AffineMap:
    """Recover an exact AffineMap from point evaluations of an affine function."""
    b = np.atleast_1d(np.asarray(f(np.zeros(in_dim)), dtype=float))
    A = np.zeros((b.shape[0], in_dim))
    for i in range(in_dim):
        e = np.zeros(in_dim)
        e[i] = 1.0
        A[:, i] = np.atleast_1d(np.asarray(f(e), dtype=float)) - b
    amap = AffineMap(A, b)
    if validate:
        rng = np.random.default_rng(11)
        z = rng.standard_normal(in_dim)
        ref = np.atleast_1d(np.asarray(f(z), dtype=float))
        tol = 1e-8 * max(1.0, float(np.abs(ref).max()))
        if np.abs(amap(z) - ref).max() > tol:
            from .errors import AffinityViolated

            raise AffinityViolated("function is not affine")
    return amap
