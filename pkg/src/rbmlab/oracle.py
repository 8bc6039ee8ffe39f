"""Deterministic reference computations for the linear family and the
entropy-hierarchy integrals.

Everything here is exact up to dense linear-algebra tolerance (1e-10,
scaling-and-squaring matrix exponentials via scipy) or explicit ODE
tolerance, with no Monte Carlo noise, so rate tests can regress slopes
against these values directly.

The linear family is d=1 with drift -a*x, kernel -kappa*z, diffusion
sigma, and independent Gaussian initial data N(m0, v0) per particle.
Gaussianity is preserved by every scheme, so first and second moments
characterize all the laws involved.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import cholesky, expm

from .batching import enumerate_divisions
from .errors import CapacityError, DomainError, RbmlabError, ValidationError

RBM_ORACLE_LIMIT = 8  # exhaustive division averaging above this is refused


@dataclass(frozen=True)
class LinearParams:
    a: float = 1.0
    kappa: float = 0.5
    sigma: float = 1.0
    m0: float = 0.0
    v0: float = 1.0

    def __post_init__(self):
        if self.a < 0 or self.kappa < 0 or self.sigma < 0 or self.v0 < 0:
            raise ValidationError("a, kappa, sigma, v0 must all be >= 0")


@dataclass(frozen=True)
class GaussianMoments:
    """Mean vector and full covariance of an n-particle Gaussian law."""

    mean: np.ndarray  # (n,)
    covariance: np.ndarray  # (n, n)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValidationError(
                f"mean/covariance shapes incompatible: {mean.shape} vs {cov.shape}"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @classmethod
    def exchangeable(cls, n: int, mean: float, v: float, c: float) -> "GaussianMoments":
        cov = np.full((n, n), c)
        np.fill_diagonal(cov, v)
        return cls(mean=np.full(n, float(mean)), covariance=cov)

    @property
    def n(self) -> int:
        return self.mean.size

    @property
    def variance(self) -> float:
        """Average on-diagonal entry."""
        return float(np.mean(np.diag(self.covariance)))

    @property
    def cross_covariance(self) -> float:
        """Average off-diagonal entry (0.0 for n=1)."""
        n = self.n
        if n == 1:
            return 0.0
        off = self.covariance.sum() - np.trace(self.covariance)
        return float(off / (n * (n - 1)))

    def exchangeability_gap(self) -> float:
        """Max deviation of any entry from the (v, c) exchangeable profile."""
        v, c = self.variance, self.cross_covariance
        dev = self.covariance - GaussianMoments.exchangeable(self.n, 0.0, v, c).covariance
        return float(np.abs(dev).max())


def meanfield_moments_linear(params: LinearParams, t: float) -> tuple[float, float]:
    """Mean and variance of the limiting one-particle law at time t.

    m(t) = m0 e^{-a t};  v solves v' = -2(a+kappa) v + 2 sigma from v0.
    """
    if t < 0:
        raise ValidationError("t must be >= 0")
    lam = params.a + params.kappa
    m = params.m0 * math.exp(-params.a * t)
    if lam == 0:
        return m, params.v0 + 2.0 * params.sigma * t
    vinf = params.sigma / lam
    return m, vinf + (params.v0 - vinf) * math.exp(-2.0 * lam * t)


def _mode_variance(lam: float, sigma: float, v0: float, t: float) -> float:
    # Scalar s' = 2 lam s + 2 sigma, s(0) = v0.
    if lam == 0:
        return v0 + 2.0 * sigma * t
    return -sigma / lam + (v0 + sigma / lam) * math.exp(2.0 * lam * t)


def full_cov_linear(params: LinearParams, n: int, t: float) -> GaussianMoments:
    """Exchangeable (v, c) of the n-particle pairwise system at time t.

    The drift matrix A = -(a+kappa) I + (kappa/(n-1)) (J - I) has the
    all-ones mean mode with eigenvalue -a and an (n-1)-fold deviation mode
    with eigenvalue -(a+kappa) - kappa/(n-1); the covariance ODE
    dS/dt = A S + S A^T + 2 sigma I decouples in that basis.
    """
    if n < 2:
        raise ValidationError("pairwise covariance needs n >= 2")
    if t < 0:
        raise ValidationError("t must be >= 0")
    lam_mean = -params.a
    lam_dev = -(params.a + params.kappa) - params.kappa / (n - 1)
    s_mean = _mode_variance(lam_mean, params.sigma, params.v0, t)
    s_dev = _mode_variance(lam_dev, params.sigma, params.v0, t)
    v = (s_mean + (n - 1) * s_dev) / n
    c = (s_mean - s_dev) / n
    return GaussianMoments.exchangeable(n, params.m0 * math.exp(-params.a * t), v, c)


def _lyapunov_integral(A: np.ndarray, Q: np.ndarray, h: float) -> np.ndarray:
    """int_0^h e^{A s} Q e^{A^T s} ds via the block-matrix exponential."""
    n = A.shape[0]
    C = np.zeros((2 * n, 2 * n))
    C[:n, :n] = -A
    C[:n, n:] = Q
    C[n:, n:] = A.T
    E = expm(C * h)
    return expm(A * h) @ E[:n, n:]


def full_cov_linear_dense(params: LinearParams, n: int, t: float) -> GaussianMoments:
    """Same law as full_cov_linear, by dense matrix exponentials.

    Independent route used to cross-check the exchangeable closed form to
    1e-10; also exercises the same machinery as the division-averaged
    recursion below.
    """
    if n < 2:
        raise ValidationError("pairwise covariance needs n >= 2")
    if t < 0:
        raise ValidationError("t must be >= 0")
    A = -(params.a + params.kappa) * np.eye(n) + (params.kappa / (n - 1)) * (
        np.ones((n, n)) - np.eye(n)
    )
    E = expm(A * t)
    S0 = params.v0 * np.eye(n)
    cov = E @ S0 @ E.T + _lyapunov_integral(A, 2.0 * params.sigma * np.eye(n), t)
    mean = E @ np.full(n, params.m0)
    return GaussianMoments(mean=mean, covariance=cov)


def rbm_cov_linear(
    params: LinearParams, n: int, p: int, tau: float, steps: int
) -> GaussianMoments:
    """Exact moments of the random-batch system after `steps` periods.

    Within one period a division xi freezes the coupling, so the system is
    an Ornstein-Uhlenbeck process with drift matrix
    A_xi = -(a+kappa) I + (kappa/(p-1)) B_xi (B_xi = batchmate adjacency);
    the mean maps through e^{A_xi tau} and the second moment through
    S -> e^{A_xi tau} S e^{A_xi^T tau} + int_0^tau e^{A_xi s} 2 sigma I e^{A_xi^T s} ds.
    Averaging the updated (mean, second moment) over all divisions with
    their exact uniform weights is exact because moment propagation is
    linear in them.  Exhaustive enumeration restricts n.
    """
    if n > RBM_ORACLE_LIMIT:
        raise CapacityError(f"division-averaged oracle capped at n <= {RBM_ORACLE_LIMIT}")
    if tau <= 0:
        raise ValidationError("tau must be > 0")
    if steps < 0:
        raise ValidationError("steps must be >= 0")
    base = -(params.a + params.kappa) * np.eye(n)
    updates = []
    for division, weight in enumerate_divisions(n, p):
        adj = np.zeros((n, n))
        for block in division.blocks:
            for i in block:
                for j in block:
                    if i != j:
                        adj[i, j] = 1.0
        A = base + (params.kappa / (p - 1)) * adj
        E = expm(A * tau)
        H = _lyapunov_integral(A, 2.0 * params.sigma * np.eye(n), tau)
        updates.append((float(weight), E, H))

    mean = np.full(n, params.m0)
    second = params.v0 * np.eye(n) + np.outer(mean, mean)
    for _ in range(steps):
        new_mean = np.zeros(n)
        new_second = np.zeros((n, n))
        for w, E, H in updates:
            new_mean += w * (E @ mean)
            new_second += w * (E @ second @ E.T + H)
        mean, second = new_mean, new_second
    cov = second - np.outer(mean, mean)
    return GaussianMoments(mean=mean, covariance=cov)


def _as_gaussian(m, S) -> tuple[np.ndarray, np.ndarray]:
    mean = np.atleast_1d(np.asarray(m, dtype=float))
    cov = np.atleast_2d(np.asarray(S, dtype=float))
    if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
        raise ValidationError("mean/covariance shapes incompatible")
    return mean, cov


def gaussian_kl(m1, S1, m2, S2) -> float:
    """KL divergence between Gaussians N(m1, S1) and N(m2, S2).

    0.5 (tr(S2^-1 S1) + (m2-m1)^T S2^-1 (m2-m1) - k + ln det S2 - ln det S1).
    Scalars are accepted as 1x1 inputs.  S2 must be positive definite;
    a merely semidefinite S1 gives +inf (the laws are mutually singular),
    an indefinite S1 is a domain error.
    """
    m1v, S1m = _as_gaussian(m1, S1)
    m2v, S2m = _as_gaussian(m2, S2)
    if m1v.size != m2v.size:
        raise ValidationError("dimension mismatch between the two Gaussians")
    k = m1v.size
    scale = max(1.0, float(np.abs(S1m).max()))
    if float(np.linalg.eigvalsh(S1m).min()) < -1e-10 * scale:
        raise DomainError("first covariance is indefinite")
    try:
        L2 = cholesky(S2m, lower=True)
    except np.linalg.LinAlgError as exc:
        raise DomainError("second covariance must be positive definite") from exc
    sign1, logdet1 = np.linalg.slogdet(S1m)
    if sign1 <= 0 or not np.isfinite(logdet1):
        return math.inf
    logdet2 = 2.0 * float(np.log(np.diag(L2)).sum())
    half = np.linalg.solve(L2, S1m)
    tr = float(np.linalg.solve(L2, half.T).trace())
    dm = np.linalg.solve(L2, m2v - m1v)
    quad = float(dm @ dm)
    kl = 0.5 * (tr + quad - k + logdet2 - float(logdet1))
    return float(max(kl, 0.0))  # clamp roundoff on identical inputs


def k_marginal_exchangeable_kl(
    v: float,
    c: float,
    reference_v: float,
    n: int,
    k: int,
    mean: float = 0.0,
    reference_mean: float = 0.0,
) -> float:
    """KL of the k-particle marginal of an exchangeable Gaussian system
    against the k-fold product reference N(reference_mean, reference_v).

    The marginal covariance is v on the diagonal and c off it; its
    eigenvalues are v - c (k-1 fold) and v + (k-1) c, so indefiniteness is
    detected exactly.
    """
    if not 1 <= k <= n:
        raise ValidationError(f"need 1 <= k <= n, got k={k}, n={n}")
    lo = min(v - c, v + (k - 1) * c) if k > 1 else v
    if lo < -1e-12 * max(1.0, abs(v)):
        raise DomainError(f"k-marginal covariance is indefinite (min eigenvalue {lo})")
    S1 = np.full((k, k), float(c))
    np.fill_diagonal(S1, float(v))
    return gaussian_kl(
        np.full(k, float(mean)), S1, np.full(k, float(reference_mean)), reference_v * np.eye(k)
    )


@dataclass(frozen=True)
class HierarchyTable:
    """Iterated-integral values A_k^l(t) on a time grid.

    values[k-1, l-1, :] holds A_k^l over t_grid; entries with k > l are NaN.
    """

    gamma: float
    t_grid: np.ndarray  # (nt,)
    values: np.ndarray  # (k_max, l_max, nt)
    k_max: int
    l_max: int

    def value(self, k: int, l: int) -> np.ndarray:
        if not (1 <= k <= self.k_max and k <= l <= self.l_max):
            raise ValidationError(f"need 1 <= k <= {self.k_max}, k <= l <= {self.l_max}")
        return self.values[k - 1, l - 1]


def _chain_derivative(Y: np.ndarray, gamma: float, k_row: np.ndarray) -> np.ndarray:
    # Row L holds the chain for l = L+1: dA_k = gamma k (A_{k+1} - A_k),
    # with the boundary A_{l+1} = 1 sitting on the diagonal column.
    nxt = np.empty_like(Y)
    nxt[:, :-1] = Y[:, 1:]
    nxt[:, -1] = 0.0
    np.fill_diagonal(nxt, 1.0)
    return gamma * k_row * (nxt - Y)


def _rk4_span(Y: np.ndarray, gamma: float, k_row: np.ndarray, span: float, nsub: int) -> np.ndarray:
    h = span / nsub
    for _ in range(nsub):
        k1 = _chain_derivative(Y, gamma, k_row)
        k2 = _chain_derivative(Y + 0.5 * h * k1, gamma, k_row)
        k3 = _chain_derivative(Y + 0.5 * h * k2, gamma, k_row)
        k4 = _chain_derivative(Y + h * k3, gamma, k_row)
        Y = Y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return Y


_MAX_SUBSTEPS = 1 << 20


def hierarchy_table(
    gamma: float,
    k_max: int,
    l_max: int,
    t_grid: Sequence[float],
    rel_tol: float = 1e-8,
) -> HierarchyTable:
    """Integrate the triangular ODE chains for all l <= l_max at once.

    For each l, d/dt A_k = gamma k (A_{k+1} - A_k) with A_k(0) = 0 and
    boundary A_{l+1} == 1; this is the unrolled form of the nested-integral
    definition (equivalence is covered by a symbolic test for small l - k).
    Classic RK4 with per-interval step doubling: halve the substep until
    the coarse/fine gap (scaled by 1/15) is below rel_tol; values live in
    [0, 1] so relative and absolute tolerance coincide.
    """
    if gamma <= 0:
        raise ValidationError("gamma must be > 0")
    if not 1 <= k_max <= l_max:
        raise ValidationError("need 1 <= k_max <= l_max")
    grid = np.asarray(t_grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1 or grid[0] != 0.0:
        raise ValidationError("t_grid must be 1-d and start at 0")
    if grid.size > 1 and not (np.diff(grid) > 0).all():
        raise ValidationError("t_grid must be strictly increasing")

    k_row = np.arange(1, l_max + 1, dtype=float)[None, :]
    Y = np.zeros((l_max, l_max))
    values = np.full((k_max, l_max, grid.size), np.nan)

    def record(idx: int, Y: np.ndarray) -> None:
        for L in range(l_max):
            upto = min(k_max, L + 1)
            # clip roundoff excursions; true values lie in [0, 1]
            values[:upto, L, idx] = np.clip(Y[L, :upto], 0.0, 1.0)

    record(0, Y)
    nsub = 1
    for idx in range(1, grid.size):
        span = grid[idx] - grid[idx - 1]
        while True:
            coarse = _rk4_span(Y, gamma, k_row, span, nsub)
            fine = _rk4_span(Y, gamma, k_row, span, 2 * nsub)
            err = float(np.abs(fine - coarse).max()) / 15.0
            if err <= rel_tol * 0.1:
                break
            if nsub >= _MAX_SUBSTEPS:
                raise RbmlabError(
                    f"step-doubling stalled at interval {idx} (err={err:.3e})"
                )
            nsub *= 2
        Y = fine
        record(idx, Y)
        if err <= rel_tol * 0.003 and nsub > 1:
            nsub //= 2  # warm start: relax after an easy interval
    return HierarchyTable(gamma=gamma, t_grid=grid, values=values, k_max=k_max, l_max=l_max)


@dataclass(frozen=True)
class HierarchyBoundReport:
    """Violations of the two closed-form bounds on A_k^l."""

    pointwise_violations: tuple  # (k, l, t, value, bound)
    sum_violations: tuple  # (r, k, t, partial_sum, bound)
    max_pointwise_overshoot: float
    max_sum_overshoot: float

    @property
    def passed(self) -> bool:
        return not self.pointwise_violations and not self.sum_violations


def pointwise_hierarchy_bound(gamma: float, k: int, l: int, t) -> np.ndarray:
    """exp(-2 (l+1) ((e^{-gamma t} - k/(l+1))_+)^2)."""
    t = np.asarray(t, dtype=float)
    gap = np.maximum(np.exp(-gamma * t) - k / (l + 1), 0.0)
    return np.exp(-2.0 * (l + 1) * gap * gap)


def weighted_sum_bound(gamma: float, k: int, r: int, t) -> np.ndarray:
    """((k+r)!/(k-1)!) (e^{gamma (r+1) t} - 1)/(r+1)."""
    t = np.asarray(t, dtype=float)
    coeff = math.factorial(k + r) / math.factorial(k - 1)
    return coeff * (np.exp(gamma * (r + 1) * t) - 1.0) / (r + 1)


def hierarchy_bound_check(
    table: HierarchyTable,
    r_list: Sequence[int] = (0, 1),
    tol_pointwise: float = 1e-8,
    tol_sum: float = 1e-6,
) -> HierarchyBoundReport:
    """Sweep both bounds over the whole table; violations are report
    content, never exceptions."""
    point = []
    worst_point = 0.0
    for k in range(1, table.k_max + 1):
        for l in range(k, table.l_max + 1):
            vals = table.value(k, l)
            bound = pointwise_hierarchy_bound(table.gamma, k, l, table.t_grid)
            over = vals - bound
            worst_point = max(worst_point, float(over.max()))
            for idx in np.nonzero(over > tol_pointwise)[0]:
                point.append((k, l, float(table.t_grid[idx]), float(vals[idx]), float(bound[idx])))

    sums = []
    worst_sum = 0.0
    ells = np.arange(1, table.l_max + 1, dtype=float)
    for r in r_list:
        if r < 0:
            raise ValidationError("weights r must be >= 0")
        for k in range(1, table.k_max + 1):
            rows = table.values[k - 1, k - 1 :, :]  # (l_max-k+1, nt)
            weights = ells[k - 1 :] ** r
            partial = (weights[:, None] * rows).sum(axis=0)
            bound = weighted_sum_bound(table.gamma, k, r, table.t_grid)
            over = partial - bound
            worst_sum = max(worst_sum, float(over.max()))
            for idx in np.nonzero(over > tol_sum)[0]:
                sums.append(
                    (r, k, float(table.t_grid[idx]), float(partial[idx]), float(bound[idx]))
                )

    return HierarchyBoundReport(
        pointwise_violations=tuple(point),
        sum_violations=tuple(sums),
        max_pointwise_overshoot=worst_point,
        max_sum_overshoot=worst_sum,
    )
