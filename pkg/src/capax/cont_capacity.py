"""Capacity sandwiches for continuous-input, countable-output channels.

The output alphabet is truncated at level M (tail mass folded uniformly
into the first M letters), which turns the problem into one with a finite
dual vector; the dual fast-gradient machinery then runs as in the DMC
case, with integrals over the input interval evaluated by composite
Gauss-Legendre quadrature.  A polynomial tail bound converts the
truncation into an explicit mutual-information error E, giving two-sided
bounds on the capacity of the original channel.

The discrete-time Poisson channel (output Poisson with mean x + eta,
peak-power input x in [0, A]) is the built-in instantiation.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.special import gammaln

from .dmc_capacity import SolverError, _newton_cost_multipliers, dual_F
from .numkit import LOG2E, entropy_bits, project_l2_ball, xlog2x
from .quadrature import gauss_legendre


# ---------------------------------------------------------------------------
# channel descriptions
# ---------------------------------------------------------------------------

class CountableOutputChannel:
    """Channel from a compact real interval into {0, 1, 2, ...}.

    ``kernel(i, x)`` returns W(i|x), vectorized over an array x.
    ``lipschitz_L`` bounds |d/dx W(i|x)| uniformly in i.
    """

    def __init__(self, kernel, input_interval, lipschitz_L):
        self.kernel = kernel
        a, b = float(input_interval[0]), float(input_interval[1])
        if not b > a:
            raise ValueError("input interval is empty")
        self.input_interval = (a, b)
        self.lipschitz_L = float(lipschitz_L)

    @property
    def measure(self):
        a, b = self.input_interval
        return b - a

    def rows(self, xs, M):
        """Matrix of W(i|x) for the sampled inputs xs and i < M."""
        xs = np.asarray(xs, dtype=float)
        return np.column_stack([self.kernel(i, xs) for i in range(M)])

    def check_mass(self, i_max, n_grid=257, tol=1e-9):
        """Verify that partial output sums stay <= 1 + tol on a grid."""
        a, b = self.input_interval
        xs = np.linspace(a, b, n_grid)
        total = self.rows(xs, i_max).sum(axis=1)
        if np.any(total > 1.0 + tol):
            raise ValueError(f"output mass exceeds 1 by {total.max() - 1.0:.3g}")
        return float(total.min())


@dataclass(frozen=True)
class PoissonChannelSpec:
    """Peak power A > 0 and dark current eta >= 0 of a Poisson channel."""

    A: float
    eta: float = 0.0

    def __post_init__(self):
        if self.A <= 0.0:
            raise ValueError("peak power A must be positive")
        if self.eta < 0.0:
            raise ValueError("dark current eta must be nonnegative")

    def pmf(self, i, xs):
        """W(i|x) = e^{-(x+eta)} (x+eta)^i / i!, vectorized over xs."""
        t = np.asarray(xs, dtype=float) + self.eta
        out = np.zeros_like(t)
        pos = t > 0.0
        out[pos] = np.exp(-t[pos] + i * np.log(t[pos]) - gammaln(i + 1))
        if i == 0:
            out[~pos] = 1.0
        return out

    def sup_pmf(self, i):
        """sup over x in [0, A] of W(i|x), from the unimodality in x."""
        t = min(max(float(i), self.eta), self.A + self.eta)
        if t == 0.0:
            return 1.0 if i == 0 else 0.0
        return math.exp(-t + i * math.log(t) - gammaln(i + 1))

    def channel(self):
        peak = max(self.sup_pmf(i) for i in range(int(math.ceil(self.A + self.eta)) + 3))
        # |d/dx W(i|x)| = |W(i-1|x) - W(i|x)| <= max_j sup_x W(j|x)
        return CountableOutputChannel(self.pmf, (0.0, self.A), lipschitz_L=peak)


class TruncatedChannel:
    """M-truncated version of a countable-output channel.

    The tail mass sum_{j >= M} W(j|x) is spread uniformly over the outputs
    0..M-1, so every row is an exact probability vector.  gamma_M is the
    smallest folded entry seen on the certification grid, shrunk by a 0.99
    safety factor (the infimum over the continuum is not certified).
    """

    def __init__(self, channel, M, grid=None):
        if M < 1:
            raise ValueError("truncation level M must be >= 1")
        self.channel = channel
        self.M = int(M)
        a, b = channel.input_interval
        if grid is None:
            grid, _ = gauss_legendre(a, b)
            grid = np.concatenate(([a], grid, [b]))
        rows = self.rows(np.asarray(grid, dtype=float))
        self.gamma_M = 0.99 * float(rows.min())

    @property
    def input_interval(self):
        return self.channel.input_interval

    @property
    def measure(self):
        return self.channel.measure

    def rows(self, xs):
        """Folded transition rows W_M(.|x); each sums to 1 exactly."""
        K = self.channel.rows(xs, self.M)
        tail = 1.0 - K.sum(axis=1)
        if np.any(tail < -1e-8):
            raise ValueError(f"kernel mass exceeds 1 by {-tail.min():.3g}")
        K = K + np.maximum(tail, 0.0)[:, None] / self.M
        return K / K.sum(axis=1, keepdims=True)

    def row_entropies(self, xs):
        return -xlog2x(self.rows(xs)).sum(axis=1)


def truncate_kernel(channel, M, grid=None):
    """Fold all output mass from level M upward uniformly into 0..M-1."""
    return TruncatedChannel(channel, M, grid=grid)


# ---------------------------------------------------------------------------
# tail bounds and truncation error
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TailBound:
    """Bound on the k-th order polynomial tail R_k(M) of a channel."""

    k: float
    M: int
    Rk: float
    alpha: float
    series: float = None  # directly summed tail, when available

    def __post_init__(self):
        if self.series is not None and not self.Rk >= self.series * (1.0 - 1e-12):
            raise SolverError("analytic tail bound fell below the summed series")


def _poisson_tail_series(spec, k, M, rel_tol=1e-16, max_terms=100000):
    """sum_{i >= M} (sup_x W(i|x))^k summed to numerical convergence."""
    total = 0.0
    for i in range(M, M + max_terms):
        term = spec.sup_pmf(i) ** k
        total += term
        if term <= rel_tol * total:
            break
    return total


def poisson_tail_bound(spec, k, M):
    """Analytic k-polynomial tail bound for the Poisson channel.

    Valid for M >= A + eta:  R_k(M) <= (alpha e^{(alpha-1)(A+eta)}
    (A+eta)^M / M!)^k with alpha = 2^{1/k - 1}.  The factorial is handled
    through log-gamma, and the directly summed series is attached as a
    consistency floor.
    """
    if not 0.0 < k <= 1.0:
        raise ValueError("tail order k must lie in (0, 1]")
    lam = spec.A + spec.eta
    if M < lam:
        raise ValueError(f"tail bound needs M >= A + eta = {lam}")
    alpha = 2.0 ** (1.0 / k - 1.0)
    log_bound = k * (math.log(alpha) + (alpha - 1.0) * lam + M * math.log(lam) - gammaln(M + 1))
    bound = math.exp(log_bound)
    series = _poisson_tail_series(spec, k, M)
    return TailBound(k=k, M=int(M), Rk=bound, alpha=alpha, series=series)


def mi_truncation_error(k, M, R1, Rk):
    """Uniform |I(p, W) - I(p, W_M)| bound from the tail orders 1 and k."""
    if not 0.0 < k < 1.0:
        raise ValueError("truncation error formula needs k in (0, 1)")
    if R1 < 0.0 or Rk < 0.0:
        raise ValueError("tail bounds must be nonnegative")
    return 2.0 * LOG2E / (math.e * (1.0 - k)) * (M ** (1.0 - k) * R1 ** k + Rk)


def choose_truncation(spec, k, target, iteration_budget=None, max_level=10000):
    """Smallest truncation level M whose mutual-information truncation
    error is at most target/2, found by bisection over the monotone E(M).

    The validity floor is M = ceil(A + eta).  ``iteration_budget`` is
    accepted for interface symmetry with the solver but does not move the
    tail-driven choice.
    """
    if target <= 0.0:
        raise ValueError("target must be positive")

    def err(M):
        r1 = poisson_tail_bound(spec, 1.0, M).Rk
        rk = poisson_tail_bound(spec, k, M).Rk
        return mi_truncation_error(k, M, r1, rk)

    lo = int(math.ceil(spec.A + spec.eta))
    lo = max(lo, 1)
    if err(lo) <= target / 2.0:
        return lo
    hi = lo
    while err(hi) > target / 2.0:
        hi *= 2
        if hi > max_level:
            raise ValueError(f"no truncation level <= {max_level} reaches target {target}")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if err(mid) <= target / 2.0:
            hi = mid
        else:
            lo = mid
    return hi


def lapidoth_moser_lb(A, eta):
    """Closed-form peak-power capacity lower bound for the Poisson channel."""
    if A <= 0.0:
        raise ValueError("peak power A must be positive")
    if eta < 0.0:
        raise ValueError("dark current eta must be nonnegative")
    v = (0.5 * math.log(A)
         + (A / 3.0 + 1.0) * math.log(1.0 + 3.0 / A)
         - 1.0
         - math.sqrt((eta + 1.0 / 12.0) / A) * (math.pi / 4.0 + 0.5 * math.log(2.0))
         - 0.5 * math.log(math.pi * math.e / 2.0))
    return v / math.log(2.0)


# ---------------------------------------------------------------------------
# average-power machinery (uniform-approximation slack iota)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IotaConstants:
    """Constants of the uniform smoothing slack iota(nu) under an
    average-power constraint; None-valued when the budget S is degenerate
    (equal to the min or max of the cost on the input set)."""

    L_f: float
    L_s: float
    rho: float
    s_lo: float
    s_hi: float
    T1: float
    T2: float
    mu_lo: float
    mu_hi: float

    @classmethod
    def build(cls, trunc, L_s, s_min, s_max, S):
        s_lo = -S + s_min
        s_hi = -S + s_max
        if s_lo >= 0.0 or s_hi <= 0.0:
            return None
        L = trunc.channel.lipschitz_L
        M = trunc.M
        lg = max(math.log2(1.0 / trunc.gamma_M), LOG2E)
        L_f = L * M * M * lg + M * L * abs(math.log2(1.0 / trunc.gamma_M) - LOG2E)
        rho = trunc.measure
        mu_lo = 2.0 / (-s_lo) * math.log2(max(2.0 * L_s * rho / (-s_lo), 1.0))
        mu_hi = 2.0 / s_hi * math.log2(max(2.0 * L_s * rho / s_hi, 1.0))
        T1 = L_f * rho + 2.0 * L_f * L_s * rho * rho * max(1.0 / (-s_lo), 1.0 / s_hi)
        T2 = L_s * rho * max(mu_lo, mu_hi)
        return cls(L_f=L_f, L_s=L_s, rho=rho, s_lo=s_lo, s_hi=s_hi,
                   T1=T1, T2=T2, mu_lo=mu_lo, mu_hi=mu_hi)

    def iota(self, nu):
        if self.T2 >= 1.0 or (self.T2 < 1.0 and nu < self.T1 / (1.0 - self.T2)):
            return nu * (math.log2(self.T1 / nu + self.T2) + 1.0)
        return nu


@dataclass(frozen=True)
class AveragePowerConstraint:
    """Average-power constraint E[s(X)] = S with a Lipschitz cost s."""

    s: object  # callable x -> cost, vectorized
    S: float
    lipschitz_L: float


# ---------------------------------------------------------------------------
# smoothed dual on a quadrature grid
# ---------------------------------------------------------------------------

class _QuadKernel:
    """Truncated kernel sampled on a fixed quadrature rule."""

    def __init__(self, trunc, nodes_per_unit=64):
        a, b = trunc.input_interval
        self.xs, self.ws = gauss_legendre(a, b, nodes_per_unit=nodes_per_unit)
        self.K = trunc.rows(self.xs)
        self.r = -xlog2x(self.K).sum(axis=1)
        self.rho = trunc.measure


def _smoothed_dual_on_grid(quad, lam, nu, cost=None, mu0=None):
    """G_nu value, gradient, input density on the nodes, and warm-start
    multipliers, all per the exponent-shifted closed form."""
    f = quad.K @ np.asarray(lam, dtype=float) - quad.r
    log_rho = math.log2(quad.rho)
    if cost is None:
        m = f.max()
        u = np.exp2((f - m) / nu)
        I0 = float(quad.ws @ u)
        density = u / I0
        value = m + nu * (math.log2(I0) - log_rho)
        grad = (quad.ws * density) @ quad.K
        return value, grad, density, None
    s_nodes = cost.s(quad.xs)
    density, mu, _ = _newton_cost_multipliers(f / nu, s_nodes, cost.S,
                                              mu0=mu0, weights=quad.ws)
    mass = quad.ws * density
    total = mass.sum()
    density = density / total
    mass = mass / total
    h = -float(mass @ np.where(density > 0, np.log2(np.maximum(density, 1e-300)), 0.0))
    value = float(mass @ f) + nu * (h - log_rho)
    return value, mass @ quad.K, density, mu


def smoothed_dual_cts(trunc, lam, nu, quad=None, cost=None, nodes_per_unit=64):
    """Value and gradient of the smoothed input part G_nu for a truncated
    continuous-input channel.

    With no average-power constraint the closed form
    nu*log2( integral 2^{(W lambda - r)/nu} dx ) - nu*log2(rho) is used;
    with one, the two Gibbs multipliers are solved by Newton on quadrature
    moments first.  All exponentials are shifted by the running maximum.
    """
    if nu <= 0.0:
        raise ValueError("smoothing parameter must be positive")
    if quad is None:
        quad = _QuadKernel(trunc, nodes_per_unit=nodes_per_unit)
    value, grad, _, _ = _smoothed_dual_on_grid(quad, lam, nu, cost=cost)
    return value, grad


def _dual_G_fine(trunc, lam, cost=None, n_fine=4096):
    """Exact input part sup_p <p, W lambda - r>, certified on a fine grid.

    Peak-power only: the supremum over densities is the maximum of the
    score function.  With an average-power constraint it is a two-point
    linear program over grid masses.
    """
    a, b = trunc.input_interval
    xs = np.linspace(a, b, n_fine)
    f = trunc.rows(xs) @ np.asarray(lam, dtype=float) - trunc.row_entropies(xs)
    if cost is None:
        return float(f.max())
    s_nodes = cost.s(xs)
    res = linprog(-f, A_eq=[np.ones_like(f), s_nodes], b_eq=[1.0, cost.S],
                  bounds=[(0, None)] * f.size, method="highs")
    if not res.success:
        raise SolverError(f"fine-grid dual LP failed: {res.message}")
    return float(-res.fun)


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CtsSolveConfig:
    """Iteration budget and discretization knobs for the continuous solver.

    ``nu`` defaults to 2/(n+1)*sqrt(D1/D2) with D2 = log2(#quadrature
    nodes), the finite-input reading of the smoothing schedule; pass an
    explicit value to reproduce a specific run.  ``eps`` adds an
    a-posteriori stop on the duality gap.
    """

    n: int = 40000
    nu: float = None
    eps: float = None
    k: float = 0.5
    nodes_per_unit: int = 64
    fine_nodes: int = 4096
    check_every: int = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if self.nu is not None and self.nu <= 0:
            raise ValueError("nu must be positive")


@dataclass(frozen=True)
class ContinuousCapacityBounds:
    """Two-sided capacity bounds for the untruncated channel.

    lower/upper come from the dual value F+G, the primal mutual
    information I(p_hat, W_M) and the truncation error E via
    [2I - (F+G) - E,  2(F+G) - I + E].
    """

    lower: float
    upper: float
    truncation_error: float
    posterior_gap: float
    M: int
    nu: float
    iterations: int
    quadrature_nodes: int
    dual_value: float            # F + G at lambda_hat
    primal_value: float          # I(p_hat, W_M)
    lambda_hat: np.ndarray = field(repr=False)
    input_nodes: np.ndarray = field(repr=False)
    input_density: np.ndarray = field(repr=False)
    aux_upper: float = None      # F + G_nu + iota(nu), average-power runs only
    trace: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if not self.lower <= self.upper + 1e-9:
            raise SolverError("bounds crossed")
        if self.truncation_error < 0.0:
            raise SolverError("negative truncation error")

    def to_dict(self):
        return {
            "lower": self.lower,
            "upper": self.upper,
            "truncation_error": self.truncation_error,
            "posterior_gap": self.posterior_gap,
            "M": self.M,
            "nu": self.nu,
            "iterations": self.iterations,
            "quadrature_nodes": self.quadrature_nodes,
            "dual_value": self.dual_value,
            "primal_value": self.primal_value,
            "aux_upper": self.aux_upper,
            "lambda_hat": [float(v) for v in self.lambda_hat],
        }


def _generic_truncation_error(channel, k, M, n_grid=2048, max_terms=20000):
    """Tail orders summed numerically with the sup taken over a grid."""
    a, b = channel.input_interval
    xs = np.linspace(a, b, n_grid)

    def series(kk):
        total = 0.0
        for i in range(M, M + max_terms):
            term = float(channel.kernel(i, xs).max()) ** kk
            total += term
            if term <= 1e-16 * total and i > M + 4:
                break
        return total

    return mi_truncation_error(k, M, series(1.0), series(k))


def solve_capacity_cts(spec, M, config=CtsSolveConfig(), cost=None):
    """Capacity sandwich for a continuous-input countable-output channel.

    ``spec`` is a PoissonChannelSpec (analytic tail bounds), a
    CountableOutputChannel (grid-summed tails) or an already-truncated
    channel (pass the truncation error explicitly through a
    PoissonChannelSpec instead for certified output).  Runs the smoothed
    dual fast-gradient scheme over the dual ball of the truncated channel.
    """
    if isinstance(spec, PoissonChannelSpec):
        channel = spec.channel()
        r1 = poisson_tail_bound(spec, 1.0, M).Rk
        rk = poisson_tail_bound(spec, config.k, M).Rk
        E = mi_truncation_error(config.k, M, r1, rk)
    elif isinstance(spec, CountableOutputChannel):
        channel = spec
        E = _generic_truncation_error(channel, config.k, M)
    else:
        raise TypeError("spec must be a PoissonChannelSpec or CountableOutputChannel")

    trunc = truncate_kernel(channel, M)
    if trunc.gamma_M <= 0.0:
        raise SolverError("truncated channel has gamma_M = 0; increase M or check the kernel")
    quad = _QuadKernel(trunc, nodes_per_unit=config.nodes_per_unit)

    R = M * max(math.log2(1.0 / trunc.gamma_M), LOG2E)
    D1 = 0.5 * R * R
    nu = config.nu
    if nu is None:
        D2 = math.log2(quad.xs.size)
        nu = 2.0 / (config.n + 1) * math.sqrt(D1 / D2)
    L = 1.0 + 1.0 / nu
    check_every = config.check_every or max(100, config.n // 100)
    eps_stop = config.eps

    iota_consts = aux_upper = None
    if cost is not None:
        s_fine = cost.s(np.linspace(*trunc.input_interval, config.fine_nodes))
        if not s_fine.min() - 1e-12 <= cost.S <= s_fine.max() + 1e-12:
            raise ValueError("average power budget outside the reachable cost range")
        iota_consts = IotaConstants.build(trunc, cost.lipschitz_L,
                                          float(s_fine.min()), float(s_fine.max()), cost.S)

    x = np.zeros(M)
    grad_sum = np.zeros(M)
    dens_sum = np.zeros(quad.xs.size)
    q_sum = np.zeros(M)
    nr_sum = 0.0           # running sum of weights * <p_k, r>
    weight_sum = 0.0
    mu_warm = None
    trace = []
    y = x
    fg = mi = gap = None
    gnu_hat = None

    for k in range(config.n + 1):
        gnu, gG, density, mu_warm = _smoothed_dual_on_grid(quad, x, nu, cost=cost, mu0=mu_warm)
        _, gF = dual_F(x)
        grad = gF + gG
        if not np.all(np.isfinite(grad)):
            raise SolverError(f"non-finite gradient at iteration {k}")
        y = project_l2_ball(x - grad / L, R)
        grad_sum += (k + 1) / 2.0 * grad
        z = project_l2_ball(-grad_sum / L, R)
        x = (2.0 / (k + 3)) * z + ((k + 1) / (k + 3)) * y

        wk = k + 1
        dens_sum += wk * density
        q_sum += wk * gG
        nr_sum += wk * float((quad.ws * density) @ quad.r)
        weight_sum += wk

        last = k == config.n
        if last or (k + 1) % check_every == 0:
            q_hat = q_sum / weight_sum
            q_hat = q_hat / q_hat.sum()
            fval, _ = dual_F(y)
            fg = fval + _dual_G_fine(trunc, y, cost=cost, n_fine=config.fine_nodes)
            mi = -nr_sum / weight_sum + entropy_bits(q_hat)
            gap = fg - mi
            trace.append((k, fg, mi, gap))
            if last or (eps_stop is not None and gap <= eps_stop):
                if cost is not None and iota_consts is not None:
                    gnu_hat, _, _, _ = _smoothed_dual_on_grid(quad, y, nu, cost=cost, mu0=mu_warm)
                    aux_upper = fval + gnu_hat + iota_consts.iota(nu)
                break

    density_hat = dens_sum / weight_sum
    return ContinuousCapacityBounds(
        lower=float(2.0 * mi - fg - E),
        upper=float(2.0 * fg - mi + E),
        truncation_error=float(E),
        posterior_gap=float(gap),
        M=M,
        nu=float(nu),
        iterations=k + 1,
        quadrature_nodes=int(quad.xs.size),
        dual_value=float(fg),
        primal_value=float(mi),
        lambda_hat=y,
        input_nodes=quad.xs,
        input_density=density_hat,
        aux_upper=None if aux_upper is None else float(aux_upper),
        trace=tuple(trace),
    )
