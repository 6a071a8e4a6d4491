"""Capacity of discrete memoryless channels with certified error bounds.

The capacity problem max_p I(p, W) is attacked through its dual
min_lambda F(lambda) + G(lambda), where F has the closed form
log2(sum_j 2^{-lambda_j}) and the non-smooth G is replaced by an
entropy-smoothed surrogate G_nu whose gradient is Lipschitz.  A fast
gradient scheme on the dual ball then yields, after n iterations, a dual
upper bound F + G and a primal lower bound I(p_hat, W) whose difference
is controlled both a priori (iteration-count bound) and a posteriori
(computed duality gap).

A Blahut-Arimoto baseline and a perturbation wrapper for channels with
zero entries are included.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .numkit import (
    LOG2E,
    entropy_bits,
    log_sum_exp2,
    mutual_information,
    project_l2_ball,
    row_entropies_bits,
    xlog2x,
)


class SolverError(RuntimeError):
    """Raised when an inner solve (Newton, iteration) fails to converge."""


# ---------------------------------------------------------------------------
# channel and constraint types
# ---------------------------------------------------------------------------

class DiscreteChannel:
    """Row-stochastic N x M transition matrix with cached row entropies.

    ``W[i, j]`` is the probability of output j given input i, ``r[i]`` the
    conditional output entropy of row i in bits, ``gamma`` the smallest
    matrix entry.  Instances are immutable after construction.
    """

    ROW_SUM_TOL = 1e-10

    def __init__(self, W):
        W = np.array(W, dtype=float)
        if W.ndim != 2 or W.size == 0:
            raise ValueError("channel matrix must be a nonempty 2-D array")
        if np.any(W < 0.0):
            i, j = np.argwhere(W < 0.0)[0]
            raise ValueError(f"channel entry ({i},{j}) is negative")
        sums = W.sum(axis=1)
        bad = np.argwhere(np.abs(sums - 1.0) > self.ROW_SUM_TOL)
        if bad.size:
            i = int(bad[0, 0])
            raise ValueError(f"channel row {i} sums to {sums[i]:.12g}, expected 1")
        W.setflags(write=False)
        self.W = W
        self.r = row_entropies_bits(W)
        self.r.setflags(write=False)
        self.gamma = float(W.min())

    @property
    def n_inputs(self):
        return self.W.shape[0]

    @property
    def n_outputs(self):
        return self.W.shape[1]

    @classmethod
    def from_csv(cls, path):
        """Read a channel matrix from a headerless CSV, one row per input."""
        rows = []
        with open(path, newline="") as fh:
            for line in csv.reader(fh):
                if not line or all(not c.strip() for c in line):
                    continue
                try:
                    rows.append([float(c) for c in line])
                except ValueError as exc:
                    raise ValueError(f"non-numeric entry in channel CSV row {len(rows)}") from exc
        if not rows:
            raise ValueError("channel CSV is empty")
        if len({len(row) for row in rows}) != 1:
            raise ValueError("channel CSV rows have unequal lengths")
        return cls(np.array(rows))

    def mutual_information(self, p):
        p = np.asarray(p, dtype=float)
        if p.shape != (self.n_inputs,):
            raise ValueError("input distribution has wrong dimension")
        return float(-self.r @ p + entropy_bits(self.W.T @ p))

    def __repr__(self):
        return f"DiscreteChannel({self.n_inputs}x{self.n_outputs}, gamma={self.gamma:.3g})"


def bsc(crossover):
    """Binary symmetric channel with the given crossover probability."""
    e = float(crossover)
    return DiscreteChannel([[1 - e, e], [e, 1 - e]])


def bec(erasure):
    """Binary erasure channel (2 inputs, 3 outputs); violates gamma > 0."""
    a = float(erasure)
    return DiscreteChannel([[1 - a, a, 0.0], [0.0, a, 1 - a]])


@dataclass(frozen=True)
class InputCostConstraint:
    """Average input cost constraint s^T p (= or <=) S.

    ``mode`` selects whether the budget binds with equality ("eq") or as an
    inequality ("ineq", the default).  In inequality mode the constraint is
    dropped whenever the unconstrained optimizer already satisfies it.
    """

    s: np.ndarray
    S: float
    mode: str = "ineq"

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        s.setflags(write=False)
        object.__setattr__(self, "s", s)
        if np.any(s < 0.0):
            raise ValueError("cost vector must be nonnegative")
        if self.mode not in ("eq", "ineq"):
            raise ValueError(f"unknown cost mode {self.mode!r}")
        if self.S < s.min():
            raise ValueError(f"budget S={self.S} below the cheapest symbol cost {s.min()}")
        if self.mode == "eq" and self.S > s.max():
            raise ValueError(f"equality budget S={self.S} above the dearest symbol cost {s.max()}")


@dataclass(frozen=True)
class DualBall:
    """Centered 2-norm ball known to contain all dual optimizers."""

    radius: float

    @classmethod
    def for_channel(cls, channel):
        if channel.gamma <= 0.0:
            raise ValueError("dual ball requires a channel with gamma > 0")
        M = channel.n_outputs
        return cls(M * max(math.log2(1.0 / channel.gamma), LOG2E))

    def project(self, x):
        return project_l2_ball(x, self.radius)


@dataclass(frozen=True)
class SmoothingSchedule:
    """Iteration budget n with the matched smoothing parameter nu.

    D1 is half the squared dual-ball radius, D2 = log2(N); the matched
    smoothing level is nu = 2/(n+1) * sqrt(D1/D2).
    """

    n: int
    nu: float
    D1: float
    D2: float

    @classmethod
    def for_channel(cls, channel, n, nu=None):
        R = DualBall.for_channel(channel).radius
        D1 = 0.5 * R * R
        D2 = math.log2(channel.n_inputs)
        if nu is None:
            nu = 2.0 / (n + 1) * math.sqrt(D1 / D2)
        return cls(n=int(n), nu=float(nu), D1=D1, D2=D2)

    def apriori_bound(self):
        """Duality-gap guarantee after running the full budget."""
        n1 = self.n + 1
        return 4.0 * math.sqrt(self.D1 * self.D2) / n1 + 4.0 * self.D1 / (n1 * n1)


def iterations_for_gap(eps, D1, D2):
    """Smallest n with 4*sqrt(D1*D2)/(n+1) + 4*D1/(n+1)^2 <= eps."""
    if eps <= 0.0:
        raise ValueError("gap target must be positive")
    # stable root of 4*D1*t^2 + 4*sqrt(D1*D2)*t - eps = 0 in t = 1/(n+1)
    b = 4.0 * math.sqrt(D1 * D2)
    t = 2.0 * eps / (b + math.sqrt(b * b + 16.0 * D1 * eps))
    return max(int(math.ceil(1.0 / t - 1.0)), 1)


@dataclass(frozen=True)
class CapacityCertificate:
    """Two-sided capacity estimate with its a-priori and a-posteriori errors."""

    upper: float
    lower: float
    posterior_gap: float
    apriori_bound: float
    p_hat: np.ndarray
    lambda_hat: np.ndarray
    iterations: int
    trace: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if not self.lower <= self.upper + 1e-9:
            raise SolverError(f"certificate violated: lower {self.lower} > upper {self.upper}")

    def to_dict(self):
        return {
            "upper": self.upper,
            "lower": self.lower,
            "posterior_gap": self.posterior_gap,
            "apriori_bound": self.apriori_bound,
            "iterations": self.iterations,
            "p_hat": [float(v) for v in self.p_hat],
            "lambda_hat": [float(v) for v in self.lambda_hat],
        }


# ---------------------------------------------------------------------------
# dual function pieces
# ---------------------------------------------------------------------------

def _softmax2(scores):
    """Probability vector proportional to 2^scores, computed with a shift."""
    scores = np.asarray(scores, dtype=float)
    w = np.exp2(scores - scores.max())
    return w / w.sum()


def dual_F(lam):
    """Closed-form output part of the dual: value and gradient.

    F(lambda) = log2 sum_j 2^{-lambda_j}; gradient entries sum to -1.
    """
    lam = np.asarray(lam, dtype=float)
    if not np.all(np.isfinite(lam)):
        raise ValueError("non-finite dual vector")
    return log_sum_exp2(-lam), -_softmax2(-lam)


def dual_G(channel, lam, cost=None):
    """Exact input part of the dual: max of (W lambda - r)^T p over feasible p.

    Without a cost constraint this is the maximum component; with one it is
    a linear program over the cost-sliced simplex (first maximal index wins
    ties, which does not affect the value).
    """
    c = channel.W @ np.asarray(lam, dtype=float) - channel.r
    if cost is None:
        return float(c.max())
    N = channel.n_inputs
    a_eq = [np.ones(N)]
    b_eq = [1.0]
    a_ub = None
    b_ub = None
    if cost.mode == "eq":
        a_eq.append(cost.s)
        b_eq.append(cost.S)
    else:
        a_ub = [cost.s]
        b_ub = [cost.S]
    res = linprog(-c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
                  bounds=[(0, None)] * N, method="highs")
    if not res.success:
        raise SolverError(f"dual LP failed: {res.message}")
    return float(-res.fun)


def _newton_cost_multipliers(scores, s, S, mu0=None, weights=None):
    """Find (mu1, mu2) with p_i = 2^{mu1 + scores_i + mu2 s_i} satisfying
    sum_i w_i p_i = 1 and sum_i w_i s_i p_i = S, by damped Newton on the
    strictly concave dual of the inner maximum-entropy problem.

    ``weights`` default to ones (finite support); quadrature weights turn
    the sums into integrals.  ``scores`` may carry any additive constant;
    it is re-shifted here.
    """
    c = np.asarray(scores, dtype=float)
    shift = c.max()
    c = c - shift
    w = np.ones_like(c) if weights is None else np.asarray(weights, dtype=float)
    mu = np.array([-math.log2(float(w.sum())), 0.0]) if mu0 is None else np.array(mu0, dtype=float)

    def parts(m):
        with np.errstate(over="ignore"):
            p = np.exp2(m[0] + c + m[1] * s)
        P = float(w @ p)
        obj = m[0] + S * m[1] - P / math.log(2.0)
        return p, P, obj

    p, P, obj = parts(mu)
    for _ in range(100):
        Ps = float((w * s) @ p)
        g = np.array([1.0 - P, S - Ps])
        res = float(np.abs(g).max())
        if res <= 1e-10:
            return p, mu, res
        Pss = float((w * s * s) @ p)
        H = -math.log(2.0) * np.array([[P, Ps], [Ps, Pss]])
        try:
            step = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError as exc:
            raise SolverError("singular Hessian in cost-multiplier Newton") from exc
        t = 1.0
        while t > 2.0 ** -60:
            p_new, P_new, obj_new = parts(mu + t * step)
            if np.isfinite(obj_new) and obj_new >= obj - 1e-14:
                break
            t *= 0.5
        else:
            raise SolverError(f"Newton line search stalled, residual {res:.3g}")
        mu = mu + t * step
        p, P, obj = p_new, P_new, obj_new
    raise SolverError(f"cost-multiplier Newton did not reach 1e-10, residual {res:.3g}")


def _smoothed_inner(channel, lam, nu, cost=None, mu0=None):
    """Maximizer p_nu(lambda) of the smoothed inner problem and the value
    G_nu(lambda); returns (p, value, mu) with mu the cost multipliers
    (None when the cost constraint is absent or slack)."""
    if nu <= 0.0:
        raise ValueError("smoothing parameter must be positive")
    c = channel.W @ np.asarray(lam, dtype=float) - channel.r
    scores = c / nu
    logN = math.log2(channel.n_inputs)
    if cost is None:
        p = _softmax2(scores)
        value = nu * (log_sum_exp2(scores) - logN)
        return p, value, None
    s, S = cost.s, cost.S
    if cost.mode == "ineq":
        p = _softmax2(scores)
        if float(s @ p) <= S + 1e-12:
            return p, nu * (log_sum_exp2(scores) - logN), None
    p, mu, _ = _newton_cost_multipliers(scores, s, S, mu0=mu0)
    p = p / p.sum()  # remove Newton tolerance residue
    value = float(c @ p) + nu * (entropy_bits(p) - logN)
    return p, value, mu


def smoothed_input_dist(channel, lam, nu, cost=None):
    """Analytic optimizer of the entropy-smoothed inner problem.

    Without cost this is the exponent-shifted softmax of (W lambda - r)/nu;
    with cost the two multipliers are found by Newton's method.
    """
    p, _, _ = _smoothed_inner(channel, lam, nu, cost)
    return p


def smoothed_G(channel, lam, nu, cost=None):
    """Value and gradient of the smoothed input part G_nu."""
    p, value, _ = _smoothed_inner(channel, lam, nu, cost)
    return value, channel.W.T @ p


def posterior_gap(channel, lambda_hat, p_hat, cost=None):
    """Computed duality gap F + G at lambda_hat minus I(p_hat, W).

    Nonnegative (up to roundoff) by weak duality for any feasible pair.
    """
    fval, _ = dual_F(lambda_hat)
    gval = dual_G(channel, lambda_hat, cost)
    return fval + gval - channel.mutual_information(p_hat)


# ---------------------------------------------------------------------------
# main solver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SolveConfig:
    """How to run the dual fast-gradient solve.

    Exactly one of ``n`` (iteration budget) or ``eps`` (gap target) must be
    set; ``eps`` derives the budget from the a-priori bound.  ``stopping``
    is "aposteriori" (default; checks the computed gap every
    ``check_every`` iterations and stops at eps) or "apriori" (always runs
    the full budget).  ``nu`` overrides the matched smoothing level.
    """

    n: int = None
    eps: float = None
    stopping: str = "aposteriori"
    check_every: int = None
    nu: float = None

    def __post_init__(self):
        if (self.n is None) == (self.eps is None):
            raise ValueError("set exactly one of n or eps")
        if self.stopping not in ("aposteriori", "apriori"):
            raise ValueError(f"unknown stopping mode {self.stopping!r}")
        if self.eps is not None and self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.n is not None and self.n < 1:
            raise ValueError("n must be at least 1")


def solve_capacity(channel, cost=None, config=SolveConfig(eps=1e-4)):
    """Certified capacity of a DMC by the smoothed dual fast-gradient scheme.

    Requires gamma > 0; channels with zero entries are rejected (wrap them
    with perturb_and_bound instead).  Returns a CapacityCertificate whose
    [lower, upper] interval contains C(W) and whose posterior gap is
    bounded by the a-priori term.
    """
    if channel.gamma <= 0.0:
        raise ValueError(
            "channel has zero entries (gamma = 0); use perturb_and_bound to "
            "solve a perturbed copy with a sound widening"
        )
    ball = DualBall.for_channel(channel)
    R = ball.radius
    D1 = 0.5 * R * R
    D2 = math.log2(channel.n_inputs)
    if config.n is not None:
        n_design = config.n
    else:
        n_design = iterations_for_gap(config.eps, D1, D2)
    sched = SmoothingSchedule.for_channel(channel, n_design, nu=config.nu)
    nu = sched.nu
    L = 1.0 + 1.0 / nu
    apriori = sched.apriori_bound()
    eps_stop = config.eps if config.eps is not None else apriori
    check_every = config.check_every
    if check_every is None:
        check_every = max(100, n_design // 100)

    M = channel.n_outputs
    W = channel.W
    x = np.zeros(M)
    grad_sum = np.zeros(M)
    p_sum = np.zeros(channel.n_inputs)
    weight_sum = 0.0
    mu_warm = None
    trace = []
    y = x
    upper = lower = gap = None

    for k in range(n_design + 1):
        p_k, _, mu_warm = _smoothed_inner(channel, x, nu, cost, mu0=mu_warm)
        _, gF = dual_F(x)
        grad = gF + W.T @ p_k
        if not np.all(np.isfinite(grad)):
            raise SolverError(f"non-finite gradient at iteration {k}")
        y = ball.project(x - grad / L)
        grad_sum += (k + 1) / 2.0 * grad
        z = ball.project(-grad_sum / L)
        x = (2.0 / (k + 3)) * z + ((k + 1) / (k + 3)) * y
        p_sum += (k + 1) * p_k
        weight_sum += k + 1

        last = k == n_design
        if last or (config.stopping == "aposteriori" and (k + 1) % check_every == 0):
            p_hat = p_sum / weight_sum
            fval, _ = dual_F(y)
            upper = fval + dual_G(channel, y, cost)
            lower = channel.mutual_information(p_hat)
            gap = upper - lower
            trace.append((k, upper, lower, gap))
            if last or gap <= eps_stop:
                break

    return CapacityCertificate(
        upper=float(upper),
        lower=float(lower),
        posterior_gap=float(gap),
        apriori_bound=float(apriori),
        p_hat=p_sum / weight_sum,
        lambda_hat=y,
        iterations=k + 1,
        trace=tuple(trace),
    )


# ---------------------------------------------------------------------------
# Blahut-Arimoto baseline
# ---------------------------------------------------------------------------

def blahut_arimoto(channel, n, cost=None):
    """Classic alternating maximization for C(W), unconstrained case only.

    Returns the (monotonically nondecreasing) sequence of mutual
    informations of the iterates and the final input distribution.  After n
    iterations the last value is within log2(N)/n of the capacity.
    """
    if cost is not None:
        raise ValueError("blahut_arimoto supports only the unconstrained problem")
    if n < 1:
        raise ValueError("need at least one iteration")
    W = channel.W
    N = channel.n_inputs
    logp = np.full(N, -math.log2(N))
    lower_bounds = np.empty(n)
    for t in range(n):
        p = np.exp2(logp - log_sum_exp2(logp))
        q = W.T @ p
        # D(W(.|x) || q) rows; columns with q_j = 0 carry no mass anywhere
        logq = np.where(q > 0.0, np.log2(np.maximum(q, 1e-300)), 0.0)
        d = -channel.r - W @ logq
        lower_bounds[t] = float(p @ d)
        logp = logp + d
    p = np.exp2(logp - log_sum_exp2(logp))
    return lower_bounds, p


# ---------------------------------------------------------------------------
# perturbation wrapper for singular channels
# ---------------------------------------------------------------------------

def perturb_and_bound(channel, eps, config=SolveConfig(eps=1e-4)):
    """Capacity sandwich for a channel that may violate gamma > 0.

    Zero entries are raised to eps and rows renormalized; the perturbed
    channel is solved and its bounds widened by the capacity-continuity
    term 3*Delta*log2(M v N) + 2*eta(Delta), where Delta bounds the
    channel-distance norm by the largest row-wise l1 difference and
    eta(t) = -t log2 t.  The returned interval contains C(W).
    """
    if eps <= 0.0:
        raise ValueError("perturbation eps must be positive")
    W1 = channel.W if isinstance(channel, DiscreteChannel) else np.asarray(channel, float)
    W2 = np.where(W1 == 0.0, eps, W1)
    W2 = W2 / W2.sum(axis=1, keepdims=True)
    delta = float(np.abs(W1 - W2).sum(axis=1).max())
    eta = -delta * math.log2(delta) if delta > 0.0 else 0.0
    widen = 3.0 * delta * math.log2(max(W1.shape)) + 2.0 * eta
    cert = solve_capacity(DiscreteChannel(W2), config=config)
    c_lb = max(cert.lower - widen, 0.0)
    c_ub = cert.upper + widen
    return c_lb, c_ub
