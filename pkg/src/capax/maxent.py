"""Relative-entropy minimization under noisy moment constraints.

Estimates the distribution closest (in relative entropy) to a reference
measure among all distributions whose first few monomial moments fall in
a box around observed values.  The dual is made smooth and strongly
concave by a double smoothing (box-projection prox plus a quadratic
regularizer) and solved with a fast gradient method; the Gibbs form of
the primal optimizer is reconstructed from the dual iterate and certified
a posteriori by its feasibility distance.

Supports a continuous interval carrier (quadrature integration, uniform
reference) and a finite point carrier (exact sums, arbitrary reference
weights with full support).  Internally every problem is rescaled so the
carrier lies in [-1, 1]; moment boxes transform diagonally under that
pure scaling, so the box geometry is preserved.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .dmc_capacity import SolverError
from .numkit import project_box
from .quadrature import gauss_legendre


# ---------------------------------------------------------------------------
# problem data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TargetBox:
    """Axis-aligned moment box T = x[lo_i, hi_i]."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if np.any(lo > hi):
            raise ValueError("target box has lo > hi")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def project(self, x):
        return project_box(x, self.lo, self.hi)

    def support(self, z):
        """sigma_T(z) = max_{x in T} <x, z>."""
        c = 0.5 * (self.lo + self.hi)
        r = 0.5 * (self.hi - self.lo)
        z = np.asarray(z, dtype=float)
        return float(c @ z + r @ np.abs(z))

    def distance(self, x):
        return float(np.linalg.norm(np.asarray(x, dtype=float) - self.project(x)))

    def corner_norm(self):
        """max_{x in T} ||x||_2, attained at a corner."""
        return float(np.linalg.norm(np.maximum(np.abs(self.lo), np.abs(self.hi))))


class MomentData:
    """Observed monomial moments y_i = <mu, x^i> +- u_i on a known carrier.

    Build with ``MomentData.continuous`` (interval support, uniform
    reference) or ``MomentData.finite`` (point support, reference weights).
    """

    def __init__(self, y, u, kind, points=None, interval=None, reference=None,
                 quad_nodes=256):
        y = np.asarray(y, dtype=float)
        u = np.asarray(u, dtype=float)
        if y.shape != u.shape or y.ndim != 1 or y.size == 0:
            raise ValueError("moments and radii must be matching nonempty vectors")
        if np.any(u < 0.0):
            raise ValueError("uncertainty radii must be nonnegative")
        self.y = y
        self.u = u
        self.n_moments = y.size
        self.kind = kind

        if kind == "finite":
            pts = np.asarray(points, dtype=float)
            ref = np.full(pts.size, 1.0 / pts.size) if reference is None \
                else np.asarray(reference, dtype=float)
            if ref.shape != pts.shape:
                raise ValueError("reference weights do not match support points")
            if np.any(ref <= 0.0):
                raise ValueError("reference weights must have full support")
            ref = ref / ref.sum()
            self.points = pts
            self.reference = ref
            self.B = float(np.abs(pts).max())
            scale = max(self.B, 1.0)
            self._t = pts / scale
            self._log_ref = np.log2(ref)
        elif kind == "continuous":
            a, b = float(interval[0]), float(interval[1])
            if not b > a:
                raise ValueError("empty support interval")
            self.interval = (a, b)
            self.B = max(abs(a), abs(b))
            scale = max(self.B, 1.0)
            xs, ws = gauss_legendre(a, b, nodes_per_unit=max(quad_nodes, 8),
                                    min_nodes=max(quad_nodes, 8))
            self._t = xs / scale
            # log2 of the uniform reference measure of each node
            self._log_ref = np.log2(ws / (b - a))
            self.reference = None
        else:
            raise ValueError(f"unknown support kind {kind!r}")

        self.scale = scale
        powers = np.arange(1, self.n_moments + 1)
        self._scale_pow = scale ** powers.astype(float)
        self._phi = self._t[None, :] ** powers[:, None]     # (Mm, nodes)
        self.box = TargetBox(lo=(y - u) / self._scale_pow, hi=(y + u) / self._scale_pow)
        self.norm_A = float(np.sum(np.maximum(np.abs(self._t).max(), 0.0) ** powers))

    @classmethod
    def continuous(cls, y, u, interval=(0.0, 1.0), quad_nodes=256):
        return cls(y, u, "continuous", interval=interval, quad_nodes=quad_nodes)

    @classmethod
    def finite(cls, y, u, points, reference=None):
        return cls(y, u, "finite", points=np.asarray(points, dtype=float),
                   reference=reference)

    # -- scaled-domain primitives ------------------------------------------

    def gibbs(self, z):
        """Weights of the Gibbs measure mu_z ~ 2^{-A*z} nu on the carrier
        nodes (scaled domain) and -log2 of its normalizer."""
        e = self._log_ref - z @ self._phi
        m = e.max()
        w = np.exp2(e - m)
        Z = float(w.sum())
        return w / Z, -(m + math.log2(Z))

    def moments_scaled(self, weights):
        return self._phi @ weights

    def kl_bits(self, weights):
        """KL(mu || nu) in bits for carrier weights against the reference."""
        e = np.zeros_like(weights)
        pos = weights > 0.0
        e[pos] = weights[pos] * (np.log2(weights[pos]) - self._log_ref[pos])
        return float(e.sum())

    def moments_original(self, weights):
        return self.moments_scaled(weights) * self._scale_pow


# ---------------------------------------------------------------------------
# Gibbs minimizer (finite carrier, exposed; the solver uses MomentData.gibbs)
# ---------------------------------------------------------------------------

def gibbs_minimizer(c, reference=None):
    """Unique minimizer of KL(mu || nu) - <mu, c> over distributions on a
    finite carrier: weights proportional to nu_i 2^{c_i}.

    Returns (weights, optimal_value) with the value -log2 sum nu_i 2^{c_i}.
    """
    c = np.asarray(c, dtype=float)
    if not np.all(np.isfinite(c)):
        raise ValueError("score vector must be finite")
    ref = np.full(c.size, 1.0 / c.size) if reference is None \
        else np.asarray(reference, dtype=float) / np.sum(reference)
    e = np.log2(ref) + c
    m = e.max()
    w = np.exp2(e - m)
    Z = float(w.sum())
    return w / Z, float(-(m + math.log2(Z)))


# ---------------------------------------------------------------------------
# smoothed dual
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SmoothingEta:
    """Double-smoothing parameters and the derived Lipschitz constant.

    eta1 = eps/(4 D) with D = max_{x in T} ||x||_2 / 2, eta2 = eps
    delta^2/(2 C^2); L = 1/eta1 + ||A||^2 + eta2.  N1/N2 are the a-priori
    iteration counts guaranteeing eps-optimality.
    """

    eta1: float
    eta2: float
    L: float
    N1: float
    N2: float
    eps: float
    C: float
    delta: float
    D: float
    norm_A: float

    @classmethod
    def for_target(cls, eps, C, delta, D, norm_A):
        if min(eps, C, delta, D) <= 0.0:
            raise ValueError("eps, C, delta, D must be positive")
        eta1 = eps / (4.0 * D)
        eta2 = eps * delta * delta / (2.0 * C * C)
        L = 1.0 / eta1 + norm_A * norm_A + eta2
        root = math.sqrt(8.0 * D * C * C / (eps * eps * delta * delta)
                         + 2.0 * norm_A * norm_A * C * C / (eps * delta * delta) + 1.0)
        N1 = 2.0 * root * math.log(10.0 * (eps + 2.0 * C) / eps)
        N2 = 2.0 * root * math.log(
            C / (eps * delta * (2.0 - math.sqrt(3.0)))
            * math.sqrt(4.0 * (4.0 * D / eps + norm_A * norm_A + eta2) * (C + eps / 2.0)))
        return cls(eta1=eta1, eta2=eta2, L=L, N1=N1, N2=N2, eps=eps,
                   C=C, delta=delta, D=D, norm_A=norm_A)

    def iterations(self):
        return int(math.ceil(max(self.N1, self.N2, 1.0)))


def smoothed_dual(z, data, eta):
    """Value and gradient of the double-smoothed dual F_eta at z.

    The box part has the exact prox maximizer pi_T(z/eta1); the measure
    part is the Gibbs minimizer for score -A*z, its moments integrated on
    the carrier with the running-maximum exponent shift.
    """
    z = np.asarray(z, dtype=float)
    x_star = data.box.project(z / eta.eta1)
    w, neg_logZ = data.gibbs(z)
    moments = data.moments_scaled(w)
    value = (-(float(x_star @ z) - 0.5 * eta.eta1 * float(x_star @ x_star))
             + neg_logZ - 0.5 * eta.eta2 * float(z @ z))
    grad = -x_star + moments - eta.eta2 * z
    return value, grad


def dual_value(z, data):
    """Unsmoothed dual F(z) = -sigma_T(z) - log2 integral 2^{-A*z} d nu."""
    z = np.asarray(z, dtype=float)
    _, neg_logZ = data.gibbs(z)
    return -data.box.support(z) + neg_logZ


def fast_gradient_sc(data, eta, z0, iters):
    """Fast gradient ascent for the smooth, strongly concave F_eta.

    y_{k+1} = w_k + grad F_eta(w_k)/L;  w_{k+1} = y_{k+1} +
    ((sqrt L - sqrt eta2)/(sqrt L + sqrt eta2)) (y_{k+1} - y_k).
    Returns the iterate sequence [y_0, ..., y_iters].
    """
    if iters < 1:
        raise ValueError("need at least one iteration")
    q = (math.sqrt(eta.L) - math.sqrt(eta.eta2)) / (math.sqrt(eta.L) + math.sqrt(eta.eta2))
    y = np.asarray(z0, dtype=float).copy()
    w = y.copy()
    ys = [y.copy()]
    for _ in range(iters):
        _, g = smoothed_dual(w, data, eta)
        if not np.all(np.isfinite(g)):
            raise SolverError("non-finite dual iterate")
        y_next = w + g / eta.L
        w = y_next + q * (y_next - y)
        y = y_next
        ys.append(y.copy())
    return np.array(ys)


# ---------------------------------------------------------------------------
# Slater point
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SlaterCertificate:
    """Strictly feasible polynomial density with its dual-bound constants.

    ``alpha`` are the coefficients on the scaled carrier [0, 1]; C is the
    relative entropy of the density against the reference, delta the
    distance of its moments to the boundary of the target box (0 when the
    box has no interior).
    """

    alpha: np.ndarray
    degree: int
    C: float
    delta: float
    margin: float

    @property
    def has_interior(self):
        return self.delta > 0.0

    def density(self, t):
        return np.polynomial.polynomial.polyval(np.asarray(t, dtype=float), self.alpha)


def slater_point(data, r, n_grid=1024, margin_floor=1e-6, max_degree=25):
    """Strictly feasible polynomial density for a [0, 1]-carrier problem.

    Solves the linear system pairing the Hilbert-type moment matrix with
    the observed moments, subject to positivity of the polynomial on a
    dense grid; the margin (minimum grid value) is maximized by a linear
    program, and the degree is raised by 2 on infeasibility up to
    ``max_degree``.
    """
    if data.kind != "continuous":
        raise ValueError("Slater construction applies to continuous carriers")
    a, b = data.interval
    if abs(a / data.scale) > 1e-12 or abs(b / data.scale - 1.0) > 1e-12:
        raise ValueError("Slater construction requires a carrier scaled to [0, 1]")
    Mm = data.n_moments
    y_scaled = data.y / data._scale_pow
    beta = np.concatenate(([1.0], y_scaled))
    grid = np.linspace(0.0, 1.0, n_grid)
    if r < Mm + 1:
        raise ValueError(f"polynomial needs at least {Mm + 1} coefficients")

    degree = r
    while degree <= max_degree:
        A = np.array([[1.0 / (i + j + 1) for j in range(degree)] for i in range(Mm + 1)])
        V = np.vander(grid, degree, increasing=True)
        # variables (alpha, t): maximize the positivity margin t
        c_obj = np.zeros(degree + 1)
        c_obj[-1] = -1.0
        A_ub = np.hstack([-V, np.ones((n_grid, 1))])
        A_eq = np.hstack([A, np.zeros((Mm + 1, 1))])
        res = linprog(c_obj, A_ub=A_ub, b_ub=np.zeros(n_grid), A_eq=A_eq, b_eq=beta,
                      bounds=[(None, None)] * (degree + 1), method="highs")
        if res.success and res.x[-1] >= margin_floor:
            alpha = res.x[:degree]
            xs, ws = gauss_legendre(0.0, 1.0, nodes_per_unit=256, min_nodes=256)
            p = np.polynomial.polynomial.polyval(xs, alpha)
            C = float(np.sum(ws * p * np.log2(np.maximum(p, 1e-300))))
            moments = A[1:] @ alpha
            u_scaled = data.u / data._scale_pow
            delta = float(np.min(u_scaled - np.abs(moments - y_scaled)))
            return SlaterCertificate(alpha=alpha, degree=degree, C=C,
                                     delta=max(delta, 0.0), margin=float(res.x[-1]))
        degree += 2
    raise SolverError(f"no strictly positive polynomial density up to degree {max_degree}")


# ---------------------------------------------------------------------------
# main solver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MaxEntResult:
    """Gibbs estimate with dual value and a-posteriori certificates.

    All entropic values are in bits and refer to the minimization form
    J = KL(mu || nu); the thesis-style entropy orientation is the
    negation, available through ``entropy_bounds``.
    """

    z_hat: np.ndarray
    gibbs_coefficients: np.ndarray     # mu_hat ~ 2^{-sum c_i x^i} nu(dx), original units
    kl_value: float
    dual_value: float                  # unsmoothed F(z_hat), lower bound on J*
    feasibility_distance: float        # d(A mu_hat, T) in the scaled moment space
    posterior_upper: float             # kl_value + (C/delta) * feasibility_distance
    moments: np.ndarray                # moments of mu_hat in original units
    iterations: int
    eps: float
    C: float
    delta: float
    apriori_valid: bool
    weights: np.ndarray = field(repr=False, default=None)   # carrier weights of mu_hat
    trace: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if self.kl_value < -1e-9:
            raise SolverError("negative relative entropy")
        if self.dual_value > self.posterior_upper + 1e-9:
            raise SolverError("dual value exceeds the posterior upper bound")

    @property
    def entropy_bounds(self):
        """(lower, upper) bracket of the maximum-entropy value -J*."""
        return -self.posterior_upper, -self.dual_value

    def to_dict(self):
        return {
            "kl_value": self.kl_value,
            "dual_value": self.dual_value,
            "posterior_upper": self.posterior_upper,
            "feasibility_distance": self.feasibility_distance,
            "iterations": self.iterations,
            "eps": self.eps,
            "C": self.C,
            "delta": self.delta,
            "apriori_valid": self.apriori_valid,
            "z_hat": [float(v) for v in self.z_hat],
            "gibbs_coefficients": [float(v) for v in self.gibbs_coefficients],
            "moments": [float(v) for v in self.moments],
        }


def solve_maxent(data, eps, certificate=None, C=None, delta=None, z0=None,
                 stopping="aposteriori", max_iters=None, check_every=None,
                 gtol=None, restart=False):
    """Minimize KL(mu || nu) subject to A mu in T by the double-smoothed
    dual fast gradient method.

    Constants: for a continuous carrier, (C, delta) come from a
    SlaterCertificate; without one the run is downgraded (a-posteriori
    bounds only, ``apriori_valid`` False) using C = 1 bit and delta =
    min positive radius unless overridden.  For a finite carrier C
    defaults to max_i log2(1/nu_i).  When every radius is zero a
    pseudo-delta must be supplied.

    ``gtol`` adds a stationarity stop on ||grad F_eta||; repeated solves
    whose posterior error has a kappa-box floor (moment closure) use it
    together with warm starts.  ``restart`` enables gradient-based
    adaptive restart of the momentum, which accelerates ill-conditioned
    instances dramatically but voids the plain-scheme iteration-count
    guarantee (the a-posteriori certificates are unaffected).
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    apriori_valid = True
    if certificate is not None:
        C = certificate.C if C is None else C
        delta = certificate.delta if delta is None else delta
        if not certificate.has_interior:
            apriori_valid = False
    if C is None:
        if data.kind == "finite":
            C = float(np.max(-np.log2(data.reference)))
        else:
            C = 1.0
            apriori_valid = False
    if delta is None:
        pos = data.u[data.u > 0.0]
        if pos.size == 0:
            raise ValueError("all radii are zero: supply a pseudo delta explicitly")
        delta = float((pos / data._scale_pow[data.u > 0.0]).min())
        if data.kind != "finite":
            apriori_valid = False
    if delta <= 0.0:
        raise ValueError("delta must be positive to set the strong-convexity level")

    D = 0.5 * data.box.corner_norm()
    eta = SmoothingEta.for_target(eps, C, delta, D, data.norm_A)
    n_apriori = eta.iterations()
    if max_iters is None:
        max_iters = n_apriori if stopping == "apriori" else min(n_apriori, 2 * 10 ** 6)
    if check_every is None:
        check_every = max(50, max_iters // 200)

    q = (math.sqrt(eta.L) - math.sqrt(eta.eta2)) / (math.sqrt(eta.L) + math.sqrt(eta.eta2))
    y = np.zeros(data.n_moments) if z0 is None else np.asarray(z0, dtype=float).copy()
    w = y.copy()
    trace = []
    posterior = None

    def assess(z):
        weights, _ = data.gibbs(z)
        kl = data.kl_bits(weights)
        dist = data.box.distance(data.moments_scaled(weights))
        upper = kl + (C / delta) * dist
        lower = dual_value(z, data)
        return weights, kl, dist, upper, lower

    k = 0
    for k in range(1, max_iters + 1):
        _, g = smoothed_dual(w, data, eta)
        if not np.all(np.isfinite(g)):
            raise SolverError(f"non-finite dual iterate at {k}")
        y_next = w + g / eta.L
        if restart and float(g @ (y_next - y)) < 0.0:
            w = y_next.copy()
        else:
            w = y_next + q * (y_next - y)
        y = y_next
        if gtol is not None and float(np.linalg.norm(g)) <= gtol:
            break
        if stopping == "aposteriori" and (k % check_every == 0 or k == max_iters):
            weights, kl, dist, upper, lower = assess(y)
            posterior = upper - lower
            trace.append((k, upper, lower, posterior))
            if posterior <= eps:
                break

    weights, kl, dist, upper, lower = assess(y)
    if not trace or trace[-1][0] != k:
        trace.append((k, upper, lower, upper - lower))
    powers = np.arange(1, data.n_moments + 1)
    return MaxEntResult(
        z_hat=y,
        gibbs_coefficients=y / data.scale ** powers,
        kl_value=float(kl),
        dual_value=float(lower),
        feasibility_distance=float(dist),
        posterior_upper=float(upper),
        moments=data.moments_original(weights),
        iterations=k,
        eps=float(eps),
        C=float(C),
        delta=float(delta),
        apriori_valid=apriori_valid,
        weights=weights,
        trace=tuple(trace),
    )


def posterior_bounds(result, certificate=None):
    """A-posteriori sandwich F(z_hat) <= J* <= KL(mu_hat) + (C/delta) d.

    Returns (lower, upper) for the minimization form J = KL(mu || nu); a
    zero-interior certificate makes the upper bound vacuous (+inf).
    """
    C = result.C
    delta = result.delta
    if certificate is not None:
        C, delta = certificate.C, certificate.delta
    if delta <= 0.0:
        return result.dual_value, math.inf
    return result.dual_value, result.kl_value + (C / delta) * result.feasibility_distance
