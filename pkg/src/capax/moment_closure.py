"""Zero-information moment closure for reversible dimerization kinetics.

Two monomers form a dimer (rate constant k1, propensity k1*M*(M-1), jump
-2 in the monomer count) and a dimer decays back (rate constant k2,
propensity k2*(S0-M)/2, jump +2), with S0 = M0 + 2*D0 conserved.  The
chemical master equation induces exact linear dynamics on the monomial
moments of M up to a closure order, driven by one moment of the next
order; that moment is supplied by the maximum-entropy distribution
consistent with the tracked moments (within a regularization box kappa).

The propensity convention is k1*M*(M-1), not k1*M*(M-1)/2; both occur in
the literature, and this is the one that matches the displayed moment
matrices.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import maxent


class ClosureError(RuntimeError):
    """Raised when the tracked moments admit no distribution within kappa."""


class IntegrationError(RuntimeError):
    """Raised when a moment trajectory violates its invariants mid-run."""


@dataclass(frozen=True)
class DimerizationModel:
    """Rate constants and initial counts; S0 = M0 + 2*D0 is conserved."""

    k1: float
    k2: float
    M0: int
    D0: int

    def __post_init__(self):
        if self.k1 < 0.0 or self.k2 < 0.0 or self.k1 + self.k2 == 0.0:
            raise ValueError("rate constants must be nonnegative and not both zero")
        if self.M0 < 0 or self.D0 < 0 or self.M0 != int(self.M0) or self.D0 != int(self.D0):
            raise ValueError("initial counts must be nonnegative integers")

    @property
    def S0(self):
        return int(self.M0 + 2 * self.D0)

    def support(self, parity=False):
        """Monomer counts the closure distribution may occupy."""
        if parity:
            first = self.S0 % 2
            return np.arange(first, self.S0 + 1, 2, dtype=float)
        return np.arange(0, self.S0 + 1, dtype=float)


@dataclass(frozen=True)
class MomentState:
    """Moment vector (1, <M>, <M^2>, ...) validated against the model."""

    mu: np.ndarray
    S0: int

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        object.__setattr__(self, "mu", mu)
        if abs(mu[0] - 1.0) > 1e-9:
            raise ValueError("zeroth moment must be 1")
        if mu.size >= 3 and mu[2] - mu[1] ** 2 < -1e-9:
            raise ValueError("second moment below squared mean")
        if not -1e-9 <= mu[1] <= self.S0 + 1e-9:
            raise ValueError("mean outside [0, S0]")


@dataclass(frozen=True)
class MomentMatrices:
    """Closed part A and higher-order coupling B of d mu/dt = A mu + B zeta."""

    A: np.ndarray
    B: np.ndarray


def build_moment_matrices(model, Mc):
    """Exact moment dynamics up to order Mc from the CME generator.

    Applying the generator to M^j and expanding (M -+ 2)^j - M^j binomially
    gives polynomials of degree j+1, so only the top row couples to the
    single order-(Mc+1) moment.
    """
    if Mc < 2:
        raise ValueError("closure order must be at least 2")
    k1, k2, S0 = model.k1, model.k2, model.S0
    full = np.zeros((Mc + 1, Mc + 2))
    for j in range(Mc + 1):
        for l in range(j):
            cm = math.comb(j, l) * float((-2) ** (j - l))
            cp = math.comb(j, l) * float(2 ** (j - l))
            # k1*M*(M-1) * cm*M^l  ->  k1*cm*(M^{l+2} - M^{l+1})
            full[j, l + 2] += k1 * cm
            full[j, l + 1] -= k1 * cm
            # (k2/2)*(S0-M) * cp*M^l  ->  (k2/2)*cp*(S0*M^l - M^{l+1})
            full[j, l] += 0.5 * k2 * cp * S0
            full[j, l + 1] -= 0.5 * k2 * cp
    return MomentMatrices(A=full[:, : Mc + 1], B=full[:, Mc + 1:])


def closure_phi(mu, model, Mc, kappa=0.01, parity=False, z0=None,
                gtol=1e-9, max_iters=200000, _full=False):
    """Zero-information closure: the order-(Mc+1) moment of the maximum-
    entropy distribution on the monomer support whose moments match
    mu[1..Mc] within +-kappa.

    ``z0`` warm-starts the inner dual solve (the integrator threads it
    through consecutive calls).
    """
    if kappa <= 0.0:
        raise ValueError("kappa must be positive")
    mu = np.asarray(mu, dtype=float)
    if mu.size < Mc + 1:
        raise ValueError("moment vector shorter than the closure order")
    pts = model.support(parity=parity)
    data = maxent.MomentData.finite(mu[1:Mc + 1], np.full(Mc, kappa), pts)
    result = maxent.solve_maxent(data, eps=1.0, z0=z0, gtol=gtol, restart=True,
                                 max_iters=max_iters, check_every=10 ** 9)
    scaled_kappa = float(np.min(np.full(Mc, kappa) / data._scale_pow))
    if result.feasibility_distance > 0.25 * scaled_kappa:
        raise ClosureError(
            f"moments {mu[1:Mc + 1]} unreachable within kappa={kappa} on "
            f"support 0..{model.S0} (residual {result.feasibility_distance:.3g})")
    zeta = float(result.weights @ pts ** (Mc + 1))
    if _full:
        return zeta, result
    return zeta


def integrate_moments(model, Mc, kappa=0.01, dt=1e-3, T=1.0, parity=False,
                      gtol=1e-9):
    """Integrate the closed moment ODE with fixed-step classical RK4.

    Returns (times, trajectory, closures): trajectory[i] is the moment
    vector at times[i] and closures[i] the closure moment used there.
    Invariant violations raise IntegrationError with the step index.
    """
    if dt <= 0.0 or T < dt:
        raise ValueError("need dt > 0 and T >= dt")
    mats = build_moment_matrices(model, Mc)
    A, B = mats.A, mats.B[:, 0]
    n_steps = int(round(T / dt))
    mu = np.array([float(model.M0) ** j for j in range(Mc + 1)])
    times = np.linspace(0.0, n_steps * dt, n_steps + 1)
    traj = np.empty((n_steps + 1, Mc + 1))
    closures = np.empty(n_steps + 1)
    traj[0] = mu
    warm = {"z": None}

    def rhs(m):
        zeta, res = closure_phi(m, model, Mc, kappa=kappa, parity=parity,
                                z0=warm["z"], gtol=gtol, _full=True)
        warm["z"] = res.z_hat
        return A @ m + B * zeta, zeta

    closures[0] = rhs(mu)[1]
    for step in range(1, n_steps + 1):
        f1, zeta = rhs(mu)
        f2, _ = rhs(mu + 0.5 * dt * f1)
        f3, _ = rhs(mu + 0.5 * dt * f2)
        f4, _ = rhs(mu + dt * f3)
        mu = mu + dt / 6.0 * (f1 + 2.0 * f2 + 2.0 * f3 + f4)
        if (abs(mu[0] - 1.0) > 1e-8
                or mu[2] - mu[1] ** 2 < -1e-9
                or not -1e-9 <= mu[1] <= model.S0 + 1e-9):
            raise IntegrationError(f"moment invariants violated at step {step}")
        traj[step] = mu
        closures[step] = zeta
    return times, traj, closures


# ---------------------------------------------------------------------------
# stochastic simulation oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SsaResult:
    """Empirical moment trajectories on a uniform time grid."""

    times: np.ndarray
    moments: np.ndarray      # (n_grid, n_powers) means of M^p, p = 1..n_powers
    stderr: np.ndarray       # matching standard errors of the means
    n_traj: int
    raw_sums: np.ndarray = field(repr=False, default=None)


def _ssa_batch(model, T, grid, traj_ids, seed, n_powers, chunk=64):
    """Lockstep Gillespie over one batch, one counter-based stream per
    trajectory (keyed by (seed, trajectory index)), so any batching or
    parallel split reproduces the serial results exactly."""
    k1, k2, S0 = model.k1, model.k2, model.S0
    B = len(traj_ids)
    gens = [np.random.Generator(np.random.Philox(key=np.array(
        [seed % 2 ** 64, int(i)], dtype=np.uint64))) for i in traj_ids]
    M = np.full(B, int(model.M0), dtype=np.int64)
    t = np.zeros(B)
    next_rec = np.zeros(B, dtype=np.int64)
    n_grid = grid.size
    sums = np.zeros((n_grid, 2 * n_powers))
    active = np.ones(B, dtype=bool)
    buf = np.empty((B, chunk))
    for i, g in enumerate(gens):
        buf[i] = g.random(chunk)
    col = 0

    powers = np.arange(1, 2 * n_powers + 1)

    def record(idx, limit):
        # credit grid points passed before the clock reaches limit[traj]
        while True:
            sel = idx[next_rec[idx] < n_grid]
            if sel.size:
                sel = sel[grid[next_rec[sel]] <= limit[sel]]
            if sel.size == 0:
                return
            vals = M[sel, None].astype(float) ** powers
            np.add.at(sums, next_rec[sel], vals)
            next_rec[sel] += 1

    while np.any(active):
        idx = np.nonzero(active)[0]
        if col + 2 > chunk:
            for i in idx:
                buf[i] = gens[i].random(chunk)
            col = 0
        u1 = buf[idx, col]
        u2 = buf[idx, col + 1]
        col += 2
        a1 = k1 * M[idx] * (M[idx] - 1)
        a2 = 0.5 * k2 * (S0 - M[idx])
        a0 = a1 + a2
        silent = a0 <= 0.0
        dt = np.empty(idx.size)
        dt[silent] = np.inf
        dt[~silent] = -np.log1p(-u1[~silent]) / a0[~silent]
        t_new = t[idx] + dt
        finishing = t_new >= T
        limit = np.full(B, -np.inf)
        limit[idx] = np.where(finishing, np.inf, t_new)
        # grid points are <= T, so a finishing trajectory flushes them all
        record(idx, limit)
        cont = idx[~finishing]
        M[cont] += np.where(u2[~finishing] * a0[~finishing] < a1[~finishing], -2, 2)
        t[cont] = t_new[~finishing]
        active[idx[finishing]] = False
    return sums


def ssa_simulate(model, T, n_traj, seed, n_grid=101, n_powers=4, batch=20000,
                 workers=1):
    """Exact-in-distribution jump simulation of the dimerization network.

    Returns empirical means of M^p (p = 1..n_powers) on ``n_grid`` evenly
    spaced times in [0, T] with standard errors.  Deterministic given the
    seed regardless of ``batch`` or ``workers``.
    """
    if n_traj < 1:
        raise ValueError("need at least one trajectory")
    if T <= 0.0:
        raise ValueError("horizon must be positive")
    grid = np.linspace(0.0, T, n_grid)
    batches = [range(lo, min(lo + batch, n_traj)) for lo in range(0, n_traj, batch)]
    if workers > 1 and len(batches) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_ssa_batch_star,
                                  [(model, T, grid, list(b), seed, n_powers) for b in batches]))
    else:
        parts = [_ssa_batch(model, T, grid, list(b), seed, n_powers) for b in batches]
    sums = np.sum(parts, axis=0)
    all_means = sums / n_traj
    means = all_means[:, :n_powers]
    # var(M^p) needs E[M^{2p}], stored at power column 2p - 1
    second = all_means[:, 1::2][:, :n_powers]
    var = np.maximum(second - means ** 2, 0.0)
    stderr = np.sqrt(var / n_traj)
    return SsaResult(times=grid, moments=means, stderr=stderr, n_traj=n_traj,
                     raw_sums=sums)


def _ssa_batch_star(args):
    return _ssa_batch(*args)
