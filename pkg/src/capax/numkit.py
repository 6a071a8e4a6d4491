"""Numerically stable entropy/divergence primitives shared by all solvers.

All entropic quantities are in bits (base-2 logs). The 0*log(0) cases are
resolved to 0 by explicit branching, never by relying on floating-point
limits.
"""

import numpy as np

LOG2E = 1.0 / np.log(2.0)  # log2(e) = 1/ln 2


def log_sum_exp2(values):
    """log2(sum_i 2^{v_i}) computed with a max shift so it never overflows.

    Accepts any nonempty array of finite reals.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("log_sum_exp2 of an empty vector")
    m = v.max()
    return float(m + np.log2(np.exp2(v - m).sum()))


def xlog2x(p):
    """Elementwise p*log2(p) with the convention 0*log2(0) = 0."""
    p = np.asarray(p, dtype=float)
    out = np.zeros_like(p)
    pos = p > 0.0
    out[pos] = p[pos] * np.log2(p[pos])
    return out


def entropy_bits(p):
    """Shannon entropy H(p) = -sum p_i log2 p_i of a probability vector."""
    p = np.asarray(p, dtype=float)
    if np.any(p < 0.0):
        raise ValueError("negative probability entry")
    return float(-xlog2x(p).sum())


def binary_entropy(alpha):
    """H_b(alpha) = -alpha log2 alpha - (1-alpha) log2(1-alpha) for alpha in [0,1]."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"binary_entropy argument {alpha} outside [0,1]")
    return entropy_bits([alpha, 1.0 - alpha])


def kl_bits(p, q):
    """Relative entropy D(p||q) in bits.

    A support violation (p_i > 0 where q_i = 0) yields the +inf sentinel,
    which is distinct from the ValueError raised for malformed input.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("kl_bits dimension mismatch")
    if np.any(p < 0.0) or np.any(q < 0.0):
        raise ValueError("negative probability entry")
    sup = p > 0.0
    if np.any(q[sup] == 0.0):
        return float("inf")
    return float(np.sum(p[sup] * np.log2(p[sup] / q[sup])))


def row_entropies_bits(W):
    """Per-row entropies of a stochastic matrix: r_i = H(W[i, :])."""
    return -xlog2x(np.asarray(W, dtype=float)).sum(axis=1)


def mutual_information(p, W):
    """Mutual information I(p, W) = -r^T p + H(W^T p) in bits.

    ``W`` is an N x M row-stochastic matrix and ``p`` a distribution over
    its N rows; r holds the conditional output entropies.
    """
    p = np.asarray(p, dtype=float)
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or p.shape != (W.shape[0],):
        raise ValueError("mutual_information dimension mismatch")
    r = row_entropies_bits(W)
    return float(-r @ p + entropy_bits(W.T @ p))


def project_l2_ball(x, R):
    """Euclidean projection of x onto the centered 2-norm ball of radius R."""
    if R <= 0.0:
        raise ValueError("ball radius must be positive")
    x = np.asarray(x, dtype=float)
    nrm = np.linalg.norm(x)
    if nrm <= R:
        return x.copy()
    return (R / nrm) * x


def project_box(x, lo, hi):
    """Componentwise clamp of x onto the box [lo, hi]."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(lo > hi):
        raise ValueError("box has lo > hi")
    return np.clip(np.asarray(x, dtype=float), lo, hi)
