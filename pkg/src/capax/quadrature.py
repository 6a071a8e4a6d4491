"""Composite Gauss-Legendre quadrature on an interval.

Shared by the continuous-input capacity solver and the continuous
maximum-entropy solver; both integrate smooth 1-D functions of the form
2^{(shifted exponent)} where deterministic fixed-order panels are accurate
and reproducible.
"""

import math

import numpy as np


def gauss_legendre(a, b, nodes_per_unit=64, min_nodes=64):
    """Nodes and weights integrating over [a, b].

    The interval is split into unit-length panels (the last one may be
    shorter) carrying ``nodes_per_unit`` Gauss-Legendre nodes each, with at
    least ``min_nodes`` in total.
    """
    if not b > a:
        raise ValueError("empty integration interval")
    length = b - a
    panels = max(int(math.ceil(length)), 1)
    per_panel = max(nodes_per_unit, int(math.ceil(min_nodes / panels)))
    t, w = np.polynomial.legendre.leggauss(per_panel)
    edges = np.linspace(a, b, panels + 1)
    xs = []
    ws = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        half = 0.5 * (hi - lo)
        xs.append(lo + half * (t + 1.0))
        ws.append(half * w)
    return np.concatenate(xs), np.concatenate(ws)
