"""Reference computations written independently of the package.

They use mpmath at 50 digits or plain enumeration, never package code, so
agreement with the package is a genuine cross-check.
"""

import itertools

import mpmath as mp
import numpy as np

mp.mp.dps = 50


def logsumexp(s, eta=1.0):
    return float(mp.log(mp.fsum(mp.e ** (eta * mp.mpf(v)) for v in s)) / eta)


def softmax(s, eta=1.0):
    z = [mp.e ** (eta * mp.mpf(v)) for v in s]
    tot = mp.fsum(z)
    return np.array([float(v / tot) for v in z])


def kl(p, q):
    return float(mp.fsum(mp.mpf(a) * mp.log(mp.mpf(a) / mp.mpf(b)) for a, b in zip(p, q) if a > 0))


def entropy(p):
    return float(-mp.fsum(mp.mpf(a) * mp.log(mp.mpf(a)) for a in p if a > 0))


def simplex_lattice(n, steps):
    """All points of the simplex with coordinates in multiples of 1/steps."""
    pts = []
    for c in itertools.product(range(steps + 1), repeat=n - 1):
        if sum(c) <= steps:
            pts.append(list(c) + [steps - sum(c)])
    return np.array(pts, dtype=float) / steps


def zoom_min_simplex(f, n, levels=6, steps=60):
    """Minimize ``f`` over the simplex by a coarse-to-fine lattice search.

    ``f`` maps an array of points (one per row) to their values. Each level
    re-centres a finer lattice on the best point so far; offsets sum to zero,
    so every candidate stays on the simplex.
    """
    offsets = simplex_lattice(n, steps) - 1.0 / n
    best_x = np.full(n, 1.0 / n)
    best_v = float(f(best_x[None, :])[0])
    width = float(n)
    for _ in range(levels):
        pts = best_x + width * offsets
        pts = pts[np.all(pts >= 0, axis=1)]
        vals = np.asarray(f(pts), dtype=float)
        k = int(np.nanargmin(vals))
        if vals[k] < best_v:
            best_x, best_v = pts[k], float(vals[k])
        width *= 2.0 * n / steps
    return best_x, best_v


def lmsr_bundle_cost(s, r, eta=1.0):
    return float(
        (mp.log(mp.fsum(mp.e ** (eta * (mp.mpf(a) + mp.mpf(b))) for a, b in zip(s, r)))
         - mp.log(mp.fsum(mp.e ** (eta * mp.mpf(a)) for a in s))) / eta
    )


def compression_payout(q, q_new, i):
    """Payout making profit equal the drop in code length of character ``i``."""
    cost = max(float(mp.log(mp.mpf(a) / mp.mpf(b))) for a, b in zip(q, q_new))
    return float(mp.log(mp.mpf(q_new[i]) / mp.mpf(q[i]))) + cost, cost
