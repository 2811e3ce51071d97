"""Independent reference computations the package is checked against.

Each oracle avoids the code path it verifies: finite differences instead of
backprop, bisection on erf instead of ndtri, quadrature of the t density
instead of scipy's t distribution, and plain loops instead of vectorised
counting.
"""

import math

import numpy as np
from scipy import integrate


def fd_gradient(f, p, h=1e-5):
    p = np.asarray(p, dtype=float)
    g = np.empty_like(p)
    for i in range(p.size):
        up, dn = p.copy(), p.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (f(up) - f(dn)) / (2 * h)
    return g


def gradients_match(analytic, numeric, rel=1e-4, abs_=1e-7):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    err = np.abs(analytic - numeric)
    return bool(np.all((err <= abs_) | (err <= rel * np.maximum(np.abs(analytic), np.abs(numeric)))))


def z_bisect(rho, tol=1e-13):
    """Two-sided normal quantile for ``rho`` percent by bisection on erf."""
    target = rho / 100.0
    lo, hi = 0.0, 40.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if math.erf(mid / math.sqrt(2.0)) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def mape_loop(pred, truth):
    total, count = 0.0, 0
    for p, t in zip(pred, truth):
        if t != 0:
            total += abs(p - t) / abs(t)
            count += 1
    return total / count * 100.0


def frequency_loop(lo, hi, truth):
    inside = 0
    for a, b, t in zip(lo, hi, truth):
        if a <= t <= b:
            inside += 1
    return inside * 100.0 / len(truth)


def cal_loop(levels, alphas, weights=None):
    total = 0.0
    for j, (r, a) in enumerate(zip(levels, alphas)):
        w = 1.0 if weights is None else weights[j]
        total += w * ((r - a) / 100.0) ** 2
    return total * 100.0


def t_pdf(x, df):
    c = math.exp(math.lgamma((df + 1) / 2) - math.lgamma(df / 2)) / math.sqrt(df * math.pi)
    return c * (1 + x * x / df) ** (-(df + 1) / 2)


def welch_p_quadrature(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    t = (a.mean() - b.mean()) / math.sqrt(va + vb)
    df = (va + vb) ** 2 / (va**2 / (a.size - 1) + vb**2 / (b.size - 1))
    tail, _ = integrate.quad(t_pdf, abs(t), np.inf, args=(df,), epsabs=1e-14)
    return 2.0 * tail


def kl_gauss_laplace_closed(mean, sd, b):
    """KL(N(mean, sd^2) || Laplace(0, b)) summed over coordinates, via the folded-normal mean."""
    mean, sd = np.asarray(mean, float), np.asarray(sd, float)
    phi = 0.5 * (1 + np.vectorize(math.erf)(-mean / (sd * math.sqrt(2))))
    e_abs = sd * math.sqrt(2 / math.pi) * np.exp(-mean**2 / (2 * sd**2)) + mean * (1 - 2 * phi)
    neg_entropy = -0.5 * np.log(2 * math.pi * math.e * sd**2)
    return float(np.sum(neg_entropy + math.log(2 * b) + e_abs / b))


def kl_gauss_gauss_mc(mean, sd, prior_sd, n, rng):
    mean, sd = np.asarray(mean, float), np.asarray(sd, float)
    total = 0.0
    for m, s in zip(mean, sd):
        w = m + s * rng.standard_normal(n)
        logq = -0.5 * ((w - m) / s) ** 2 - math.log(s)
        logp = -0.5 * (w / prior_sd) ** 2 - math.log(prior_sd)
        total += float(np.mean(logq - logp))
    return total


def quadratic_surrogate(space, seed):
    """Seeded 2-D quadratic over the encoded (log lr, log laplace) coordinates.

    Returns ``(objective, span)`` where ``span`` is the max minus min of the
    function over the unit square; the minimum value is exactly 0.
    """
    rng = np.random.default_rng(seed)
    centre = rng.uniform(0.15, 0.85, 2)
    weights = rng.uniform(0.5, 2.0, 2)
    corners = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    span = float(np.max(np.sum(weights * (corners - centre) ** 2, axis=1)))

    def objective(hp, _seed):
        u = space.encode(hp)[[2, 4]]
        return float(np.sum(weights * (u - centre) ** 2))

    return objective, span
