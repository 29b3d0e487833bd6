"""Independent reference implementations used only by the tests."""
import math

import numpy as np

_NODES, _WEIGHTS = np.polynomial.legendre.leggauss(400)


def beta_cdf_quadrature(x, a, b):
    """Beta(a, b) CDF by Gauss-Legendre quadrature after substituting u = x t**2,
    which keeps the integrand smooth at 0 for a >= 1/2."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    t = 0.5 * (_NODES + 1.0)
    u = x * t * t
    log_b = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
    log_f = (a - 1) * np.log(u) + (b - 1) * np.log1p(-u) + math.log(2 * x) + np.log(t) - log_b
    return float(0.5 * np.sum(_WEIGHTS * np.exp(log_f)))


def beta_ppf_quadrature(q, a, b, iters=60):
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if beta_cdf_quadrature(mid, a, b) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def order_statistic_quantile(scores, alpha):
    """Smallest score s with #{s_i <= s} >= (D+1)(1-alpha), else 1.0."""
    d = len(scores)
    need = (d + 1) * (1 - alpha)
    for s in sorted(scores):
        if sum(x <= s for x in scores) >= need - 1e-9:
            return s
    return 1.0


def dataset_conditional_alpha_oracle(d, delta, target):
    best = None
    for v in range(1, d + 1):
        if beta_ppf_quadrature(delta, d + 1 - v, v) >= target:
            best = v
        else:
            break
    return None if best is None else best / (d + 1)
