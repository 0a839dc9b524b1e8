"""Independent oracles and fixtures shared by the test modules."""

import math

import numpy as np

from resquery.domain import DataTable, Domain

WORKED_MARGINAL = np.array([[7, 5, 2], [3, 5, 11], [10, 2, 11], [9, 18, 17]], dtype=float)


def worked_domain():
    return Domain(("Age", "Educ"), (4, 3))


def worked_table():
    records = [(i, j) for (i, j), c in np.ndenumerate(WORKED_MARGINAL) for _ in range(int(c))]
    return DataTable(worked_domain(), np.array(records))


def random_domain(rng, max_attrs=4, max_size=6, min_attrs=1):
    d = int(rng.integers(min_attrs, max_attrs + 1))
    sizes = tuple(int(s) for s in rng.integers(2, max_size + 1, size=d))
    return Domain(tuple(f"x{i}" for i in range(d)), sizes)


def random_table(rng, domain, n_records=50):
    cols = [rng.integers(0, n, size=n_records) for n in domain.sizes]
    return DataTable(domain, np.stack(cols, axis=1) if cols else np.zeros((n_records, 0), int))


def correlated_table(rng, sizes, n_records):
    """Chain-structured categorical data: each attribute copies its left neighbour with prob 0.6."""
    domain = Domain(tuple(f"c{i}" for i in range(len(sizes))), tuple(sizes))
    cols = [rng.integers(0, sizes[0], n_records)]
    for n in sizes[1:]:
        keep = rng.random(n_records) < 0.6
        cols.append(np.where(keep, cols[-1] % n, rng.integers(0, n, n_records)))
    return DataTable(domain, np.stack(cols, axis=1))


def grid_log_delta(rho, eps, points=100_000, alpha_max=500.0):
    """Log of the zCDP -> delta conversion, minimized over a fixed alpha grid.

    Points are uniform in sqrt(alpha - 1), which keeps the grid's own
    discretization error near 1e-7 for rho in [0.01, 2] and eps in [0.1, 10].
    """
    am1 = np.linspace(0.0, math.sqrt(alpha_max - 1.0), points + 1)[1:] ** 2
    alpha = 1.0 + am1
    logd = am1 * (alpha * rho - eps) - np.log(am1) + alpha * np.log1p(-1.0 / alpha)
    return min(float(logd.min()), 0.0)


def _project(x, p):
    """Euclidean projection of each row onto {x >= 0, p.x <= 1}."""
    y = np.maximum(x, 0.0)
    over = (y * p).sum(axis=1) > 1.0
    if not over.any():
        return y
    xo, po = x[over], p[over]
    ratio = xo / po
    order = np.argsort(-ratio, axis=1)
    r = np.take_along_axis(ratio, order, 1)
    ps = np.take_along_axis(po, order, 1)
    xs = np.take_along_axis(xo, order, 1)
    theta_k = (np.cumsum(ps * xs, axis=1) - 1.0) / np.cumsum(ps**2, axis=1)
    k = (r > theta_k).cumsum(axis=1).argmax(axis=1)
    theta = theta_k[np.arange(len(k)), k]
    y[over] = np.maximum(xo - theta[:, None] * po, 0.0)
    return y


def pgd_crp(v, p, a, step=1e-3, max_iter=1_000_000, rtol=1e-15):
    """Projected gradient descent on sum v/(x+a) over {x >= 0, p.x <= 1}.

    Rows are independent problems of equal length. Each row starts at step
    1e-3; a step that fails to decrease the objective is halved and a
    successful one grows by 5%. A row stops once an accepted step improves
    the objective by less than ``rtol`` relative.
    """
    v, p, a = (np.atleast_2d(np.asarray(t, float)) for t in (v, p, a))
    x = _project(np.full_like(v, 0.5 / v.shape[1]) / p, p)
    f = (v / (x + a)).sum(axis=1)
    h = np.full(len(v), step)
    live = np.ones(len(v), dtype=bool)
    for _ in range(max_iter):
        idx = np.flatnonzero(live)
        if not len(idx):
            break
        xv, av, vv, pv = x[idx], a[idx], v[idx], p[idx]
        cand = _project(xv + h[idx, None] * vv / (xv + av) ** 2, pv)
        with np.errstate(divide="ignore"):
            fc = np.where((cand + av > 0).all(axis=1), (vv / (cand + av)).sum(axis=1), np.inf)
        ok = fc <= f[idx]
        small = ok & (f[idx] - fc <= rtol * f[idx])
        x[idx[ok]] = cand[ok]
        f[idx[ok]] = fc[ok]
        h[idx] = np.where(ok, h[idx] * 1.05, h[idx] * 0.5)
        live[idx[small | (h[idx] < 1e-30)]] = False
    return x, f


def dual_crp(v, p, a):
    """Water-filling by bisection on the multiplier: x = max(0, sqrt(v/(lam p)) - a)."""
    v, p, a = (np.asarray(t, float) for t in (v, p, a))

    def spend(lam):
        return float((p * np.maximum(0.0, np.sqrt(v / (lam * p)) - a)).sum())

    lo, hi = 1e-300, 1.0
    while spend(hi) > 1.0:
        hi *= 2.0
    for _ in range(3000):
        mid = math.sqrt(lo * hi) if lo > 0 else hi / 2
        if spend(mid) > 1.0:
            lo = mid
        else:
            hi = mid
        if hi / lo - 1 < 1e-15:
            break
    return np.maximum(0.0, np.sqrt(v / (hi * p)) - a)
