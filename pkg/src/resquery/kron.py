"""Explicit Kronecker-product query matrices and brute-force solvers.

Slow by design. These build the marginal, residual and transform matrices
factor by factor so the in-axis code can be checked against them, and
``shuffle_matvec`` serves as the speed baseline for the benchmark.
"""

from __future__ import annotations

import math
from functools import reduce
from typing import Iterable, Sequence

import numpy as np

from .domain import AttrSet, Domain, attrset, is_subset, subsets

MAX_ORACLE_SIZE = 10_000


def sub_matrix(ell: int) -> np.ndarray:
    """Subtraction basis ``[-1 | I]`` of shape ``(ell-1, ell)``."""
    if ell < 2:
        raise ValueError("subtraction matrix needs ell >= 2")
    return np.hstack([-np.ones((ell - 1, 1)), np.eye(ell - 1)])


def sub_pinv(ell: int) -> np.ndarray:
    """Pseudoinverse of :func:`sub_matrix`: ``[0; I] - ones/ell``."""
    if ell < 2:
        raise ValueError("subtraction matrix needs ell >= 2")
    return np.vstack([np.zeros((1, ell - 1)), np.eye(ell - 1)]) - 1.0 / ell


def _kron(factors: Sequence[np.ndarray]) -> np.ndarray:
    if not factors:
        return np.ones((1, 1))
    return reduce(np.kron, factors)


def query_factors(
    domain: Domain, kind: str, tau: AttrSet = (), gamma: AttrSet = ()
) -> list[np.ndarray]:
    """Per-attribute factors of a query matrix.

    ``marginal`` and ``residual`` act on the full data vector (one factor per
    attribute of the domain). ``decomp`` and ``recon`` act on the compact
    ``gamma`` marginal (one factor per attribute of gamma; scalar identity
    factors are omitted).
    """
    tau, gamma = attrset(tau), attrset(gamma)
    sizes = domain.sizes
    if kind == "marginal":
        return [np.eye(n) if k in gamma else np.ones((1, n)) for k, n in enumerate(sizes)]
    if kind == "residual":
        return [sub_matrix(n) if k in tau else np.ones((1, n)) for k, n in enumerate(sizes)]
    if not is_subset(tau, gamma):
        raise ValueError(f"{tau} is not a subset of {gamma}")
    if kind == "decomp":
        return [sub_matrix(sizes[k]) if k in tau else np.ones((1, sizes[k])) for k in gamma]
    if kind == "recon":
        return [sub_pinv(sizes[k]) if k in tau else np.ones((sizes[k], 1)) / sizes[k] for k in gamma]
    raise ValueError(f"unknown query kind {kind!r}")


def build_query(
    domain: Domain, kind: str, tau: Iterable[int] = (), gamma: Iterable[int] = ()
) -> np.ndarray:
    """Dense query matrix; rows and columns follow row-major (C order) vectorization."""
    factors = query_factors(domain, kind, attrset(tau), attrset(gamma))
    rows = math.prod(f.shape[0] for f in factors)
    cols = math.prod(f.shape[1] for f in factors)
    if max(rows, cols) > MAX_ORACLE_SIZE:
        raise ValueError(f"{rows}x{cols} exceeds the oracle size cap {MAX_ORACLE_SIZE}")
    return _kron(factors)


def data_vector(table) -> np.ndarray:
    """Row-major vectorized data array of a :class:`DataTable`."""
    dom = table.domain
    if dom.size > MAX_ORACLE_SIZE:
        raise ValueError("domain too large for the dense oracle")
    flat = np.ravel_multi_index(table.records.T, dom.sizes) if len(table) else np.array([], int)
    return np.bincount(flat, minlength=dom.size).astype(np.float64)


def shuffle_matvec(factors: Sequence[np.ndarray], x: np.ndarray) -> np.ndarray:
    """``kron(*factors) @ vec(x)`` as a sequence of dense mode products.

    ``x`` is a tensor with one axis per factor (or its flattening).
    """
    shape = tuple(f.shape[1] for f in factors)
    t = np.asarray(x, dtype=np.float64).reshape(shape)
    for k, f in enumerate(factors):
        t = np.moveaxis(np.tensordot(f, t, axes=([1], [k])), 0, k)
    return t


def covariance(domain: Domain, tau: AttrSet) -> np.ndarray:
    """Residual noise covariance ``V = T T^T`` induced by isotropic unit noise."""
    t = build_query(domain, "decomp", tau, tau)
    return t @ t.T


def brute_force_mle(
    measurements: Iterable[tuple[AttrSet, np.ndarray, float]],
    workload: Iterable[AttrSet],
    domain: Domain,
) -> dict[AttrSet, np.ndarray]:
    """Weighted least squares over the data vector, then project to the workload.

    Each measurement ``(tau, z, s2)`` contributes ``(1/s2) ||R_tau p - z||^2_V``
    with ``||u||^2_V = u^T V^{-1} u``. Returns the minimum-norm solution's
    marginals, which are unique for every workload set.
    """
    if domain.size > 200:
        raise ValueError("brute_force_mle is limited to domains of size <= 200")
    rows, rhs = [], []
    for tau, z, s2 in measurements:
        tau = attrset(tau)
        r = build_query(domain, "residual", tau)
        # whiten with the Cholesky factor of V
        chol = np.linalg.cholesky(covariance(domain, tau))
        w = 1.0 / math.sqrt(s2)
        rows.append(w * np.linalg.solve(chol, r))
        rhs.append(w * np.linalg.solve(chol, np.asarray(z, dtype=float).reshape(-1)))
    if rows:
        p, *_ = np.linalg.lstsq(np.vstack(rows), np.concatenate(rhs), rcond=None)
    else:
        p = np.zeros(domain.size)
    out = {}
    for gamma in workload:
        gamma = attrset(gamma)
        out[gamma] = (build_query(domain, "marginal", gamma=gamma) @ p).reshape(domain.shape(gamma))
    return out


def stacked_transform(domain: Domain, gamma: AttrSet) -> tuple[np.ndarray, np.ndarray]:
    """``(T_gamma, T_gamma^{-1})`` stacking all decompositions of a gamma marginal."""
    taus = subsets(attrset(gamma))
    t = np.vstack([build_query(domain, "decomp", tau, gamma) for tau in taus])
    tinv = np.hstack([build_query(domain, "recon", tau, gamma) for tau in taus])
    return t, tinv
