"""In-axis transforms between marginals and residuals.

Every transform is a sequence of four fiber-wise linear maps, each applied
along one axis of a dense array:

    sum     v -> [sum(v)]
    sub     v -> v[1:] - v[0]
    center  v -> u - mean(u),  u = [0, v]
    smear   [v] -> v/k * ones(k)

Arrays are stored compactly: one axis per attribute of the marginal (or
residual), axes in ascending attribute order.
"""

from __future__ import annotations

import math
from typing import Mapping

import numpy as np

from .domain import AttrSet, Domain, Marginal, Residual, attrset, subsets

MAX_DECOMPOSE_ATTRS = 25

AXIS_OPS = ("sum", "sub", "center", "smear")


def _axis_slice(ndim: int, axis: int, sl: slice | int) -> tuple:
    idx = [slice(None)] * ndim
    idx[axis] = sl
    return tuple(idx)


def _sub(arr: np.ndarray, axis: int) -> np.ndarray:
    return arr[_axis_slice(arr.ndim, axis, slice(1, None))] - arr[
        _axis_slice(arr.ndim, axis, slice(0, 1))
    ]


def _center(arr: np.ndarray, axis: int) -> np.ndarray:
    length = arr.shape[axis] + 1
    mean = arr.sum(axis=axis, keepdims=True) / length
    shape = list(arr.shape)
    shape[axis] = length
    out = np.empty(shape, dtype=np.float64)
    out[_axis_slice(arr.ndim, axis, slice(0, 1))] = -mean
    np.subtract(arr, mean, out=out[_axis_slice(arr.ndim, axis, slice(1, None))])
    return out


def apply_axis_op(arr: np.ndarray, axis: int, op: str, k: int | None = None) -> np.ndarray:
    """Apply one in-axis operation to every fiber of ``arr`` along ``axis``.

    ``sum`` keeps the reduced axis as a singleton; ``smear`` requires a
    singleton axis and expands it to length ``k``.
    """
    arr = np.asarray(arr, dtype=np.float64)
    if not -arr.ndim <= axis < arr.ndim:
        raise IndexError(f"axis {axis} out of range for a {arr.ndim}-d array")
    axis %= arr.ndim
    length = arr.shape[axis]
    if op == "sum":
        return arr.sum(axis=axis, keepdims=True)
    if op == "sub":
        if length < 2:
            raise ValueError("sub needs an axis of length >= 2")
        return _sub(arr, axis)
    if op == "center":
        return _center(arr, axis)
    if op == "smear":
        if length != 1:
            raise ValueError("smear needs a singleton axis")
        if k is None or k < 1:
            raise ValueError("smear needs k >= 1")
        reps = [1] * arr.ndim
        reps[axis] = k
        return np.tile(arr / k, reps)
    raise ValueError(f"unknown axis op {op!r}; expected one of {AXIS_OPS}")


def _positions(gamma: AttrSet, tau: AttrSet) -> tuple[list[int], list[int]]:
    pos = {a: i for i, a in enumerate(gamma)}
    missing = [a for a in tau if a not in pos]
    if missing:
        raise ValueError(f"{tau} is not a subset of {gamma}")
    keep = [pos[a] for a in tau]
    drop = [pos[a] for a in gamma if a not in set(tau)]
    return keep, drop


def decomp_array(mu: np.ndarray, gamma: AttrSet, tau: AttrSet) -> np.ndarray:
    """Residual over ``tau`` of a compact marginal array over ``gamma``."""
    _, drop = _positions(gamma, tau)
    z = np.asarray(mu, dtype=np.float64)
    # sums first: they shrink the array
    if drop:
        z = z.sum(axis=tuple(drop))
    else:
        z = z.copy()
    for ax in range(z.ndim):
        z = _sub(z, ax)
    return z


def recon_expanded(z: np.ndarray, tau: AttrSet, gamma: AttrSet, domain: Domain) -> np.ndarray:
    """Component of the ``gamma`` marginal from residual ``z`` over ``tau``.

    Returns a broadcastable view with singleton axes where the smear would
    repeat values; callers that add it into an estimate avoid materializing
    the repetition.
    """
    keep, drop = _positions(gamma, tau)
    z = np.asarray(z, dtype=np.float64)
    if z.shape != domain.residual_shape(tau):
        raise ValueError(
            f"residual shape {z.shape} does not match {domain.residual_shape(tau)} for {tau}"
        )
    for ax in range(z.ndim):
        z = _center(z, ax)
    scale = math.prod(domain.sizes[gamma[i]] for i in drop)
    shape = [1] * len(gamma)
    for ax, p in enumerate(keep):
        shape[p] = z.shape[ax]
    return (z / scale).reshape(shape)


def recon_array(z: np.ndarray, tau: AttrSet, gamma: AttrSet, domain: Domain) -> np.ndarray:
    comp = recon_expanded(z, tau, gamma, domain)
    return np.broadcast_to(comp, domain.shape(gamma)).copy()


def decomp(m: Marginal, target) -> Residual:
    """Residual over ``target`` (a subset of ``m.attrs``) of marginal ``m``."""
    tau = attrset(target)
    return Residual(tau, decomp_array(m.data, m.attrs, tau))


def recon(r: Residual, target, domain: Domain) -> Marginal:
    """Marginal component over ``target`` contributed by residual ``r``."""
    gamma = attrset(target)
    return Marginal(gamma, recon_array(r.data, r.attrs, gamma, domain))


def decompose_full(m: Marginal) -> dict[AttrSet, Residual]:
    """All ``2^|gamma|`` residuals of a marginal."""
    if len(m.attrs) > MAX_DECOMPOSE_ATTRS:
        raise ValueError(f"refusing to enumerate 2^{len(m.attrs)} residuals")
    return {tau: decomp(m, tau) for tau in subsets(m.attrs)}


def recon_sum(residuals: Mapping[AttrSet, Residual], gamma, domain: Domain) -> Marginal:
    """Inverse of :func:`decompose_full`."""
    gamma = attrset(gamma)
    out = np.zeros(domain.shape(gamma))
    for tau in subsets(gamma):
        if tau not in residuals:
            raise KeyError(f"missing residual for {tau}")
        out += recon_expanded(residuals[tau].data, tau, gamma, domain)
    return Marginal(gamma, out)
