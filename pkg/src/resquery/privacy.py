"""Privacy parameters of residual measurements, noise, selection and zCDP accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Mapping, TypeVar

import numpy as np

from .domain import AttrSet, Domain, Marginal, Residual, is_subset
from .tensor import decomp

K = TypeVar("K", bound=Hashable)

BUDGET_TOL = 1e-12
ALPHA_MAX = 500.0


class BudgetExceededError(RuntimeError):
    """A charge would push the accountant past its total budget."""


def p_tau(domain: Domain, tau: AttrSet) -> float:
    """zCDP cost coefficient: releasing residual ``tau`` at variance s2 costs p/(2 s2)."""
    return math.prod((domain.sizes[i] - 1) / domain.sizes[i] for i in tau)


def v_tau(domain: Domain, gamma: AttrSet, tau: AttrSet) -> float:
    """Per-cell variance of the ``gamma`` marginal per unit variance on residual ``tau``."""
    if not is_subset(tau, gamma):
        raise ValueError(f"{tau} is not a subset of {gamma}")
    rest = [j for j in gamma if j not in set(tau)]
    return p_tau(domain, tau) * math.prod(1.0 / domain.sizes[j] ** 2 for j in rest)


def residual_batch_cost(domain: Domain, variances: Mapping[AttrSet, float]) -> float:
    """zCDP cost of independently measuring each residual at the given variance."""
    return sum(p_tau(domain, tau) / (2.0 * s2) for tau, s2 in variances.items())


@dataclass(frozen=True)
class NoisyResidual:
    residual: Residual
    variance: float


def measure_residual(m: Marginal, variance: float, rng: np.random.Generator) -> NoisyResidual:
    """Add isotropic N(0, variance) noise to marginal ``m`` and take its top residual."""
    if not variance > 0:
        raise ValueError(f"variance must be positive, got {variance}")
    noisy = m.data + rng.normal(0.0, math.sqrt(variance), size=m.data.shape)
    return NoisyResidual(decomp(Marginal(m.attrs, noisy), m.attrs), float(variance))


def exp_mech_select(
    scores: Mapping[K, float],
    sensitivity: float,
    epsilon: float,
    rng: np.random.Generator,
) -> K:
    """Exponential mechanism via Gumbel-max; costs ``epsilon**2 / 8`` zCDP."""
    if not scores:
        raise ValueError("no candidates to select from")
    if not (epsilon > 0 and sensitivity > 0):
        raise ValueError("epsilon and sensitivity must be positive")
    keys = list(scores)
    logits = (epsilon / (2.0 * sensitivity)) * np.array([scores[k] for k in keys], dtype=float)
    noisy = logits + rng.gumbel(size=len(keys))
    return keys[int(np.argmax(noisy))]


@dataclass
class Accountant:
    """Running zCDP ledger under fully adaptive composition."""

    budget: float
    used: float = 0.0
    ledger: list[tuple[str, float]] = field(default_factory=list)

    @property
    def remaining(self) -> float:
        return self.budget - self.used

    def compose(self, cost: float, label: str = "") -> None:
        if cost < 0:
            raise ValueError(f"negative privacy cost {cost}")
        if self.used + cost > self.budget + BUDGET_TOL:
            raise BudgetExceededError(
                f"charging {cost:.6g} for {label!r} exceeds budget "
                f"({self.used:.6g} of {self.budget:.6g} used)"
            )
        self.used += cost
        self.ledger.append((label, float(cost)))

    def to_dict(self) -> dict:
        return {
            "rho": self.budget,
            "rho_used": self.used,
            "ledger": [{"label": lbl, "cost": c} for lbl, c in self.ledger],
        }


def compose(accountant: Accountant, cost: float, label: str = "") -> None:
    accountant.compose(cost, label)


def _log_delta(alpha: float, rho: float, eps: float) -> float:
    return (alpha - 1) * (alpha * rho - eps) - math.log(alpha - 1) + alpha * math.log1p(-1.0 / alpha)


def _golden_min(f, lo: float, hi: float, tol: float) -> float:
    invphi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return min(f(a), f(b), fc, fd)


def zcdp_log_delta(rho: float, eps: float, alpha_max: float = ALPHA_MAX) -> float:
    """Natural log of :func:`zcdp_to_delta`; stays finite where delta underflows."""
    if not (rho > 0 and eps > 0):
        raise ValueError("rho and eps must be positive")
    lo = 1.0 + 1e-12
    best = _golden_min(lambda a: _log_delta(a, rho, eps), lo, alpha_max, 1e-10)
    best = min(best, _log_delta(alpha_max, rho, eps))
    return min(best, 0.0)


def zcdp_to_delta(rho: float, eps: float, alpha_max: float = ALPHA_MAX) -> float:
    """Smallest delta such that rho-zCDP implies (eps, delta)-DP, over alpha in (1, alpha_max]."""
    return math.exp(zcdp_log_delta(rho, eps, alpha_max))


def calibrate_rho(eps: float, delta: float, rtol: float = 1e-9) -> float:
    """Largest rho whose (eps, delta) conversion stays within ``delta``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    lo, hi = 0.0, eps + 1.0
    while zcdp_to_delta(hi, eps) <= delta:
        lo, hi = hi, 2 * hi
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if zcdp_to_delta(mid, eps) <= delta:
            lo = mid
        else:
            hi = mid
    return lo
