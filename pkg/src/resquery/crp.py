"""Conditional residual planning: split a round's budget across residuals given priors.

Works in transformed precisions ``x = 1/(C s2)`` and ``a = 1/(C s2_prior)``:

    minimize   sum v / (x + a)
    subject to sum p x <= 1,  x >= 0
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .domain import AttrSet, Domain, attrset, downward_closure, is_subset, subsets
from .privacy import p_tau, v_tau

DEFAULT_ETA = 1e-3
KKT_TOL = 1e-8


@dataclass(frozen=True)
class CrpProblem:
    taus: tuple[AttrSet, ...]
    v: np.ndarray
    p: np.ndarray
    a: np.ndarray
    budget: float  # C = 2 * rho_round

    def __post_init__(self):
        for name in ("v", "p", "a"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        n = len(self.taus)
        if not (self.v.shape == self.p.shape == self.a.shape == (n,)):
            raise ValueError("v, p, a must each have one entry per residual")
        if (self.v <= 0).any() or (self.p <= 0).any():
            raise ValueError("v and p must be strictly positive")
        if (self.a < 0).any() or not np.isfinite(self.a).all():
            raise ValueError("prior precisions must be finite and nonnegative")
        if not self.budget > 0:
            raise ValueError("budget must be positive")

    @classmethod
    def for_marginal(
        cls,
        domain: Domain,
        gamma: AttrSet,
        rho_round: float,
        prior_precision: dict[AttrSet, float] | None = None,
        taus: Sequence[AttrSet] | None = None,
    ) -> CrpProblem:
        """Problem for measuring the residuals of ``gamma`` with ``rho_round`` zCDP.

        ``prior_precision[tau]`` is the precision already accumulated for tau.
        """
        gamma = attrset(gamma)
        taus = tuple(taus) if taus is not None else tuple(subsets(gamma))
        budget = 2.0 * rho_round
        prior = prior_precision or {}
        return cls(
            taus=taus,
            v=np.array([v_tau(domain, gamma, t) for t in taus]),
            p=np.array([p_tau(domain, t) for t in taus]),
            a=np.array([prior.get(t, 0.0) / budget for t in taus]),
            budget=budget,
        )

    def objective(self, x: np.ndarray) -> float:
        return float(np.sum(self.v / (np.asarray(x) + self.a)))


@dataclass(frozen=True)
class CrpSolution:
    problem: CrpProblem
    x: np.ndarray
    iterations: int

    @property
    def objective(self) -> float:
        return self.problem.objective(self.x)

    def multiplier(self) -> float:
        """Lagrange multiplier of the budget constraint."""
        free = self.x > 0
        pr = self.problem
        s = np.sum(np.sqrt(pr.p[free] * pr.v[free]))
        q = np.sum(pr.p[free] * pr.a[free])
        return float((s / (1.0 + q)) ** 2)


def _closed_form(v, p, a) -> np.ndarray:
    s = np.sum(np.sqrt(p * v))
    q = np.sum(p * a)
    return (1.0 + q) / s * np.sqrt(v / p) - a


def relaxed_closed_form(problem: CrpProblem) -> np.ndarray:
    """Minimizer with the budget as an equality and no sign constraints (may be negative)."""
    return _closed_form(problem.v, problem.p, problem.a)


def solve_crp(problem: CrpProblem) -> CrpSolution:
    """Exact minimizer of the transformed problem by clamping on the closed form.

    Each pass clamps every negative coordinate to zero and re-solves the
    closed form over the remaining free set. Clamping only lowers the water
    level, so clamped coordinates never need to be released.
    """
    n = len(problem.taus)
    free = np.ones(n, dtype=bool)
    x = np.zeros(n)
    for it in range(1, n + 1):
        xf = _closed_form(problem.v[free], problem.p[free], problem.a[free])
        if (xf >= 0).all():
            x[:] = 0.0
            x[free] = xf
            return CrpSolution(problem, x, it)
        idx = np.flatnonzero(free)
        free[idx[xf < 0]] = False
    raise RuntimeError("active-set iteration cap exceeded")


def kkt_residual(solution: CrpSolution) -> tuple[float, float]:
    """(relative spread of v/(x+a)^2/p over free coords, worst clamped violation)."""
    pr, x = solution.problem, solution.x
    free = x > 0
    lam = solution.multiplier()
    ratios = pr.v[free] / (x[free] + pr.a[free]) ** 2 / pr.p[free]
    spread = float((ratios.max() - ratios.min()) / lam) if free.any() else 0.0
    clamped = ~free
    if clamped.any():
        viol = pr.v[clamped] / pr.a[clamped] ** 2 - lam * pr.p[clamped]
        worst = float(max(viol.max(), 0.0))
    else:
        worst = 0.0
    return spread, worst


def postprocess(
    solution: CrpSolution, eta: float = DEFAULT_ETA, budget: float | None = None
) -> dict[AttrSet, float]:
    """Variances for residuals whose budget share ``p x`` is at least ``eta``.

    Returns an empty dict when every measurement is dropped.
    """
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    pr = solution.problem
    c = pr.budget if budget is None else budget
    out = {}
    for tau, x, p in zip(pr.taus, solution.x, pr.p):
        if p * x >= eta:
            out[tau] = float(1.0 / (c * x))
    return out


def iid_allocation(problem: CrpProblem) -> np.ndarray:
    """Equal variance for every residual, spending the whole budget."""
    return np.full(len(problem.taus), 1.0 / problem.p.sum())


def aggregate_workload_weights(
    workload: Iterable[AttrSet], domain: Domain, taus: Iterable[AttrSet] | None = None
) -> dict[AttrSet, float]:
    """Summed variance coefficients ``sum_{gamma >= tau} v(gamma, tau)`` over the workload."""
    workload = [attrset(g) for g in workload]
    if not workload:
        raise ValueError("empty workload")
    taus = list(taus) if taus is not None else downward_closure(workload)
    out = {}
    for tau in taus:
        tau = attrset(tau)
        terms = [v_tau(domain, g, tau) for g in workload if is_subset(tau, g)]
        if not terms:
            raise ValueError(f"{tau} is not contained in any workload marginal")
        out[tau] = sum(terms)
    return out
