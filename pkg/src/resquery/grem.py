"""Residual estimate store and marginal reconstruction (GReM-MLE with lazy updates)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .domain import AttrSet, Domain, attrset, downward_closure, subsets
from .tensor import recon_expanded


@dataclass
class ResidualEstimateStore:
    """Consolidated residual estimates ``z[tau]`` with precisions ``precision[tau]``.

    Unmeasured residuals hold a zero array with zero precision.
    """

    domain: Domain
    z: dict[AttrSet, np.ndarray] = field(default_factory=dict)
    precision: dict[AttrSet, float] = field(default_factory=dict)

    @classmethod
    def empty(cls, domain: Domain, closure: Iterable[AttrSet]) -> ResidualEstimateStore:
        store = cls(domain)
        for tau in closure:
            store.ensure(attrset(tau))
        return store

    def ensure(self, tau: AttrSet) -> None:
        if tau not in self.z:
            self.z[tau] = np.zeros(self.domain.residual_shape(tau))
            self.precision[tau] = 0.0

    def variance(self, tau: AttrSet) -> float:
        lam = self.precision.get(tau, 0.0)
        return np.inf if lam == 0 else 1.0 / lam

    def measured(self) -> list[AttrSet]:
        return [tau for tau, lam in self.precision.items() if lam > 0]


def consolidate(
    store: ResidualEstimateStore, tau: AttrSet, z_new: np.ndarray, variance: float
) -> tuple[np.ndarray, np.ndarray]:
    """Fold a new measurement into the inverse-variance weighted average.

    Returns ``(z_old, z_consolidated)``.
    """
    if not variance > 0:
        raise ValueError(f"variance must be positive, got {variance}")
    tau = attrset(tau)
    store.ensure(tau)
    z_new = np.asarray(z_new, dtype=np.float64)
    z_old = store.z[tau]
    if z_new.shape != z_old.shape:
        raise ValueError(f"shape {z_new.shape} does not match residual {tau} shape {z_old.shape}")
    lam = store.precision[tau]
    w = 1.0 / variance
    z_cons = (lam * z_old + w * z_new) / (lam + w)
    store.z[tau] = z_cons
    store.precision[tau] = lam + w
    return z_old, z_cons


class MarginalEstimateSet:
    """Materialized marginal estimates for a fixed collection of attribute sets."""

    def __init__(self, domain: Domain, targets: Iterable[AttrSet]):
        self.domain = domain
        self.marginals: dict[AttrSet, np.ndarray] = {
            attrset(g): np.zeros(domain.shape(attrset(g))) for g in targets
        }
        # residual -> targets containing it
        self._supersets: dict[AttrSet, list[AttrSet]] = {}
        for gamma in self.marginals:
            for tau in subsets(gamma):
                self._supersets.setdefault(tau, []).append(gamma)

    def __getitem__(self, gamma: AttrSet) -> np.ndarray:
        return self.marginals[gamma]

    def __contains__(self, gamma) -> bool:
        return gamma in self.marginals

    def __iter__(self):
        return iter(self.marginals)

    def supersets(self, tau: AttrSet) -> list[AttrSet]:
        return self._supersets.get(tau, [])

    def copy(self) -> MarginalEstimateSet:
        new = MarginalEstimateSet.__new__(MarginalEstimateSet)
        new.domain = self.domain
        new.marginals = {g: m.copy() for g, m in self.marginals.items()}
        new._supersets = self._supersets
        return new


def reconstruct_workload(
    store: ResidualEstimateStore, workload: Iterable[AttrSet], domain: Domain | None = None
) -> MarginalEstimateSet:
    """Full GReM-MLE reconstruction of every target from the current store."""
    domain = domain or store.domain
    est = MarginalEstimateSet(domain, workload)
    for gamma, out in est.marginals.items():
        for tau in subsets(gamma):
            z = store.z.get(tau)
            if z is None or store.precision.get(tau, 0.0) == 0.0:
                continue
            out += recon_expanded(z, tau, gamma, domain)
    return est


def lazy_update(
    estimates: MarginalEstimateSet, tau: AttrSet, z_old: np.ndarray, z_new: np.ndarray
) -> int:
    """Propagate a change of residual ``tau`` into every target containing it.

    Returns the number of targets touched.
    """
    targets = estimates.supersets(tau)
    if not targets:
        return 0
    delta = np.asarray(z_new, dtype=np.float64) - z_old
    if not delta.any():
        return 0
    for gamma in targets:
        estimates.marginals[gamma] += recon_expanded(delta, tau, gamma, estimates.domain)
    return len(targets)


class GremEngine:
    """Store plus estimates kept in sync, either lazily or by full rebuilds.

    With ``mode='full'`` the estimates are only refreshed by :meth:`refresh`.
    ``audit`` compares lazy estimates against a full rebuild after each update.
    """

    def __init__(
        self,
        domain: Domain,
        targets: Iterable[AttrSet],
        closure: Iterable[AttrSet] | None = None,
        mode: str = "lazy",
        audit: bool = False,
    ):
        if mode not in ("lazy", "full"):
            raise ValueError(f"unknown reconstruction mode {mode!r}")
        targets = [attrset(g) for g in targets]
        self.domain = domain
        self.mode = mode
        self.audit = audit
        self.targets = targets
        closure = list(closure) if closure is not None else downward_closure(targets)
        self.store = ResidualEstimateStore.empty(domain, closure)
        self.estimates = MarginalEstimateSet(domain, targets)
        self.updates = 0

    def measure(self, tau: AttrSet, z: np.ndarray, variance: float) -> None:
        z_old, z_new = consolidate(self.store, tau, z, variance)
        self.updates += 1
        if self.mode == "lazy":
            lazy_update(self.estimates, tau, z_old, z_new)
            if self.audit:
                self.check_consistent()

    def refresh(self) -> None:
        """Rebuild all estimates from scratch (no-op in lazy mode)."""
        if self.mode == "full":
            self.estimates = reconstruct_workload(self.store, self.targets, self.domain)

    def check_consistent(self, atol: float = 1e-8) -> float:
        full = reconstruct_workload(self.store, self.targets, self.domain)
        worst = max(
            (float(np.max(np.abs(full[g] - self.estimates[g]), initial=0.0)) for g in self.targets),
            default=0.0,
        )
        if worst > atol * (1 + max(float(np.max(np.abs(full[g]), initial=0.0)) for g in self.targets)):
            raise AssertionError(f"lazy estimates diverged from full rebuild by {worst:.3g}")
        return worst
