"""End-to-end private mechanisms built on residual measurements.

* :func:`run_aim_grem` - adaptive select/measure/reconstruct with per-round
  budget planning and lazy reconstruction.
* :func:`run_batch_planner` - one planned batch of residual measurements.
* :func:`run_iid_fixed` - a fixed measurement sequence, used to compare
  lazy vs. full reconstruction and planned vs. isotropic noise.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .crp import DEFAULT_ETA, CrpProblem, aggregate_workload_weights, postprocess, solve_crp
from .domain import AttrSet, DataTable, Domain, attrset, compute_marginal, downward_closure, subsets
from .grem import GremEngine, reconstruct_workload
from .privacy import (
    Accountant,
    exp_mech_select,
    measure_residual,
    p_tau,
    residual_batch_cost,
)
from .tensor import decomp_array

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


@dataclass
class MechanismConfig:
    eta: float = DEFAULT_ETA
    reconstruction: str = "lazy"
    audit_full_rebuild: bool = False
    # safety net only; the annealing schedule always terminates
    max_rounds: int = 1_000_000


@dataclass
class MechanismResult:
    mechanism: str
    domain: Domain
    workload: list[AttrSet]
    estimates: dict[AttrSet, np.ndarray]
    accountant: Accountant
    rounds: list[dict] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    def to_report(self, timings: bool = True) -> dict:
        names = self.domain.names
        out = {
            "mechanism": self.mechanism,
            "domain": self.domain.to_dict(),
            "workload": [names(g) for g in self.workload],
            "privacy": self.accountant.to_dict(),
            "rounds": [_jsonable_round(r, names) for r in self.rounds],
            "info": self.info,
            "estimates": [
                {
                    "attributes": names(g),
                    "shape": list(self.estimates[g].shape),
                    "values": self.estimates[g].ravel().tolist(),
                }
                for g in self.workload
            ],
        }
        if timings:
            out["timings"] = self.timings
        return out


def _jsonable_round(r: dict, names) -> dict:
    out = {}
    for key, val in r.items():
        if key == "selected":
            out[key] = names(val)
        elif key in ("allocation", "prior_precision"):
            out[key] = [{"attributes": names(t), "value": v} for t, v in val.items()]
        else:
            out[key] = val
    return out


def workload_weights(workload: Sequence[AttrSet], candidates: Iterable[AttrSet]) -> dict[AttrSet, float]:
    """Candidate weights ``w_g = sum_{pi in W} |g & pi|``."""
    return {
        g: float(sum(len(set(g) & set(pi)) for pi in workload)) for g in candidates
    }


def selection_score(mu: np.ndarray, mu_hat: np.ndarray, sigma: float, weight: float) -> float:
    """Weighted expected L1 improvement from measuring a marginal at noise scale ``sigma``."""
    l1 = float(np.abs(np.asarray(mu) - mu_hat).sum())
    return weight * (l1 - SQRT_2_OVER_PI * sigma * np.size(mu))


def budget_anneal(
    epsilon: float,
    sigma2: float,
    remaining: float,
    new_estimate: np.ndarray,
    old_estimate: np.ndarray,
) -> tuple[float, float, bool]:
    """Next round's ``(epsilon, sigma2, final)``.

    Doubles both selection and measurement budget when the estimate of the
    selected marginal moved less than the expected noise magnitude. If fewer
    than two such rounds fit in ``remaining``, the next round spends exactly
    what is left and is flagged final.
    """
    moved = float(np.abs(np.asarray(new_estimate) - old_estimate).sum())
    if moved <= SQRT_2_OVER_PI * math.sqrt(sigma2) * np.size(old_estimate):
        epsilon, sigma2 = 2.0 * epsilon, sigma2 / 4.0
    if remaining <= 2.0 * (1.0 / (2.0 * sigma2) + epsilon**2 / 8.0):
        return math.sqrt(0.8 * remaining), 1.0 / (1.8 * remaining), True
    return epsilon, sigma2, False


def _one_way_attrs(workload: Sequence[AttrSet]) -> list[int]:
    return sorted({a for g in workload for a in g})


def initialize(
    table: DataTable,
    workload: Sequence[AttrSet],
    sigma0_2: float,
    engine: GremEngine,
    accountant: Accountant,
    rng: np.random.Generator,
) -> int:
    """Measure every 1-way residual at ``sigma0_2`` and the total at ``n_i * sigma0_2``.

    Each attribute costs ``1/(2 sigma0_2)`` zCDP. Returns the number of attributes.
    """
    if not sigma0_2 > 0:
        raise ValueError("sigma0_2 must be positive")
    domain = table.domain
    total = compute_marginal(table, ())
    attrs = _one_way_attrs(workload)
    for i in attrs:
        n_i = domain.sizes[i]
        alloc = {(i,): sigma0_2, (): n_i * sigma0_2}
        accountant.compose(residual_batch_cost(domain, alloc), f"init:{domain.attrs[i]}")
        z = measure_residual(compute_marginal(table, (i,)), sigma0_2, rng)
        engine.measure((i,), z.residual.data, sigma0_2)
        z0 = measure_residual(total, n_i * sigma0_2, rng)
        engine.measure((), z0.residual.data, n_i * sigma0_2)
    engine.refresh()
    return len(attrs)


def _measure_allocation(table, engine, alloc: dict[AttrSet, float], rng) -> None:
    for tau, s2 in alloc.items():
        z = measure_residual(compute_marginal(table, tau), s2, rng)
        engine.measure(tau, z.residual.data, s2)


def _normalize_workload(workload: Iterable) -> list[AttrSet]:
    out: list[AttrSet] = []
    for g in workload:
        g = attrset(g)
        if g not in out:
            out.append(g)
    if not out or all(len(g) == 0 for g in out):
        raise ValueError("workload must contain at least one nonempty attribute set")
    return out


def run_aim_grem(
    table: DataTable,
    workload: Iterable[AttrSet],
    rho: float,
    rng: np.random.Generator,
    config: MechanismConfig | None = None,
) -> MechanismResult:
    """Adaptive mechanism: select by exponential mechanism, plan, measure, lazily reconstruct."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    config = config or MechanismConfig()
    t_start = time.perf_counter()
    domain = table.domain
    workload = _normalize_workload(workload)
    closure = downward_closure(workload)
    candidates = [g for g in closure if g]
    weights = workload_weights(workload, candidates)
    sensitivity = max(weights.values())

    acct = Accountant(rho)
    engine = GremEngine(
        domain, closure, closure, mode=config.reconstruction, audit=config.audit_full_rebuild
    )
    answers = {g: compute_marginal(table, g).data for g in candidates}

    sigma2 = len(closure) / (0.9 * rho)
    rho_init = 1.0 / (2.0 * sigma2)
    d = initialize(table, workload, sigma2, engine, acct, rng)
    epsilon = math.sqrt(0.4 * rho / len(closure))

    rounds: list[dict] = []
    timings = {"select": 0.0, "plan": 0.0, "measure": 0.0}
    final = False
    t = d
    while acct.used < rho and t - d < config.max_rounds:
        t += 1
        remaining = acct.remaining

        t0 = time.perf_counter()
        sigma = math.sqrt(sigma2)
        est = engine.estimates
        scores = {g: selection_score(answers[g], est[g], sigma, weights[g]) for g in candidates}
        gamma = exp_mech_select(scores, sensitivity, epsilon, rng)
        acct.compose(epsilon**2 / 8.0, f"select:{t}")
        t1 = time.perf_counter()

        prior = {tau: engine.store.precision[tau] for tau in subsets(gamma)}
        problem = CrpProblem.for_marginal(domain, gamma, 1.0 / (2.0 * sigma2), prior)
        solution = solve_crp(problem)
        alloc = postprocess(solution, config.eta)
        t2 = time.perf_counter()

        old = est[gamma].copy()
        _measure_allocation(table, engine, alloc, rng)
        engine.refresh()
        acct.compose(1.0 / (2.0 * sigma2), f"measure:{t}")
        t3 = time.perf_counter()

        timings["select"] += t1 - t0
        timings["plan"] += t2 - t1
        timings["measure"] += t3 - t2
        rounds.append(
            {
                "t": t,
                "selected": gamma,
                "candidates": len(scores),
                "epsilon": epsilon,
                "sigma2": sigma2,
                "final": final,
                "remaining_before": remaining,
                "cost": epsilon**2 / 8.0 + 1.0 / (2.0 * sigma2),
                "measured_cost": residual_batch_cost(domain, alloc),
                "solver_iterations": solution.iterations,
                "allocation": alloc,
                "prior_precision": prior,
            }
        )
        if final:
            break
        epsilon, sigma2, final = budget_anneal(
            epsilon, sigma2, acct.remaining, engine.estimates[gamma], old
        )

    timings["total"] = time.perf_counter() - t_start
    return MechanismResult(
        mechanism="aim-grem",
        domain=domain,
        workload=workload,
        estimates={g: engine.estimates[g].copy() for g in workload},
        accountant=acct,
        rounds=rounds,
        timings=timings,
        info={
            "closure_size": len(closure),
            "num_attributes_initialized": d,
            "rho_init": rho_init,
            "sensitivity": sensitivity,
            "num_rounds": len(rounds),
            "residual_updates": engine.updates,
        },
    )


def run_batch_planner(
    table: DataTable,
    workload: Iterable[AttrSet],
    rho: float,
    rng: np.random.Generator,
    config: MechanismConfig | None = None,
) -> MechanismResult:
    """Plan all residuals of the workload closure at once and measure each one time."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    config = config or MechanismConfig()
    t_start = time.perf_counter()
    domain = table.domain
    workload = _normalize_workload(workload)
    closure = downward_closure(workload)
    vw = aggregate_workload_weights(workload, domain, closure)
    problem = CrpProblem(
        taus=tuple(closure),
        v=np.array([vw[t] for t in closure]),
        p=np.array([p_tau(domain, t) for t in closure]),
        a=np.zeros(len(closure)),
        budget=2.0 * rho,
    )
    solution = solve_crp(problem)
    alloc = postprocess(solution, config.eta)
    acct = Accountant(rho)
    acct.compose(residual_batch_cost(domain, alloc), "measure:batch")
    engine = GremEngine(domain, workload, closure, mode="full")
    _measure_allocation(table, engine, alloc, rng)
    estimates = reconstruct_workload(engine.store, workload, domain)
    return MechanismResult(
        mechanism="batch-planner",
        domain=domain,
        workload=workload,
        estimates={g: estimates[g] for g in workload},
        accountant=acct,
        rounds=[{"t": 1, "allocation": alloc, "solver_iterations": solution.iterations}],
        timings={"total": time.perf_counter() - t_start},
        info={"closure_size": len(closure), "dropped": len(closure) - len(alloc)},
    )


def run_iid_fixed(
    table: DataTable,
    sequence: Sequence[AttrSet],
    rho: float,
    rng: np.random.Generator,
    mode: str = "lazy",
    strategy: str = "iid",
    config: MechanismConfig | None = None,
    workload: Iterable[AttrSet] | None = None,
) -> MechanismResult:
    """Measure 1-way marginals with half the budget, then ``sequence`` in order with the rest.

    ``strategy='iid'`` adds isotropic noise to each marginal and decomposes
    it; ``strategy='crp'`` plans the residual variances against current
    precisions. ``mode`` selects lazy updates or a full rebuild after each
    marginal.
    """
    if strategy not in ("iid", "crp"):
        raise ValueError(f"unknown strategy {strategy!r}")
    if not rho > 0:
        raise ValueError("rho must be positive")
    config = config or MechanismConfig()
    domain = table.domain
    sequence = [attrset(g) for g in sequence]
    if not sequence:
        raise ValueError("empty measurement sequence")
    workload = _normalize_workload(workload if workload is not None else sequence)
    closure = downward_closure(list(workload) + sequence)

    t_start = time.perf_counter()
    acct = Accountant(rho)
    engine = GremEngine(domain, workload, closure, mode=mode, audit=config.audit_full_rebuild)
    d = len(_one_way_attrs(workload + sequence))
    initialize(table, workload + sequence, d / rho, engine, acct, rng)

    sigma2 = len(sequence) / rho
    rho_each = rho / (2.0 * len(sequence))
    recon_time = 0.0
    rounds = []
    for k, gamma in enumerate(sequence, 1):
        if strategy == "iid":
            mu = compute_marginal(table, gamma).data
            y = mu + rng.normal(0.0, math.sqrt(sigma2), size=mu.shape)
            r0 = time.perf_counter()
            alloc = {}
            for tau in subsets(gamma):
                s2 = sigma2 * domain.cells(tuple(a for a in gamma if a not in tau))
                alloc[tau] = s2
                engine.measure(tau, decomp_array(y, gamma, tau), s2)
        else:
            prior = {tau: engine.store.precision[tau] for tau in subsets(gamma)}
            alloc = postprocess(
                solve_crp(CrpProblem.for_marginal(domain, gamma, rho_each, prior)), config.eta
            )
            r0 = time.perf_counter()
            _measure_allocation(table, engine, alloc, rng)
        engine.refresh()
        recon_time += time.perf_counter() - r0
        acct.compose(rho_each, f"measure:{k}")
        rounds.append({"t": k, "selected": gamma, "allocation": alloc})

    return MechanismResult(
        mechanism=f"iid-fixed[{mode}+{strategy}]",
        domain=domain,
        workload=workload,
        estimates={g: engine.estimates[g].copy() for g in workload},
        accountant=acct,
        rounds=rounds,
        timings={"total": time.perf_counter() - t_start, "update": recon_time},
        info={"mode": mode, "strategy": strategy, "residual_updates": engine.updates},
    )


def workload_errors(
    estimates: dict[AttrSet, np.ndarray], table: DataTable, workload: Iterable[AttrSet] | None = None
) -> dict[str, float]:
    """Mean L1 (raw and per record), mean L2 and max L1 error over the workload."""
    workload = list(workload) if workload is not None else list(estimates)
    l1, l2 = [], []
    for g in workload:
        diff = estimates[g] - compute_marginal(table, g).data
        l1.append(float(np.abs(diff).sum()))
        l2.append(float(np.sqrt((diff**2).sum())))
    n = max(len(table), 1)
    return {
        "meanL1": float(np.mean(l1)),
        "meanL1_normalized": float(np.mean(l1)) / n,
        "meanL2": float(np.mean(l2)),
        "maxL1": float(np.max(l1)),
    }
