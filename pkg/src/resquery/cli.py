"""Command-line front end: ingest a CSV, run a mechanism, write report and metrics."""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kron
from .crp import DEFAULT_ETA
from .domain import AttrSet, DataTable, Domain
from .mechanisms import (
    MechanismConfig,
    run_aim_grem,
    run_batch_planner,
    run_iid_fixed,
    workload_errors,
)
from .privacy import calibrate_rho
from .tensor import decomp_array, recon_array

log = logging.getLogger("resquery")

MECHANISMS = ("aim-grem", "batch-planner", "iid-fixed")
METRICS = ("meanL1", "meanL1_normalized", "meanL2", "maxL1")
METRICS_HEADER = ["mechanism", "seed", "epsilon_or_rho", "metric", "value", "wall_seconds"]
BENCH_HEADER = ["setting", "size", "method", "seconds"]


class CliError(Exception):
    pass


@dataclass
class RunConfig:
    mechanism: str = "aim-grem"
    rho: float | None = None
    epsilon: float | None = None
    delta: float | None = None
    workload: str = "all-2way"
    seed: int = 0
    eta: float = DEFAULT_ETA
    trials: int = 1
    output: Path = Path("out")
    reconstruction: str = "lazy"
    strategy: str = "iid"
    audit_full_rebuild: bool = False
    reproducible: bool = False
    data: Path | None = None
    domain: Path | None = None

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise CliError(f"unknown mechanism {self.mechanism!r}")
        direct = self.rho is not None
        converted = self.epsilon is not None or self.delta is not None
        if direct == converted:
            raise CliError("give exactly one of --rho or (--epsilon, --delta)")
        if converted and (self.epsilon is None or self.delta is None):
            raise CliError("--epsilon and --delta must be given together")
        if self.trials < 1:
            raise CliError("--trials must be at least 1")

    def resolve_rho(self) -> float:
        if self.rho is not None:
            return self.rho
        return calibrate_rho(self.epsilon, self.delta)


# ---------------------------------------------------------------- ingestion


def _values_path(domain_path: Path) -> Path:
    return domain_path.with_name(domain_path.stem + ".values.json")


def ingest_csv(path, domain_path=None) -> tuple[DataTable, dict[str, list[str]]]:
    """Read a categorical CSV into a :class:`DataTable`.

    With a domain file, values are validated against it (as category codes
    ``0..n-1`` unless a ``<domain>.values.json`` dictionary sits next to it).
    Without one, the domain is inferred from first-appearance order and
    columns with fewer than two distinct values are dropped. Rows with an
    empty cell are dropped in both cases.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [r for r in reader if r]
    except (OSError, StopIteration, UnicodeDecodeError) as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc
    header = [h.strip() for h in header]

    kept = []
    for lineno, r in enumerate(rows, start=2):
        if len(r) != len(header) or any(c.strip() == "" for c in r):
            log.warning("dropping row %d: missing value", lineno)
            continue
        kept.append([c.strip() for c in r])

    if domain_path is not None:
        domain_path = Path(domain_path)
        try:
            sizes = json.loads(domain_path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read domain file {domain_path}: {exc}") from exc
        domain = Domain.from_dict(sizes)
        vpath = _values_path(domain_path)
        values = json.loads(vpath.read_text()) if vpath.exists() else None
        cols = []
        for a in domain.attrs:
            if a not in header:
                raise CliError(f"column {a!r} from the domain file is missing in {path}")
            cols.append(header.index(a))
        codes = np.zeros((len(kept), len(domain)), dtype=np.int64)
        for j, (a, n, c) in enumerate(zip(domain.attrs, domain.sizes, cols)):
            lookup = {v: k for k, v in enumerate(values[a])} if values else None
            for i, r in enumerate(kept):
                try:
                    code = lookup[r[c]] if lookup is not None else int(r[c])
                except (KeyError, ValueError):
                    raise CliError(f"value {r[c]!r} of {a!r} is not in the declared domain") from None
                if not 0 <= code < n:
                    raise CliError(f"value {r[c]!r} of {a!r} is outside 0..{n - 1}")
                codes[i, j] = code
        if values is None:
            values = {a: [str(k) for k in range(n)] for a, n in zip(domain.attrs, domain.sizes)}
        return DataTable(domain, codes), values

    values: dict[str, list[str]] = {}
    columns = []
    for j, a in enumerate(header):
        seen: dict[str, int] = {}
        col = [seen.setdefault(r[j], len(seen)) for r in kept]
        if len(seen) < 2:
            log.warning("dropping column %r: fewer than two distinct values", a)
            continue
        values[a] = list(seen)
        columns.append(col)
    domain = Domain(tuple(values), tuple(len(v) for v in values.values()))
    records = np.array(columns, dtype=np.int64).T if columns else np.zeros((len(kept), 0), int)
    return DataTable(domain, records.reshape(len(kept), len(domain))), values


def parse_workload(text: str, domain: Domain) -> list[AttrSet]:
    """``all-Kway`` shorthand or a JSON file holding a list of attribute-name lists."""
    if text.startswith("all-") and text.endswith("way"):
        try:
            k = int(text[4:-3])
        except ValueError:
            raise CliError(f"bad workload shorthand {text!r}") from None
        if not 1 <= k <= len(domain):
            raise CliError(f"{text} needs between 1 and {len(domain)} attributes")
        return [tuple(c) for c in itertools.combinations(range(len(domain)), k)]
    try:
        sets = json.loads(Path(text).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read workload {text}: {exc}") from exc
    try:
        return [domain.index(s) for s in sets]
    except KeyError as exc:
        raise CliError(str(exc)) from None


# ---------------------------------------------------------------- running


def _run_once(config: RunConfig, table: DataTable, workload, rho: float, seed: int):
    rng = np.random.default_rng(seed)
    mcfg = MechanismConfig(
        eta=config.eta,
        reconstruction=config.reconstruction,
        audit_full_rebuild=config.audit_full_rebuild,
    )
    if config.mechanism == "aim-grem":
        return run_aim_grem(table, workload, rho, rng, mcfg)
    if config.mechanism == "batch-planner":
        return run_batch_planner(table, workload, rho, rng, mcfg)
    return run_iid_fixed(
        table, workload, rho, rng, mode=config.reconstruction, strategy=config.strategy, config=mcfg
    )


def run(config: RunConfig, table: DataTable | None = None) -> int:
    """Execute ``config.trials`` seeded runs and write ``report.json`` and ``metrics.csv``."""
    values = None
    if table is None:
        if config.data is None:
            raise CliError("--data is required")
        table, values = ingest_csv(config.data, config.domain)
    workload = parse_workload(config.workload, table.domain)
    rho = config.resolve_rho()
    label = rho if config.rho is not None else config.epsilon

    out = Path(config.output)
    out.mkdir(parents=True, exist_ok=True)
    trials, metric_rows = [], []
    for k in range(config.trials):
        seed = config.seed + k
        t0 = time.perf_counter()
        result = _run_once(config, table, workload, rho, seed)
        wall = 0.0 if config.reproducible else time.perf_counter() - t0
        metrics = workload_errors(result.estimates, table, result.workload)
        report = result.to_report(timings=not config.reproducible)
        report.update(seed=seed, metrics=metrics, records=len(table))
        trials.append(report)
        for m in METRICS:
            metric_rows.append([config.mechanism, seed, label, m, repr(metrics[m]), repr(wall)])
        log.info(
            "%s seed=%d rho_used=%.6g meanL1=%.6g", config.mechanism, seed,
            result.accountant.used, metrics["meanL1"],
        )

    doc = {
        "config": {
            "mechanism": config.mechanism,
            "workload": config.workload,
            "seed": config.seed,
            "trials": config.trials,
            "eta": config.eta,
            "reconstruction": config.reconstruction,
            "strategy": config.strategy,
        },
        "privacy": {"rho": rho, "epsilon": config.epsilon, "delta": config.delta},
        "trials": trials,
    }
    if values is not None:
        doc["values"] = values
    (out / "report.json").write_text(json.dumps(doc, indent=1) + "\n")
    with (out / "metrics.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        w.writerows(metric_rows)
    return 0


# ---------------------------------------------------------------- benchmark


def _best_time(fn, repeats: int) -> float:
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def benchmark_case(n: int, k: int, repeats: int = 3, seed: int = 0) -> dict[str, float]:
    """Time in-axis and Kronecker decomp/recon of a k-way marginal with n categories per axis."""
    domain = Domain(tuple(f"a{i}" for i in range(k)), (n,) * k)
    gamma = tuple(range(k))
    rng = np.random.default_rng(seed)
    mu = rng.integers(0, 10, size=domain.shape(gamma)).astype(float)
    dec = kron.query_factors(domain, "decomp", gamma, gamma)
    rec = kron.query_factors(domain, "recon", gamma, gamma)

    z = decomp_array(mu, gamma, gamma)
    z_kron = kron.shuffle_matvec(dec, mu)
    m = recon_array(z, gamma, gamma, domain)
    m_kron = kron.shuffle_matvec(rec, z)
    for a, b in ((z, z_kron), (m, m_kron)):
        if np.max(np.abs(a - b)) > 1e-10 * (1 + np.max(np.abs(a))):
            raise AssertionError(f"in-axis and Kronecker outputs disagree at n={n}, k={k}")

    return {
        "in-axis:decomp": _best_time(lambda: decomp_array(mu, gamma, gamma), repeats),
        "kronecker:decomp": _best_time(lambda: kron.shuffle_matvec(dec, mu), repeats),
        "in-axis:recon": _best_time(lambda: recon_array(z, gamma, gamma, domain), repeats),
        "kronecker:recon": _best_time(lambda: kron.shuffle_matvec(rec, z), repeats),
    }


def benchmark(
    output: Path,
    max_cells: int = 2**22,
    repeats: int = 3,
    degrees: Sequence[int] = range(2, 8),
    sizes: Sequence[int] = (2, 4, 8, 16, 32, 64, 128, 256),
) -> list[list]:
    """Fixed n=16 over marginal degree, then fixed degree 3 over n; writes benchmark.csv."""
    rows = []
    cases = [("fixed_size", k, 16, k) for k in degrees] + [("fixed_degree", n, n, 3) for n in sizes]
    for setting, label, n, k in cases:
        if n**k > max_cells:
            log.info("skipping %s n=%d k=%d: %d cells over cap", setting, n, k, n**k)
            continue
        for method, secs in benchmark_case(n, k, repeats).items():
            rows.append([setting, label, method, repr(secs)])
    output = Path(output)
    output.mkdir(parents=True, exist_ok=True)
    with (output / "benchmark.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BENCH_HEADER)
        w.writerows(rows)
    return rows


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="resquery",
        description="Answer marginal workloads under zCDP with noisy residual measurements.",
    )
    p.add_argument("--mechanism", choices=MECHANISMS, default="aim-grem")
    p.add_argument("--rho", type=float, help="zCDP budget")
    p.add_argument("--epsilon", type=float, help="(epsilon, delta)-DP target; converted to rho")
    p.add_argument("--delta", type=float)
    p.add_argument("--workload", default="all-2way", help="'all-Kway' or a JSON list of attribute lists")
    p.add_argument("--data", type=Path, help="input CSV with a header row")
    p.add_argument("--domain", type=Path, help="JSON object: attribute -> cardinality")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--eta", type=float, default=DEFAULT_ETA, help="drop residuals with budget share below this")
    p.add_argument("--output", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--reconstruction", choices=("lazy", "full"), default="lazy")
    p.add_argument("--strategy", choices=("iid", "crp"), default="iid", help="noise strategy for iid-fixed")
    p.add_argument("--audit-full-rebuild", action="store_true", help="check lazy estimates after every update")
    p.add_argument("--reproducible", action="store_true", help="omit wall-clock timings from outputs")
    p.add_argument("--benchmark", action="store_true", help="time in-axis vs Kronecker transforms")
    p.add_argument("--bench-max-cells", type=int, default=2**22)
    p.add_argument("--bench-repeats", type=int, default=3)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.benchmark:
            benchmark(args.output, args.bench_max_cells, args.bench_repeats)
            return 0
        config = RunConfig(
            mechanism=args.mechanism,
            rho=args.rho,
            epsilon=args.epsilon,
            delta=args.delta,
            workload=args.workload,
            seed=args.seed,
            eta=args.eta,
            trials=args.trials,
            output=args.output,
            reconstruction=args.reconstruction,
            strategy=args.strategy,
            audit_full_rebuild=args.audit_full_rebuild,
            reproducible=args.reproducible,
            data=args.data,
            domain=args.domain,
        )
        return run(config)
    except (CliError, ValueError, KeyError, OverflowError) as exc:
        print(f"resquery: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
