"""Acceptance criteria for experiment result tables.

Each check reduces the table (median over seeds where several are present)
to one number and compares it with a threshold.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from itertools import combinations
from typing import Callable, Dict, List

import numpy as np

from ..errors import AcceptanceError
from ..metrics import spearman
from .config import Experiment
from .results import ResultTable

logger = logging.getLogger(__name__)

MIRROR_FRACTION = 0.2
IDENTITY_RANK = 0.8
CORRELATION_RANK = 0.5
PAIR_AGREEMENT = 0.8
ORDER_RANK = 0.5
NO_HARM_FACTOR = 1.1
DATA_GAIN = 0.5


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _median_by(table: ResultTable, value: str, key: str, **match) -> Dict[float, float]:
    groups: Dict[float, List[float]] = {}
    for row in table.where(**match):
        groups.setdefault(row[key], []).append(row[value])
    return {k: float(np.median(v)) for k, v in sorted(groups.items())}


def _check(name: str, value: float, threshold: float, ok: bool, detail: str = "") -> CheckResult:
    return CheckResult(name, bool(ok), float(value), float(threshold), detail)


def _symmetry(table: ResultTable) -> List[CheckResult]:
    curve = _median_by(table, "d_sym", "param", arm="symmetry")
    ident = _median_by(table, "d_identity", "param", arm="symmetry")
    ps = np.array(list(curve))
    d = np.array(list(curve.values()))
    span = float(d.max() - d.min())
    interior = d[(ps > 0) & (ps < 1)]
    endpoints = d[(ps == 0) | (ps == 1)]
    mirror = max((abs(curve[p] - curve[round(1 - p, 10)]) for p in curve if round(1 - p, 10) in curve),
                 default=0.0)
    peak = float(ps[int(np.argmax(d))])
    ident_ps = list(ident)
    rho = spearman(ident_ps, [ident[p] for p in ident_ps]) if len(ident_ps) > 2 else float("nan")
    return [
        _check("endpoints-smallest", float(endpoints.max()) if endpoints.size else np.nan,
               float(interior.min()) if interior.size else np.nan,
               endpoints.size > 0 and (interior.size == 0 or endpoints.max() <= interior.min())),
        _check("peak-at-half", peak, 0.5, abs(peak - 0.5) < 1e-9, f"argmax over {list(curve)}"),
        _check("mirror", mirror, MIRROR_FRACTION * span, mirror <= MIRROR_FRACTION * span + 1e-12),
        _check("identity-rank", rho, IDENTITY_RANK, rho >= IDENTITY_RANK, "spearman of d_identity over the whole grid"),
    ]


def _correlation(table: ResultTable) -> List[CheckResult]:
    rows = table.where(arm="correlation")
    alphas = sorted({r["alpha"] for r in rows})
    checks = []
    per_alpha = {}
    for alpha in alphas:
        d = _median_by(table, "d_sym", "param", arm="correlation", alpha=alpha)
        cf = _median_by(table, "cf_loss", "param", arm="correlation", alpha=alpha)
        per_alpha[alpha] = d
        rho = spearman(list(d.values()), [cf[k] for k in d])
        checks.append(_check(f"rank-correlation[alpha={alpha:g}]", rho, CORRELATION_RANK, rho >= CORRELATION_RANK))
    if len(alphas) > 1:
        agree = total = 0
        keys = sorted(set.intersection(*(set(v) for v in per_alpha.values())))
        for i, j in combinations(keys, 2):
            signs = {np.sign(per_alpha[a][i] - per_alpha[a][j]) for a in alphas}
            total += 1
            agree += len(signs) == 1
        frac = agree / total if total else 1.0
        checks.append(_check("cross-alpha-agreement", frac, PAIR_AGREEMENT, frac >= PAIR_AGREEMENT))
    factual = _median_by(table, "d_sym", "param", arm="correlation", alpha=alphas[0]) if alphas else {}
    counter = _median_by(table, "d_sym", "param", arm="correlation-cf")
    keys = [k for k in factual if k in counter]
    if len(keys) > 2:
        rho = spearman([factual[k] for k in keys], [counter[k] for k in keys])
        checks.append(_check("order-preservation", rho, ORDER_RANK, rho >= ORDER_RANK))
    return checks


def _efficiency(table: ResultTable) -> List[CheckResult]:
    practice = _median_by(table, "pehe", "n_train", arm="scratch-practice")
    transfer = _median_by(table, "pehe", "n_train", arm="transfer")
    smallest, largest = min(transfer), max(practice)
    summary = table.metadata.get("summary") or {}
    gain = float(summary.get("data_gain", 0.0))
    return [
        _check("transfer-small-beats-scratch-full", transfer[smallest], practice[largest],
               transfer[smallest] <= practice[largest], f"n={smallest} vs n={largest}"),
        _check("no-harm-at-saturation", transfer[max(transfer)], NO_HARM_FACTOR * practice[largest],
               transfer[max(transfer)] <= NO_HARM_FACTOR * practice[largest]),
        _check("data-gain", gain, DATA_GAIN, gain >= DATA_GAIN),
    ]


def _transfer(table: ResultTable) -> List[CheckResult]:
    t = float(np.median(table.column("pehe", arm="transfer")))
    s = float(np.median(table.column("pehe", arm="scratch")))
    return [_check("transfer-beats-scratch", t, s, t <= s)]


def _bundling(table: ResultTable) -> List[CheckResult]:
    t = float(np.median(table.column("pehe", arm="transfer")))
    bundles = _median_by(table, "pehe", "param", arm="bundle")
    full = bundles[max(bundles)]
    return [_check("transfer-beats-full-bundle", t, full, t <= full, f"{int(max(bundles))} sources bundled")]


def _bounds(table: ResultTable) -> List[CheckResult]:
    checks = []
    for part in table.metadata.get("per_seed", [table.metadata]):
        by_name: Dict[str, List[dict]] = {}
        for rep in part.get("bounds", []):
            by_name.setdefault(rep["name"], []).append(rep)
        for name, reps in sorted(by_name.items()):
            failed = sum(not r["holds"] for r in reps)
            checks.append(_check(f"{name}[seed={part.get('seed')}]", failed, 0, failed == 0,
                                 f"{len(reps) - failed}/{len(reps)} hold"))
    return checks


_EVALUATORS: Dict[Experiment, Callable[[ResultTable], List[CheckResult]]] = {
    Experiment.SYMMETRY: _symmetry,
    Experiment.CORRELATION: _correlation,
    Experiment.EFFICIENCY: _efficiency,
    Experiment.TRANSFER: _transfer,
    Experiment.BUNDLING: _bundling,
    Experiment.VERIFY_BOUNDS: _bounds,
}


def evaluate(experiment: Experiment, table: ResultTable, *, strict: bool = True) -> List[CheckResult]:
    """Run the checks for ``experiment``; with ``strict`` any failure raises."""
    checks = _EVALUATORS[Experiment(experiment)](table)
    for check in checks:
        log = logger.info if check.passed else logger.warning
        log("acceptance %s: %s (value=%.6g, threshold=%.6g)", check.name, "pass" if check.passed else "FAIL",
            check.value, check.threshold, extra={"check": check.name, "passed": check.passed})
    failed = [c for c in checks if not c.passed]
    if strict and failed:
        raise AcceptanceError(failed)
    return checks
