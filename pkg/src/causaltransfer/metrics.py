"""Causal performance metrics and numerical checks of the generalization bounds.

Bound checks evaluate both sides of an inequality on synthetic tasks whose
outcome surfaces are known in closed form. Each check returns a
:class:`BoundReport`; the right-hand side is always the sum of its named
components.

Function-class distances (IPMs) are evaluated as ``K * W1`` where ``W1`` is
the exact 1-Wasserstein distance between the empirical clouds and ``K`` is the
Lipschitz constant, on the union of the cloud supports, of the loss surface
being transported. On finite supports this makes each bound exact for the
empirical measures, so the tolerance only has to absorb the gap between the
sample and the population.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Sequence, Tuple, runtime_checkable

import numpy as np
from scipy import integrate, stats

from ._io import PathLike, dump_json, load_json
from .balance import PointCloud, cost_matrix, exact_w1, EXACT_SIZE_CAP
from .datagen import CausalDataset, DatasetMeta, Family, heat_outcomes, mean_outcomes
from .errors import ConfigError, DatasetError, DegenerateGroupError, PotentialsUnavailableError
from .tarnet import LossKind, TarNetModel

logger = logging.getLogger(__name__)

THM1_TOLERANCE = 0.05
SANDWICH_TOLERANCE = 0.05
TRANSFER_TOLERANCE = 0.05
L1_TOLERANCE = 0.10
ASSUMPTIONS_NOTE = "smoothness and overlap assumptions declared, not verified"

# unit-variance Gaussian noise on the outcome surfaces
_NOISY_FAMILIES = {Family.IHDP.value, Family.SURROGATE.value}


@runtime_checkable
class OutcomePredictor(Protocol):
    def predict_outcomes(self, X: np.ndarray) -> np.ndarray:
        """Predicted mean outcomes, one column per treatment."""


@dataclass(frozen=True)
class OraclePredictor:
    """Predicts the noise-free outcome surfaces of a generated task."""

    meta: DatasetMeta

    def predict_outcomes(self, X: np.ndarray) -> np.ndarray:
        return mean_outcomes(self.meta, X)


@dataclass(frozen=True)
class ConstantPredictor:
    values: Tuple[float, ...] = (0.0, 0.0)

    def predict_outcomes(self, X: np.ndarray) -> np.ndarray:
        n = np.atleast_2d(np.asarray(X)).shape[0]
        return np.tile(np.asarray(self.values, dtype=np.float64), (n, 1))


def _require_potentials(ds: CausalDataset, what: str) -> None:
    if not ds.has_potentials:
        raise PotentialsUnavailableError(f"{what} unavailable on factual-only data ({ds.dataset_id})")


def _require_squared(model: OutcomePredictor) -> None:
    meta = getattr(model, "meta", None)
    if meta is not None and getattr(meta, "loss_kind", LossKind.SQUARED_ERROR) is not LossKind.SQUARED_ERROR:
        raise ConfigError(f"bound checks need a squared-error model, got {meta.loss_kind.value}")


# Metrics


def pehe(model: OutcomePredictor, ds: CausalDataset) -> float:
    """Mean over rows of (τ̂(x) − τ(x))², τ read from the potential table."""
    _require_potentials(ds, "PEHE")
    out = model.predict_outcomes(ds.x)
    tau_hat = out[:, 1] - out[:, 0]
    tau = ds.potential[:, 1] - ds.potential[:, 0]
    return float(np.mean((tau_hat - tau) ** 2))


def ate_error(model: OutcomePredictor, ds: CausalDataset) -> float:
    _require_potentials(ds, "ATE error")
    out = model.predict_outcomes(ds.x)
    return float(abs(np.mean(out[:, 1] - out[:, 0]) - np.mean(ds.potential[:, 1] - ds.potential[:, 0])))


@dataclass(frozen=True)
class LossReport:
    factual: float
    factual_by_group: Tuple[float, float]
    u: float
    counterfactual: Optional[float] = None
    counterfactual_by_group: Optional[Tuple[float, float]] = None

    def to_dict(self) -> dict:
        return {
            "factual": self.factual, "factual_by_group": list(self.factual_by_group), "u": self.u,
            "counterfactual": self.counterfactual,
            "counterfactual_by_group": None if self.counterfactual_by_group is None else list(self.counterfactual_by_group),
        }


def losses(model: OutcomePredictor, ds: CausalDataset) -> LossReport:
    """Factual and counterfactual squared losses with their group split.

    ``counterfactual_by_group[0]`` is the control head evaluated on treated
    units against Y0, ``[1]`` the treated head on control units against Y1.
    """
    if ds.M != 1:
        raise DatasetError(f"group losses are defined for binary treatments, got M={ds.M}")
    treated = ds.a == 1
    if treated.all() or not treated.any():
        raise DegenerateGroupError(f"single-group dataset {ds.dataset_id}: group losses undefined")
    out = model.predict_outcomes(ds.x)
    rows = np.arange(ds.n)
    factual = (out[rows, ds.a] - ds.y) ** 2
    u = float(treated.mean())
    by_group = (float(factual[~treated].mean()), float(factual[treated].mean()))
    if not ds.has_potentials:
        return LossReport(float(factual.mean()), by_group, u)
    cf_a = 1 - ds.a
    cf = (out[rows, cf_a] - ds.potential[rows, cf_a]) ** 2
    cf_by_group = (float(cf[treated].mean()), float(cf[~treated].mean()))
    return LossReport(float(factual.mean()), by_group, u, float(cf.mean()), cf_by_group)


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    if len(x) < 2:
        return float("nan")
    return float(stats.spearmanr(x, y).correlation)


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    if len(x) < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return float("nan")
    return float(stats.pearsonr(x, y)[0])


# Bound reports


class BoundName(str, Enum):
    THM1_LOWER = "thm1_lower"
    SHALIT_SANDWICH = "shalit_sandwich"
    THM3_IPM_CF = "thm3_ipm_cf"
    THM3_IPM_PEHE = "thm3_ipm_pehe"
    LEMMA2_CF = "lemma2_cf"
    THM5_PEHE = "thm5_pehe"
    THM2_L1_HEAT = "thm2_l1_heat"


@dataclass(frozen=True)
class BoundReport:
    name: BoundName
    lhs: float
    components: Dict[str, float]
    tolerance: float
    diagnostics: Dict[str, float] = field(default_factory=dict)
    notes: Tuple[str, ...] = field(default_factory=tuple)

    @property
    def rhs(self) -> float:
        return float(sum(self.components.values()))

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def holds(self) -> bool:
        return bool(self.lhs <= self.rhs + self.tolerance)

    def to_dict(self) -> dict:
        return {
            "name": BoundName(self.name).value, "lhs": self.lhs, "rhs": self.rhs, "slack": self.slack,
            "holds": self.holds, "tolerance": self.tolerance, "components": self.components,
            "diagnostics": self.diagnostics, "notes": list(self.notes),
        }


def _report(name: BoundName, lhs: float, components: Dict[str, float], rel_tol: float, **kw) -> BoundReport:
    rhs = float(sum(components.values()))
    tol = rel_tol * abs(rhs) + 1e-9 if np.isfinite(rhs) else 0.0
    report = BoundReport(name, float(lhs), {k: float(v) for k, v in components.items()}, tol, **kw)
    log = logger.debug if report.holds else logger.warning
    log("%s: lhs=%.6g rhs=%.6g holds=%s", name.value, report.lhs, report.rhs, report.holds)
    return report


def check_thm1(model: OutcomePredictor, ds: CausalDataset) -> BoundReport:
    """ε_F + u·ε_CF^{a=0} ≤ PEHE.

    The omitted counterfactual term and the error cross term close the gap
    exactly: rhs − lhs = (1−u)·ε_CF^{a=1} − 2·mean(e1·e0). The cross term
    vanishes only in expectation, hence the relative tolerance.
    """
    _require_squared(model)
    _require_potentials(ds, "PEHE")
    rep = losses(model, ds)
    out = model.predict_outcomes(ds.x)
    e0 = out[:, 0] - ds.potential[:, 0]
    e1 = out[:, 1] - ds.potential[:, 1]
    u = rep.u
    diagnostics = {
        "factual": rep.factual,
        "u_cf_a0": u * rep.counterfactual_by_group[0],
        "omitted_cf_term": (1 - u) * rep.counterfactual_by_group[1],
        "cross_term": float(-2.0 * np.mean(e1 * e0)),
    }
    lhs = rep.factual + u * rep.counterfactual_by_group[0]
    return _report(BoundName.THM1_LOWER, lhs, {"pehe": pehe(model, ds)}, THM1_TOLERANCE, diagnostics=diagnostics)


def check_shalit_sandwich(model: OutcomePredictor, ds: CausalDataset) -> BoundReport:
    """PEHE ≤ 2 ε_F + 2 ε_CF."""
    _require_squared(model)
    _require_potentials(ds, "PEHE")
    rep = losses(model, ds)
    components = {"2*eps_F": 2.0 * rep.factual, "2*eps_CF": 2.0 * rep.counterfactual}
    return _report(BoundName.SHALIT_SANDWICH, pehe(model, ds), components, SANDWICH_TOLERANCE)


# Transfer bounds


def lipschitz_on_support(points: np.ndarray, values: np.ndarray) -> float:
    """Smallest K with |g_i − g_j| ≤ K‖p_i − p_j‖ over all point pairs; inf if
    two coincident points carry different values."""
    points = np.asarray(points, dtype=np.float64)
    dist = cost_matrix(points, points)
    diff = np.abs(values[:, None] - values[None, :])
    # coincident points evaluated in different batches may differ in the last bits
    diff[diff <= 1e-9 * max(1.0, float(np.max(np.abs(values))))] = 0.0
    if np.any((dist == 0) & (diff > 0)):
        return float("inf")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(dist > 0, diff / dist, 0.0)
    return float(ratio.max())


def _w1(p: np.ndarray, q: np.ndarray) -> float:
    return exact_w1(PointCloud(p), PointCloud(q)).cost


def _scaled(k: float, w: float) -> float:
    return 0.0 if w == 0.0 else k * w


def _noise_var(meta: DatasetMeta) -> float:
    return 1.0 if meta.family in _NOISY_FAMILIES else 0.0


def _expected_loss(pred: np.ndarray, meta: DatasetMeta, x: np.ndarray) -> np.ndarray:
    """L(x, a) = E[(f̂(x, a) − Y_a)² | x] for every a, n x (M+1)."""
    try:
        f = mean_outcomes(meta, x)
    except (ConfigError, KeyError) as exc:
        raise DatasetError(f"no closed-form outcome surfaces for {meta.family!r}: {exc}") from exc
    return (pred - f) ** 2 + _noise_var(meta)


def _subsample(ds: CausalDataset, size: int, seed: int) -> CausalDataset:
    if ds.n <= size:
        return ds
    idx = np.sort(np.random.default_rng(seed).choice(ds.n, size=size, replace=False))
    return ds.subset(idx)


def check_transfer_bounds(
    source_model: TarNetModel,
    source_ds: CausalDataset,
    target_ds: CausalDataset,
    *,
    max_points: int = EXACT_SIZE_CAP,
    seed: int = 0,
) -> List[BoundReport]:
    """Target-task bounds for a source model applied to a target task.

    Returns, in order, the counterfactual and PEHE bounds with IPMs over the
    joint (x, a) distributions, the counterfactual bound with latent IPMs and
    the PEHE transferability bound. Every quantity is computed on one row
    subsample per task (at most ``max_points`` rows) with expected losses
    from the closed-form surfaces.

    The outcome terms measure |f^S − f^T| on the source rows: over factual
    pairs for the joint bounds, over every row and treatment (``gamma_star``)
    for the latent ones. Under squared loss they are scaled by the slope
    ``max|2f̂ − f^S − f^T|``, and ``gamma_star`` also by the overlap factor
    n / min(n_a), so each component bounds the loss gap it stands for.
    """
    _require_squared(source_model)
    for ds, role in ((source_ds, "source"), (target_ds, "target")):
        _require_potentials(ds, f"transfer bounds ({role})")
        if ds.M != 1:
            raise DatasetError(f"transfer bounds need binary treatments, {role} has M={ds.M}")
    if min(max_points, EXACT_SIZE_CAP) < 4:
        raise ConfigError(f"max_points must be at least 4, got {max_points}")
    size = min(max_points, EXACT_SIZE_CAP)
    S = _subsample(source_ds, size, seed)
    T = _subsample(target_ds, size, seed)
    for ds, role in ((S, "source"), (T, "target")):
        if not ds.both_groups:
            raise DegenerateGroupError(f"{role} subsample lacks a treatment group")

    pred_S, pred_T = source_model.predict_outcomes(S.x), source_model.predict_outcomes(T.x)
    LT_at_S = _expected_loss(pred_S, T.meta, S.x)
    LS_at_S = _expected_loss(pred_S, S.meta, S.x)
    LT_at_T = _expected_loss(pred_T, T.meta, T.x)
    rs, rt = np.arange(S.n), np.arange(T.n)
    u = float(np.mean(T.a == 1))

    eps_F_S = float(LS_at_S[rs, S.a].mean())
    eps_F_T = float(LT_at_T[rt, T.a].mean())
    eps_CF_T = float(LT_at_T[rt, 1 - T.a].mean())
    if _noise_var(S.meta) != _noise_var(T.meta):
        raise DatasetError(f"source and target outcome noise differ ({S.meta.family} vs {T.meta.family})")

    f_S, f_T = mean_outcomes(S.meta, S.x), mean_outcomes(T.meta, S.x)
    f_diff = np.abs(f_S - f_T)
    # |L^T − L^S| = |f^S − f^T| · |2f̂ − f^S − f^T| at every source point and treatment
    k_y = float(np.max(np.abs(2.0 * pred_S - f_S - f_T)))
    gamma_factual = float(f_diff[rs, S.a].mean())
    gamma_star = float(f_diff.mean())
    # group means are at most n / n_a times the mean over all source rows
    overlap = float(S.n / min(np.count_nonzero(S.a == 0), np.count_nonzero(S.a == 1)))

    tau_hat = pred_T[:, 1] - pred_T[:, 0]
    f_TT = mean_outcomes(T.meta, T.x)
    pehe_T = float(np.mean((tau_hat - (f_TT[:, 1] - f_TT[:, 0])) ** 2))
    diagnostics = {
        "gamma_factual": gamma_factual, "gamma_star": gamma_star, "lipschitz_outcome": k_y,
        "overlap_factor": overlap,
        "u": u, "eps_F_target": eps_F_T, "n_source": float(S.n), "n_target": float(T.n),
    }
    notes = (ASSUMPTIONS_NOTE,)

    # joint (x, a) clouds
    zs = np.column_stack([S.x, S.a])
    zt_f = np.column_stack([T.x, T.a])
    zt_cf = np.column_stack([T.x, 1 - T.a])
    k_joint = lipschitz_on_support(
        np.vstack([zs, zt_f, zt_cf]),
        np.concatenate([LT_at_S[rs, S.a], LT_at_T[rt, T.a], LT_at_T[rt, 1 - T.a]]),
    )
    w_ts = _w1(zt_f, zs)
    w_fcf = _w1(zt_f, zt_cf)
    diag_joint = {**diagnostics, "lipschitz": k_joint, "w1_target_source": w_ts, "w1_factual_cf": w_fcf}
    thm3_cf = _report(BoundName.THM3_IPM_CF, eps_CF_T, {
        "eps_F_source": eps_F_S,
        "ipm_target_source": _scaled(k_joint, w_ts),
        "ipm_factual_counterfactual": _scaled(k_joint, w_fcf),
        "gamma": _scaled(k_y, gamma_factual),
    }, TRANSFER_TOLERANCE, diagnostics=diag_joint, notes=notes)
    thm3_pehe = _report(BoundName.THM3_IPM_PEHE, pehe_T, {
        "4*eps_F_source": 4.0 * eps_F_S,
        "4*ipm_target_source": 4.0 * _scaled(k_joint, w_ts),
        "2*ipm_factual_counterfactual": 2.0 * _scaled(k_joint, w_fcf),
        "4*gamma": 4.0 * _scaled(k_y, gamma_factual),
    }, TRANSFER_TOLERANCE, diagnostics=diag_joint, notes=notes)

    # latent clouds
    R_S, R_T = source_model.represent(S.x), source_model.represent(T.x)
    latent = np.vstack([R_S, R_T])
    k_latent = max(
        lipschitz_on_support(latent, np.concatenate([LT_at_S[:, a], LT_at_T[:, a]])) for a in (0, 1)
    )
    w_a1 = _w1(R_T[T.a == 1], R_S[S.a == 1])
    w_a0 = _w1(R_T[T.a == 0], R_S[S.a == 0])
    w_tt = _w1(R_T[T.a == 0], R_T[T.a == 1])
    eps_S0 = float(LS_at_S[S.a == 0, 0].mean())
    eps_S1 = float(LS_at_S[S.a == 1, 1].mean())
    latent_terms = {
        "eps_F_source_a1": eps_S1,
        "eps_F_source_a0": eps_S0,
        "ipm_latent_a1": _scaled(k_latent, w_a1),
        "ipm_latent_a0": _scaled(k_latent, w_a0),
        "ipm_latent_target_groups": _scaled(k_latent, w_tt),
        "2*gamma_star": 2.0 * _scaled(k_y * overlap, gamma_star),
    }
    diag_latent = {**diagnostics, "lipschitz": k_latent, "w1_a1": w_a1, "w1_a0": w_a0, "w1_target_groups": w_tt}
    if not np.isfinite(k_latent):
        notes = notes + ("representation not injective on the sample",)
    lemma2 = _report(BoundName.LEMMA2_CF, eps_CF_T, latent_terms, TRANSFER_TOLERANCE,
                     diagnostics=diag_latent, notes=notes)
    thm5 = _report(BoundName.THM5_PEHE, pehe_T, {f"2*{k}": 2.0 * v for k, v in latent_terms.items()},
                   TRANSFER_TOLERANCE, diagnostics=diag_latent, notes=notes)
    return [thm3_cf, thm3_pehe, lemma2, thm5]


# L1 bound on the Heat family


def _heat_k(ds: CausalDataset) -> float:
    if ds.meta.family != Family.HEAT.value or ds.d != 1:
        raise DatasetError(f"L1 bound check needs Heat tasks, got {ds.meta.family!r}")
    if any(key in ds.meta.params for key in ("flip_p", "assign_q", "counterfactual")):
        raise DatasetError("L1 bound check needs the Heat assignment mechanism (no relabelled tasks)")
    return float(ds.meta.params["k"])


# control touch times ~ χ²(2), treated ~ χ²(5), equal group sizes
_HEAT_DOF = (2, 5)


def _quad(fn, upper: float) -> float:
    value, _ = integrate.quad(fn, 0.0, upper, limit=200)
    return float(value)


def check_thm2_l1_heat(source_ds: CausalDataset, target_ds: CausalDataset, model: OutcomePredictor) -> BoundReport:
    """ε_CF^T ≤ ε_F^S + V(p_F^T, p_F^S) + V(p_F^T, p_CF^T) + γ on Heat tasks.

    Densities are over (u, a): a is a fair coin and u | a follows the χ² law
    of that group. With losses bounded by B the L1 terms enter as (B/2)·V;
    the outcome term E|f^S − f^T| over the source factual law is scaled by the
    squared-loss slope max|2f̂ − f^S − f^T| on the time grid. All integrals
    are one-dimensional quadratures.
    """
    _require_squared(model)
    k_s, k_t = _heat_k(source_ds), _heat_k(target_ds)
    upper = float(stats.chi2.isf(1e-12, max(_HEAT_DOF)))
    density = [stats.chi2(dof).pdf for dof in _HEAT_DOF]

    def pred(u: float, a: int) -> float:
        return float(model.predict_outcomes(np.array([[u]]))[0, a])

    def loss(u: float, a: int, k: float) -> float:
        return (pred(u, a) - heat_outcomes(np.array([u]), k)[a][0]) ** 2

    def p_f(u: float, a: int) -> float:
        return 0.5 * density[a](u)

    def p_cf(u: float, a: int) -> float:
        return 0.5 * density[1 - a](u)

    eps_cf_t = sum(_quad(lambda u, a=a: loss(u, a, k_t) * p_cf(u, a), upper) for a in (0, 1))
    eps_f_s = sum(_quad(lambda u, a=a: loss(u, a, k_s) * p_f(u, a), upper) for a in (0, 1))
    # source and target share the covariate and assignment laws
    v_ts = 0.0
    v_fcf = sum(_quad(lambda u, a=a: abs(p_f(u, a) - p_cf(u, a)), upper) for a in (0, 1))
    f_diff = sum(
        _quad(lambda u, a=a: abs(heat_outcomes(np.array([u]), k_s)[a][0] - heat_outcomes(np.array([u]), k_t)[a][0])
              * p_f(u, a), upper)
        for a in (0, 1)
    )

    grid = np.linspace(0.0, upper, 2001)
    pred_grid = model.predict_outcomes(grid[:, None])
    f_s, f_t = heat_outcomes(grid, k_s), heat_outcomes(grid, k_t)
    bound = float(max(np.max((pred_grid[:, a] - f_t[a]) ** 2) for a in (0, 1)))
    k_y = float(max(np.max(np.abs(2.0 * pred_grid[:, a] - f_s[a] - f_t[a])) for a in (0, 1)))
    diagnostics = {"v_target_source": v_ts, "v_factual_counterfactual": v_fcf, "loss_bound": bound,
                   "k_source": k_s, "k_target": k_t, "gamma_raw": f_diff, "lipschitz_outcome": k_y}
    components = {
        "eps_F_source": eps_f_s,
        "v_target_source": 0.5 * bound * v_ts,
        "v_factual_counterfactual": 0.5 * bound * v_fcf,
        "gamma": _scaled(k_y, f_diff),
    }
    return _report(BoundName.THM2_L1_HEAT, eps_cf_t, components, L1_TOLERANCE, diagnostics=diagnostics)


def save_bound_reports(reports: Sequence[BoundReport], path: PathLike) -> Path:
    return dump_json([r.to_dict() for r in reports], path)


def load_bound_reports(path: PathLike) -> List[dict]:
    return list(load_json(path))
