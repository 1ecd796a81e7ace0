"""
Tests for causal metrics and the numerical bound checks
"""

import math
from dataclasses import dataclass

import numpy as np
import pytest

from causaltransfer.datagen import (
    CausalDataset,
    flip_treatments,
    gen_heat,
    gen_movement,
    gen_rkhs,
    heat_outcomes,
    mean_outcomes,
)
from causaltransfer.errors import ConfigError, DatasetError, DegenerateGroupError, PotentialsUnavailableError
from causaltransfer.metrics import (
    BoundName,
    BoundReport,
    ConstantPredictor,
    OraclePredictor,
    ate_error,
    check_shalit_sandwich,
    check_thm1,
    check_thm2_l1_heat,
    check_transfer_bounds,
    lipschitz_on_support,
    load_bound_reports,
    losses,
    pearson,
    pehe,
    save_bound_reports,
    spearman,
)
from causaltransfer.nnkernel import Activation, MlpSpec
from causaltransfer.tarnet import LossKind, build_model


def small_model(d=1, seed=0, loss_kind=LossKind.SQUARED_ERROR):
    return build_model(d, MlpSpec((d, 5, 3), Activation.ELU, seed), (3,), 2, seed, loss_kind)


def factual_only(ds):
    return CausalDataset(ds.x, ds.a, ds.y, None, ds.meta)


# =============================================================================
# 1. METRICS
# =============================================================================

def test_oracle_has_zero_pehe():
    ds = gen_heat(1.3, n=40, seed=0)
    oracle = OraclePredictor(ds.meta)
    assert pehe(oracle, ds) == pytest.approx(0.0, abs=1e-24)
    assert ate_error(oracle, ds) == pytest.approx(0.0, abs=1e-12)


def test_constant_predictor_pehe_is_mean_squared_effect():
    ds = gen_heat(0.8, n=40, seed=1)
    tau = ds.potential[:, 1] - ds.potential[:, 0]
    assert pehe(ConstantPredictor((0.0, 0.0)), ds) == pytest.approx(np.mean(tau**2), rel=1e-12)
    assert ate_error(ConstantPredictor((0.0, 0.0)), ds) == pytest.approx(abs(tau.mean()), rel=1e-12)


def test_metrics_need_potentials():
    ds = factual_only(gen_heat(1.0, n=20))
    with pytest.raises(PotentialsUnavailableError):
        pehe(ConstantPredictor(), ds)
    with pytest.raises(PotentialsUnavailableError):
        check_thm1(ConstantPredictor(), ds)


def test_loss_split():
    ds = gen_heat(1.0, n=40, seed=2)
    model = ConstantPredictor((0.5, 0.1))
    rep = losses(model, ds)
    treated = ds.a == 1
    factual = np.where(treated, 0.1, 0.5) - ds.y
    assert rep.factual == pytest.approx(np.mean(factual**2), rel=1e-12)
    assert rep.factual_by_group[1] == pytest.approx(np.mean(factual[treated] ** 2), rel=1e-12)
    assert rep.u == pytest.approx(treated.mean())
    assert rep.counterfactual_by_group[0] == pytest.approx(np.mean((0.5 - ds.potential[treated, 0]) ** 2), rel=1e-12)


def test_factual_only_losses_skip_counterfactuals():
    rep = losses(ConstantPredictor(), factual_only(gen_heat(1.0, n=20)))
    assert rep.counterfactual is None and rep.counterfactual_by_group is None


def test_losses_single_group():
    ds = gen_heat(1.0, n=20)
    with pytest.raises(DegenerateGroupError):
        losses(ConstantPredictor(), ds.subset(np.flatnonzero(ds.a == 0)))


def test_rank_correlations():
    assert spearman([1, 2, 3, 4], [1, 4, 9, 100]) == pytest.approx(1.0)
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert math.isnan(spearman([1.0], [2.0]))
    assert math.isnan(pearson([1, 2, 3], [5, 5, 5]))


# =============================================================================
# 2. SINGLE-TASK BOUNDS
# =============================================================================

@pytest.mark.parametrize("seed", range(4))
def test_lower_bound_gap_closed_by_diagnostics(seed):
    ds = gen_heat(0.5 + seed * 0.4, n=60, seed=seed)
    report = check_thm1(small_model(seed=seed), ds)
    gap = report.diagnostics["omitted_cf_term"] + report.diagnostics["cross_term"]
    assert report.rhs - report.lhs == pytest.approx(gap, rel=1e-9, abs=1e-12)
    assert report.name is BoundName.THM1_LOWER


def test_lower_bound_for_oracle():
    ds = gen_heat(1.0, n=40, seed=0)
    report = check_thm1(OraclePredictor(ds.meta), ds)
    assert report.lhs == pytest.approx(0.0, abs=1e-24) and report.holds


@dataclass(frozen=True)
class OffsetOracle:
    """Exact control surface, treated surface shifted by ``offset``."""

    meta: object
    offset: float

    def predict_outcomes(self, X):
        out = OraclePredictor(self.meta).predict_outcomes(X)
        out[:, 1] += self.offset
        return out


def test_lower_bound_with_broken_counterfactual_head():
    ds = gen_heat(1.0, n=40, seed=5)
    reports = [check_thm1(OffsetOracle(ds.meta, c), ds) for c in (0.5, 1.0, 2.0)]
    assert all(r.holds for r in reports)
    assert reports[0].lhs < reports[1].lhs < reports[2].lhs
    assert reports[0].rhs < reports[1].rhs < reports[2].rhs
    assert reports[2].rhs == pytest.approx(4.0, rel=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_sandwich_always_holds(seed):
    ds = gen_rkhs(seed, n=40)
    report = check_shalit_sandwich(small_model(d=4, seed=seed), ds)
    assert report.holds
    assert report.lhs <= report.rhs


def test_sandwich_holds_for_random_models_on_movement():
    ds = gen_movement(5.0, 5.0, n=40, seed=0)
    assert all(check_shalit_sandwich(small_model(seed=s), ds).holds for s in range(20))


def test_bernoulli_model_rejected():
    with pytest.raises(ConfigError):
        check_shalit_sandwich(small_model(loss_kind=LossKind.BERNOULLI_NLL), gen_heat(1.0, n=20))


def test_report_accounting():
    report = BoundReport(BoundName.SHALIT_SANDWICH, 1.0, {"a": 0.25, "b": 0.5}, 0.3)
    assert report.rhs == 0.75 and report.slack == -0.25
    assert report.holds
    assert report.to_dict()["name"] == "shalit_sandwich"


# =============================================================================
# 3. TRANSFER BOUNDS
# =============================================================================

def test_lipschitz_on_support():
    points = np.array([[0.0], [1.0], [3.0]])
    assert lipschitz_on_support(points, np.array([0.0, 2.0, 6.0])) == pytest.approx(2.0)
    assert lipschitz_on_support(np.zeros((2, 1)), np.array([0.0, 1.0])) == math.inf
    assert lipschitz_on_support(np.zeros((2, 1)), np.array([1.0, 1.0])) == 0.0


@pytest.mark.parametrize("k_target", [1.0, 1.6])
def test_transfer_bounds_hold_on_heat(k_target):
    source = gen_heat(1.0, n=40, seed=0)
    target = gen_heat(k_target, n=40, seed=1)
    reports = check_transfer_bounds(small_model(seed=2), source, target)
    assert [r.name for r in reports] == [BoundName.THM3_IPM_CF, BoundName.THM3_IPM_PEHE,
                                         BoundName.LEMMA2_CF, BoundName.THM5_PEHE]
    assert all(r.holds for r in reports)
    assert all(r.notes for r in reports)


def test_outcome_gap_grows_with_decay_gap():
    source = gen_heat(0.5, n=60, seed=0)
    model = small_model(seed=7)
    near = check_transfer_bounds(model, source, gen_heat(0.6, n=60, seed=1))
    far = check_transfer_bounds(model, source, gen_heat(2.0, n=60, seed=1))
    assert far[2].diagnostics["gamma_star"] > near[2].diagnostics["gamma_star"]
    assert far[0].diagnostics["gamma_factual"] > near[0].diagnostics["gamma_factual"]
    assert all(r.holds for r in near + far)


def test_gamma_star_averages_both_treatments():
    source = gen_heat(0.8, n=40, seed=2)
    target = gen_heat(1.6, n=40, seed=3)
    model = small_model(seed=2)
    report = check_transfer_bounds(model, source, target)[2]
    f_s, f_t = mean_outcomes(source.meta, source.x), mean_outcomes(target.meta, source.x)
    assert report.diagnostics["gamma_star"] == pytest.approx(np.mean(np.abs(f_s - f_t)), rel=1e-12)
    scale = report.diagnostics["lipschitz_outcome"] * report.diagnostics["overlap_factor"]
    assert report.components["2*gamma_star"] == pytest.approx(2.0 * scale * report.diagnostics["gamma_star"])
    assert report.diagnostics["overlap_factor"] >= 2.0


def test_transfer_bounds_same_task_have_no_outcome_gap():
    ds = gen_heat(1.2, n=40, seed=3)
    reports = check_transfer_bounds(small_model(seed=1), ds, ds)
    assert reports[0].components["gamma"] == 0.0
    assert reports[0].components["ipm_target_source"] == 0.0


def test_transfer_bounds_subsample():
    source = gen_heat(1.0, n=400, seed=0)
    target = gen_heat(1.4, n=400, seed=1)
    reports = check_transfer_bounds(small_model(), source, target, max_points=64)
    assert reports[0].diagnostics["n_source"] == 64.0
    assert all(r.holds for r in reports)


def test_transfer_bounds_errors():
    ds = gen_heat(1.0, n=40)
    with pytest.raises(ConfigError):
        check_transfer_bounds(small_model(), ds, ds, max_points=3)
    with pytest.raises(PotentialsUnavailableError):
        check_transfer_bounds(small_model(), ds, factual_only(ds))


# =============================================================================
# 4. L1 BOUND ON HEAT
# =============================================================================

def test_l1_bound_holds_on_heat_pair():
    source, target = gen_heat(1.0, n=20, seed=0), gen_heat(1.5, n=20, seed=1)
    report = check_thm2_l1_heat(source, target, small_model(seed=4))
    assert report.holds
    assert report.components["v_target_source"] == 0.0
    assert report.diagnostics["k_target"] == 1.5


def test_l1_outcome_term_is_mean_outcome_gap():
    source = gen_heat(0.5, n=20, seed=0)
    model = small_model(seed=5)
    near = check_thm2_l1_heat(source, gen_heat(0.6, n=20, seed=1), model)
    far = check_thm2_l1_heat(source, gen_heat(2.0, n=20, seed=1), model)
    assert near.holds and far.holds
    assert far.diagnostics["gamma_raw"] > near.diagnostics["gamma_raw"]
    for report in (near, far):
        expected = report.diagnostics["lipschitz_outcome"] * report.diagnostics["gamma_raw"]
        assert report.components["gamma"] == pytest.approx(expected, rel=1e-12)


def test_l1_outcome_gap_matches_sampled_estimate():
    source = gen_heat(0.5, n=20000, seed=3)
    report = check_thm2_l1_heat(source, gen_heat(1.0, n=20, seed=1), small_model())
    f_s, f_t = heat_outcomes(source.x[:, 0], 0.5), heat_outcomes(source.x[:, 0], 1.0)
    gap = np.where(source.a == 1, np.abs(f_s[1] - f_t[1]), np.abs(f_s[0] - f_t[0]))
    assert report.diagnostics["gamma_raw"] == pytest.approx(gap.mean(), rel=0.05)


def test_l1_bound_rejects_relabelled_tasks():
    source = gen_heat(1.0, n=20, seed=0)
    with pytest.raises(DatasetError):
        check_thm2_l1_heat(source, flip_treatments(source, 0.2, seed=1), small_model())
    with pytest.raises(DatasetError):
        check_thm2_l1_heat(source, gen_rkhs(0, n=20), small_model())


# =============================================================================
# 5. REPORT FILES
# =============================================================================

def test_bound_reports_roundtrip(tmp_path):
    ds = gen_heat(1.0, n=30, seed=0)
    model = small_model()
    reports = [check_thm1(model, ds), check_shalit_sandwich(model, ds)]
    back = load_bound_reports(save_bound_reports(reports, tmp_path / "bounds.json"))
    assert [b["name"] for b in back] == ["thm1_lower", "shalit_sandwich"]
    assert back[1]["lhs"] == reports[1].lhs
    assert back[0]["holds"] == reports[0].holds
