"""
Tests for Fisher signatures and the label-invariant task distance
"""

from itertools import permutations

import numpy as np
import pytest

from causaltransfer.affinity import (
    MAX_TREATMENTS,
    FisherSignature,
    TaskDistanceReport,
    check_approximation,
    cita,
    empirical_fisher_diag,
    frechet_distance,
    load_report,
    save_report,
    select_closest,
)
from causaltransfer.datagen import CausalDataset, DatasetMeta, flip_treatments, gen_heat, gen_rkhs
from causaltransfer.errors import AffinityError, ApproximationError, DimensionError
from causaltransfer.nnkernel import Activation, MlpSpec, backward_batch, forward_batch
from causaltransfer.tarnet import IpmConfig, TrainConfig, build_model, train


def small_model(d=1, seed=0, num_treatments=2):
    return build_model(d, MlpSpec((d, 5, 3), Activation.ELU, seed), (3,), num_treatments, seed)


def trained(ds, seed=0):
    config = TrainConfig(alpha=1.0, lr=1e-2, epochs=10, batch_size=16, seed=seed, ipm=IpmConfig(0.1, 20))
    model, _ = train(ds, MlpSpec((ds.d, 6, 4), Activation.ELU, seed), (3,), config)
    return model


def brute_force_fisher(model, ds):
    """Per-row gradients of 0.5 (h - y)^2, squared and averaged."""
    total = np.zeros(model.param_count)
    sizes = [model.phi_spec.param_count] + [s.param_count for s in model.head_specs]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    for i in range(ds.n):
        x = ds.x[i:i + 1]
        g = int(ds.a[i])
        R, phi_cache = forward_batch(model.phi_spec, model.phi_params, x)
        out, cache = forward_batch(model.head_specs[g], model.head_params[g], R)
        head_grad, dR = backward_batch(model.head_specs[g], model.head_params[g], cache,
                                       (out[:, 0] - ds.y[i])[:, None])
        phi_grad, _ = backward_batch(model.phi_spec, model.phi_params, phi_cache, dR)
        row = np.zeros(model.param_count)
        row[:offsets[1]] = phi_grad
        row[offsets[1 + g]:offsets[2 + g]] = head_grad
        total += row * row
    return total / ds.n


# =============================================================================
# 1. FISHER SIGNATURES
# =============================================================================

@pytest.mark.parametrize("seed", range(3))
def test_fisher_matches_brute_force(seed):
    ds = gen_heat(1.0 + seed, n=10, seed=seed)
    model = small_model(seed=seed)
    raw = empirical_fisher_diag(model, ds, normalize=False)
    assert np.allclose(raw.diag, brute_force_fisher(model, ds), rtol=1e-12, atol=1e-15)
    assert not raw.trace_normalized


def test_fisher_normalized_to_unit_trace():
    ds = gen_rkhs(0, n=20)
    sig = empirical_fisher_diag(small_model(d=4), ds)
    assert sig.trace_normalized
    assert sig.diag.sum() == pytest.approx(1.0, abs=1e-12)
    assert sig.raw_trace > 0
    assert len(sig) == small_model(d=4).param_count


def test_fisher_invariant_under_row_order():
    ds = gen_heat(1.3, n=24, seed=4)
    model = small_model(seed=4)
    order = np.random.default_rng(4).permutation(ds.n)
    base = empirical_fisher_diag(model, ds)
    shuffled = empirical_fisher_diag(model, ds.subset(order))
    assert np.allclose(shuffled.diag, base.diag, rtol=1e-12, atol=1e-15)


def test_zero_trace_is_flagged():
    ds = gen_heat(1.0, n=10, seed=0)
    zeros = CausalDataset(ds.x, ds.a, np.zeros(ds.n), None, ds.meta)
    model = small_model()
    model = model.with_flat_params(np.zeros(model.param_count))
    sig = empirical_fisher_diag(model, zeros)
    assert not sig.trace_normalized and sig.raw_trace == 0.0
    with pytest.raises(AffinityError):
        cita(model, zeros, zeros)


def test_fisher_width_mismatch():
    with pytest.raises(DimensionError):
        empirical_fisher_diag(small_model(d=2), gen_heat(1.0, n=10))


@pytest.mark.parametrize("diag, normalized", [([-0.1, 1.1], True), ([0.3, 0.3], True), ([np.nan, 1.0], False)])
def test_signature_validation(diag, normalized):
    with pytest.raises(AffinityError):
        FisherSignature(np.array(diag), normalized)


# =============================================================================
# 2. FRECHET DISTANCE
# =============================================================================

def test_frechet_bounds():
    a = FisherSignature(np.array([1.0, 0.0]), True)
    b = FisherSignature(np.array([0.0, 1.0]), True)
    assert frechet_distance(a, a) == 0.0
    assert frechet_distance(a, b) == pytest.approx(1.0)
    assert frechet_distance(a, b) == frechet_distance(b, a)


def test_frechet_rejects_bad_inputs():
    a = FisherSignature(np.array([0.5, 0.5]), True)
    with pytest.raises(AffinityError):
        frechet_distance(a, FisherSignature(np.array([1.0]), True))
    with pytest.raises(AffinityError):
        frechet_distance(a, FisherSignature(np.array([2.0, 1.0]), False))

def test_frechet_hand_example():
    a = FisherSignature(np.array([0.5, 0.5]), True)
    b = FisherSignature(np.array([0.25, 0.75]), True)
    expected = np.sqrt(0.5 * ((np.sqrt(0.5) - 0.5) ** 2 + (np.sqrt(0.5) - np.sqrt(0.75)) ** 2))
    assert frechet_distance(a, b) == pytest.approx(expected, abs=1e-12)
    assert frechet_distance(a, b) == pytest.approx(0.1845919, abs=1e-7)


@pytest.mark.parametrize("seed", range(5))
def test_frechet_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    f, g, h = (FisherSignature(rng.dirichlet(np.full(8, 0.5)), True) for _ in range(3))
    assert frechet_distance(f, h) <= frechet_distance(f, g) + frechet_distance(g, h) + 1e-9
    assert frechet_distance(f, g) == pytest.approx(frechet_distance(g, f), abs=1e-12)


# =============================================================================
# 3. LABEL-INVARIANT TASK DISTANCE
# =============================================================================

def test_distance_to_itself_is_zero():
    ds = gen_heat(1.0, n=30, seed=0)
    model = trained(ds)
    report = cita(model, ds, ds)
    assert report.d_sym == 0.0
    assert report.best_perm == (0, 1)
    assert report.d_identity == 0.0


def test_distance_to_relabelled_source_is_zero():
    ds = gen_heat(1.0, n=30, seed=0)
    model = trained(ds)
    report = cita(model, ds, ds.permute_labels([1, 0]))
    assert report.d_sym == 0.0
    assert report.best_perm == (1, 0)
    assert report.d_identity > 0.0


def test_distance_invariant_under_target_relabelling():
    source = gen_heat(1.0, n=30, seed=0)
    target = flip_treatments(gen_heat(1.7, n=30, seed=1), 0.3, seed=2)
    model = trained(source)
    base = cita(model, source, target)
    swapped = cita(model, source, target.permute_labels([1, 0]))
    assert swapped.d_sym == base.d_sym
    assert all(0.0 <= d <= 1.0 for d in base.d_per_perm.values())


def test_heat_distance_grows_with_decay_gap():
    # one seed: all three tasks share touch times and assignments
    source = gen_heat(0.5, n=60, seed=0)
    model = trained(source)
    near = cita(model, source, gen_heat(0.6, n=60, seed=0))
    far = cita(model, source, gen_heat(2.0, n=60, seed=0))
    assert near.d_sym < far.d_sym


def test_multi_treatment_enumerates_every_permutation():
    rng = np.random.default_rng(0)
    meta = DatasetMeta("external", M=2)
    ds = CausalDataset(rng.normal(size=(18, 2)), np.arange(18) % 3, rng.normal(size=18), None, meta)
    model = small_model(d=2, num_treatments=3)
    report = cita(model, ds, ds.permute_labels([2, 0, 1]))
    assert set(report.d_per_perm) == set(permutations(range(3)))
    assert report.d_sym == 0.0


def test_treatment_cap():
    rng = np.random.default_rng(0)
    meta = DatasetMeta("external", M=MAX_TREATMENTS)
    ds = CausalDataset(rng.normal(size=(14, 1)), np.arange(14) % 7, rng.normal(size=14), None, meta)
    with pytest.raises(AffinityError):
        cita(small_model(num_treatments=7), ds, ds)


def test_mismatched_tasks():
    heat = gen_heat(1.0, n=20)
    model = small_model()
    with pytest.raises(DimensionError):
        cita(model, heat, gen_rkhs(0, n=20))
    meta = DatasetMeta("external", M=2)
    three = CausalDataset(heat.x, np.arange(20) % 3, heat.y, None, meta)
    with pytest.raises(AffinityError):
        cita(model, heat, three)


def test_approximation_gate():
    ds = gen_heat(1.0, n=30, seed=0)
    model = trained(ds)
    loss = check_approximation(model, ds, threshold=1e6)
    assert loss >= 0
    with pytest.raises(ApproximationError) as info:
        cita(model, ds, ds, gate=loss / 2)
    assert info.value.threshold == loss / 2
    assert cita(model, ds, ds, gate=1e6).d_sym == 0.0


# =============================================================================
# 4. SOURCE SELECTION
# =============================================================================

def test_select_closest_finds_matching_task():
    a, b = gen_heat(0.5, n=30, seed=0), gen_heat(2.0, n=30, seed=1)
    sources = [(trained(a), a), (trained(b, seed=1), b)]
    best, reports = select_closest(sources, b)
    assert best == 1
    assert reports[1].d_sym == 0.0
    assert len(reports) == 2


def test_select_closest_ties_pick_lowest_index():
    ds = gen_heat(1.0, n=30, seed=0)
    model = trained(ds)
    best, reports = select_closest([(model, ds), (model, ds)], ds)
    assert best == 0
    assert reports[0].notes and "tie" in reports[0].notes[0]


def test_select_closest_empty():
    with pytest.raises(AffinityError):
        select_closest([], gen_heat(1.0, n=10))


# =============================================================================
# 5. REPORT FILES
# =============================================================================

def test_report_roundtrip(tmp_path):
    source = gen_heat(1.0, n=20, seed=0)
    target = gen_heat(1.5, n=20, seed=1)
    report = cita(small_model(), source, target)
    back = load_report(save_report(report, tmp_path / "r.json"))
    assert back == report
    assert TaskDistanceReport.from_dict(report.to_dict()) == report
