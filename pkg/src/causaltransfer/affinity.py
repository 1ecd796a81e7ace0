"""Fisher-information task signatures and the label-invariant task distance.

A signature is the diagonal empirical Fisher of a trained model's negative
log-likelihood on a dataset, normalized to unit trace. Distances between two
signatures of the same model are Fréchet-style distances between their
elementwise square roots, which lie in [0, 1]. Because treatment labels are
arbitrary names, the task distance is the minimum over all relabelings of the
target.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from itertools import permutations
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from ._io import PathLike, dump_json, load_json
from .datagen import CausalDataset
from .errors import AffinityError, ApproximationError, DimensionError
from .nnkernel import backward_batch, forward_batch
from .tarnet import LossKind, TarNetModel, pointwise_loss

logger = logging.getLogger(__name__)

MAX_TREATMENTS = 6
TRACE_TOLERANCE = 1e-9

Perm = Tuple[int, ...]


@dataclass(frozen=True, eq=False)
class FisherSignature:
    diag: np.ndarray
    trace_normalized: bool
    model_id: str = ""
    dataset_id: str = ""
    raw_trace: float = 0.0

    def __post_init__(self) -> None:
        diag = np.array(self.diag, dtype=np.float64, copy=True)
        if diag.ndim != 1:
            raise AffinityError(f"signature must be a vector, got shape {diag.shape}")
        if np.any(diag < 0) or not np.all(np.isfinite(diag)):
            raise AffinityError("signature entries must be finite and nonnegative")
        if self.trace_normalized and abs(diag.sum() - 1.0) > TRACE_TOLERANCE:
            raise AffinityError(f"signature flagged as normalized but sums to {diag.sum()!r}")
        diag.flags.writeable = False
        object.__setattr__(self, "diag", diag)

    def __len__(self) -> int:
        return self.diag.shape[0]


def _perm_key(perm: Perm) -> str:
    return ",".join(str(i) for i in perm)


@dataclass(frozen=True)
class TaskDistanceReport:
    d_per_perm: Dict[Perm, float]
    d_sym: float
    best_perm: Perm
    source_id: str = ""
    target_id: str = ""
    model_id: str = ""
    notes: Tuple[str, ...] = field(default_factory=tuple)

    @property
    def identity(self) -> Perm:
        return tuple(range(len(self.best_perm)))

    @property
    def d_identity(self) -> float:
        """The nonsymmetrized distance, i.e. the target with its own labels."""
        return self.d_per_perm[self.identity]

    def to_dict(self) -> dict:
        return {
            "source_id": self.source_id,
            "target_id": self.target_id,
            "model_id": self.model_id,
            "d_per_perm": {_perm_key(p): v for p, v in self.d_per_perm.items()},
            "d_sym": self.d_sym,
            "best_perm": list(self.best_perm),
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TaskDistanceReport":
        perms = {tuple(int(i) for i in key.split(",")): float(v) for key, v in data["d_per_perm"].items()}
        return cls(perms, float(data["d_sym"]), tuple(data["best_perm"]), data.get("source_id", ""),
                   data.get("target_id", ""), data.get("model_id", ""), tuple(data.get("notes", ())))


def _check_compatible(model: TarNetModel, ds: CausalDataset) -> None:
    if ds.d != model.d:
        raise DimensionError(f"covariate width {ds.d} does not match model input width {model.d}")
    if ds.M + 1 != model.num_treatments:
        raise AffinityError(f"dataset has {ds.M + 1} treatments, model has {model.num_treatments} heads")


def _nll_adjoint(kind: LossKind, out: np.ndarray, y: np.ndarray) -> np.ndarray:
    # unit-variance Gaussian NLL is 0.5 (h - y)^2 up to a constant
    if kind is LossKind.SQUARED_ERROR:
        return out - y
    return expit(out) - y


def empirical_fisher_diag(model: TarNetModel, ds: CausalDataset, *, normalize: bool = True) -> FisherSignature:
    """diag[j] = mean over rows of (dL_i/dθ_j)^2 over Φ and every head.

    Each per-row parameter gradient of a dense layer is one outer product, so
    the sum of squares is accumulated in closed form without materializing
    per-row gradients.
    """
    _check_compatible(model, ds)
    if ds.n == 0:
        raise AffinityError("empty dataset")
    R, phi_cache = forward_batch(model.phi_spec, model.phi_params, ds.x)
    dR = np.zeros_like(R)
    head_blocks: List[np.ndarray] = []
    for g, (spec, params) in enumerate(zip(model.head_specs, model.head_params)):
        idx = np.flatnonzero(ds.a == g)
        if idx.size == 0:
            head_blocks.append(np.zeros(spec.param_count))
            continue
        out, cache = forward_batch(spec, params, R[idx])
        d_out = _nll_adjoint(model.meta.loss_kind, out[:, 0], ds.y[idx])[:, None]
        sq, d_in = backward_batch(spec, params, cache, d_out, squared=True)
        head_blocks.append(sq)
        dR[idx] = d_in
    phi_sq, _ = backward_batch(model.phi_spec, model.phi_params, phi_cache, dR, squared=True)

    diag = np.concatenate([phi_sq] + head_blocks) / ds.n
    trace = float(diag.sum())
    if trace == 0.0:
        logger.warning("zero Fisher trace for model %s on %s", model.model_id, ds.dataset_id)
        return FisherSignature(diag, False, model.model_id, ds.dataset_id, 0.0)
    if normalize:
        diag = diag / trace
    return FisherSignature(diag, normalize, model.model_id, ds.dataset_id, trace)


def frechet_distance(f1: FisherSignature, f2: FisherSignature) -> float:
    """sqrt(0.5 * sum_j (sqrt(f1_j) - sqrt(f2_j))^2), in [0, 1] for unit-trace inputs."""
    if len(f1) != len(f2):
        raise AffinityError(f"signature length mismatch: {len(f1)} vs {len(f2)}")
    if not (f1.trace_normalized and f2.trace_normalized):
        raise AffinityError("frechet_distance needs trace-normalized signatures")
    diff = np.sqrt(f1.diag) - np.sqrt(f2.diag)
    return float(min(np.sqrt(0.5 * float(diff @ diff)), 1.0))


def check_approximation(model: TarNetModel, ds: CausalDataset, threshold: float) -> float:
    """Mean factual loss of ``model`` on its own data; raises if above ``threshold``."""
    _check_compatible(model, ds)
    out = model.represent(ds.x)
    losses = np.empty(ds.n)
    for g, (spec, params) in enumerate(zip(model.head_specs, model.head_params)):
        idx = np.flatnonzero(ds.a == g)
        if idx.size:
            pred, _ = forward_batch(spec, params, out[idx])
            losses[idx], _ = pointwise_loss(model.meta.loss_kind, pred[:, 0], ds.y[idx])
    loss = float(losses.mean())
    if loss > threshold:
        raise ApproximationError(
            f"model {model.model_id} has factual loss {loss:.6g} on {ds.dataset_id}, above {threshold:g}",
            loss, threshold,
        )
    return loss


def cita(
    source_model: TarNetModel,
    source_ds: CausalDataset,
    target_ds: CausalDataset,
    *,
    gate: Optional[float] = None,
    source_signature: Optional[FisherSignature] = None,
) -> TaskDistanceReport:
    """Label-invariant task distance from the source task to the target task.

    For every permutation σ of the treatment labels the target is relabelled
    (outcomes untouched) and compared to the source signature; the smallest
    distance wins, with the identity first so ties keep the original labels.
    """
    if target_ds.d != source_ds.d:
        raise DimensionError(f"covariate mismatch: source width {source_ds.d}, target width {target_ds.d}")
    if target_ds.M != source_ds.M:
        raise AffinityError(f"differing M: source {source_ds.M}, target {target_ds.M}")
    if source_ds.M + 1 > MAX_TREATMENTS:
        raise AffinityError(f"{source_ds.M + 1} treatments exceed the enumeration cap of {MAX_TREATMENTS}")
    _check_compatible(source_model, target_ds)
    if gate is not None:
        check_approximation(source_model, source_ds, gate)

    f_ss = source_signature or empirical_fisher_diag(source_model, source_ds)
    if not f_ss.trace_normalized:
        raise AffinityError(f"source signature on {source_ds.dataset_id} has zero trace")

    d_per_perm: Dict[Perm, float] = {}
    for sigma in permutations(range(target_ds.M + 1)):
        f_st = empirical_fisher_diag(source_model, target_ds.permute_labels(sigma))
        if not f_st.trace_normalized:
            raise AffinityError(f"target signature under {sigma} has zero trace")
        d_per_perm[sigma] = frechet_distance(f_ss, f_st)

    best_perm = min(d_per_perm, key=d_per_perm.__getitem__)
    report = TaskDistanceReport(d_per_perm, d_per_perm[best_perm], best_perm, source_ds.dataset_id,
                                target_ds.dataset_id, source_model.model_id)
    logger.debug("cita %s -> %s: d_sym=%.6g via %s", report.source_id, report.target_id, report.d_sym,
                 _perm_key(best_perm))
    return report


def select_closest(
    sources: Sequence[Tuple[TarNetModel, CausalDataset]],
    target_ds: CausalDataset,
    *,
    gate: Optional[float] = None,
) -> Tuple[int, List[TaskDistanceReport]]:
    """Index of the source task closest to the target, lowest index on ties."""
    if not sources:
        raise AffinityError("empty source list")
    reports = [cita(model, ds, target_ds, gate=gate) for model, ds in sources]
    distances = [r.d_sym for r in reports]
    best = int(np.argmin(distances))
    ties = [i for i, d in enumerate(distances) if d == distances[best]]
    if len(ties) > 1:
        logger.info("tie between sources %s at d_sym=%.6g; picking %d", ties, distances[best], best)
        reports[best] = replace(reports[best], notes=(f"tie among sources {ties}",))
    return best, reports


def save_report(report: TaskDistanceReport, path: PathLike) -> Path:
    return dump_json(report.to_dict(), path)


def load_report(path: PathLike) -> TaskDistanceReport:
    return TaskDistanceReport.from_dict(load_json(path))
