"""Two-headed representation network (shared Φ, one outcome head per treatment)
trained on the weighted factual loss plus an α-scaled Wasserstein balancing term.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from itertools import combinations
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from ._io import PathLike, array_hash, canonical_hash, dump_json, load_json
from .balance import PointCloud, sinkhorn_w1
from .datagen import CausalDataset
from .errors import ConfigError, DatasetError, DegenerateGroupError, DimensionError, NonFiniteError
from .nnkernel import (
    Activation,
    MlpSpec,
    OptimizerConfig,
    OptimizerRule,
    OptimizerState,
    backward_batch,
    forward_batch,
    init_params,
    optimizer_step,
)

logger = logging.getLogger(__name__)

DEFAULT_PHI_HIDDEN = (64, 32)
DEFAULT_HEAD_HIDDEN = (16,)

ProgressFn = Callable[[float], None]


class LossKind(str, Enum):
    SQUARED_ERROR = "squared_error"
    BERNOULLI_NLL = "bernoulli_nll"


@dataclass(frozen=True)
class IpmConfig:
    eps: float = 0.01
    iters: int = 500

    def __post_init__(self) -> None:
        if not self.eps > 0:
            raise ConfigError(f"ipm.eps must be positive, got {self.eps}")
        if int(self.iters) < 1:
            raise ConfigError(f"ipm.iters must be at least 1, got {self.iters}")


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 1.0
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 128
    seed: int = 0
    loss_kind: LossKind = LossKind.SQUARED_ERROR
    ipm: IpmConfig = field(default_factory=IpmConfig)
    optimizer: OptimizerRule = OptimizerRule.ADAM

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "loss_kind", LossKind(self.loss_kind))
            object.__setattr__(self, "optimizer", OptimizerRule(self.optimizer))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if isinstance(self.ipm, dict):
            object.__setattr__(self, "ipm", IpmConfig(**self.ipm))
        if not self.alpha >= 0:
            raise ConfigError(f"alpha must be nonnegative, got {self.alpha}")
        if int(self.epochs) < 1:
            raise ConfigError(f"epochs must be at least 1, got {self.epochs}")
        if int(self.batch_size) < 2:
            raise ConfigError(f"batch_size must be at least 2, got {self.batch_size}")
        OptimizerConfig(self.optimizer, self.lr)

    @property
    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(self.optimizer, self.lr)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha, "lr": self.lr, "epochs": int(self.epochs), "batch_size": int(self.batch_size),
            "seed": int(self.seed), "loss_kind": self.loss_kind.value,
            "ipm": {"eps": self.ipm.eps, "iters": int(self.ipm.iters)}, "optimizer": self.optimizer.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        if "ipm" in data:
            data["ipm"] = IpmConfig(**data["ipm"])
        return cls(**data)


def config_hash(config: TrainConfig) -> str:
    return canonical_hash(config.to_dict())


@dataclass(frozen=True)
class ModelMeta:
    dataset_id: str = ""
    config_hash: str = ""
    loss_kind: LossKind = LossKind.SQUARED_ERROR

    def __post_init__(self) -> None:
        object.__setattr__(self, "loss_kind", LossKind(self.loss_kind))


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class TarNetModel:
    phi_spec: MlpSpec
    phi_params: np.ndarray
    head_specs: Tuple[MlpSpec, ...]
    head_params: Tuple[np.ndarray, ...]
    meta: ModelMeta = field(default_factory=ModelMeta)

    def __post_init__(self) -> None:
        heads = tuple(self.head_specs)
        params = tuple(_frozen(p) for p in self.head_params)
        if len(heads) < 2 or len(heads) != len(params):
            raise ConfigError("need one head spec and parameter vector per treatment (at least two)")
        for spec in heads:
            if spec.input_width != self.phi_spec.output_width:
                raise DimensionError(
                    f"head input width {spec.input_width} != representation width {self.phi_spec.output_width}")
            if spec.output_width != 1:
                raise DimensionError("outcome heads must have a single output")
        phi = _frozen(self.phi_params)
        for spec, vec in zip((self.phi_spec,) + heads, (phi,) + params):
            if vec.shape != (spec.param_count,):
                raise DimensionError(f"parameter vector {vec.shape} does not match {spec.layer_widths}")
            if not np.all(np.isfinite(vec)):
                raise NonFiniteError("non-finite model parameters")
        object.__setattr__(self, "phi_params", phi)
        object.__setattr__(self, "head_specs", heads)
        object.__setattr__(self, "head_params", params)

    @property
    def d(self) -> int:
        return self.phi_spec.input_width

    @property
    def latent_width(self) -> int:
        return self.phi_spec.output_width

    @property
    def num_treatments(self) -> int:
        return len(self.head_specs)

    @property
    def param_count(self) -> int:
        return self.phi_spec.param_count + sum(s.param_count for s in self.head_specs)

    @property
    def model_id(self) -> str:
        return f"tarnet-{array_hash(*((self.phi_params,) + self.head_params), length=12)}"

    def flat_params(self) -> np.ndarray:
        return np.concatenate((self.phi_params,) + self.head_params)

    def with_flat_params(self, flat: np.ndarray, meta: Optional[ModelMeta] = None) -> "TarNetModel":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.param_count,):
            raise DimensionError(f"expected {self.param_count} parameters, got {flat.shape}")
        sizes = [self.phi_spec.param_count] + [s.param_count for s in self.head_specs]
        pieces = np.split(flat, np.cumsum(sizes)[:-1])
        return TarNetModel(self.phi_spec, pieces[0], self.head_specs, tuple(pieces[1:]), meta or self.meta)

    def represent(self, X: np.ndarray) -> np.ndarray:
        R, _ = forward_batch(self.phi_spec, self.phi_params, X)
        return R

    def predict_outcomes(self, X: np.ndarray) -> np.ndarray:
        """Predicted mean outcome under every treatment, n x (M+1)."""
        R = self.represent(np.atleast_2d(np.asarray(X, dtype=np.float64)))
        cols = [forward_batch(s, p, R)[0][:, 0] for s, p in zip(self.head_specs, self.head_params)]
        out = np.column_stack(cols)
        return expit(out) if self.meta.loss_kind is LossKind.BERNOULLI_NLL else out


@dataclass(frozen=True)
class ObjectiveValue:
    factual_term: float
    ipm_term: float
    total: float


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    factual_term: float
    ipm_term: float
    total: float


@dataclass
class TrainTrace:
    records: List[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def totals(self) -> np.ndarray:
        return np.array([r.total for r in self.records])

    @property
    def final_factual(self) -> float:
        return self.records[-1].factual_term if self.records else float("nan")


def build_model(
    d: int,
    phi_spec: Optional[MlpSpec] = None,
    head_hidden: Sequence[int] = DEFAULT_HEAD_HIDDEN,
    num_treatments: int = 2,
    seed: int = 0,
    loss_kind: LossKind = LossKind.SQUARED_ERROR,
) -> TarNetModel:
    """Freshly initialized model; Φ defaults to [d, 64, 32] ELU and heads to [32, 16, 1]."""
    if phi_spec is None:
        phi_spec = MlpSpec((d,) + DEFAULT_PHI_HIDDEN, Activation.ELU, seed)
    if phi_spec.input_width != d:
        raise DimensionError(f"Φ input width {phi_spec.input_width} != covariate width {d}")
    heads = tuple(
        MlpSpec((phi_spec.output_width,) + tuple(head_hidden) + (1,), phi_spec.activation, seed + 1 + t)
        for t in range(num_treatments)
    )
    return TarNetModel(phi_spec, init_params(phi_spec), heads, tuple(init_params(s) for s in heads),
                       ModelMeta(loss_kind=loss_kind))


def group_weights(a: np.ndarray, num_groups: int) -> np.ndarray:
    """w_i = 1 / ((M+1) p(a_i)); for two groups this is a/(2v) + (1-a)/(2(1-v))."""
    counts = np.bincount(a, minlength=num_groups)
    if np.any(counts == 0):
        raise DegenerateGroupError(
            f"treatment group(s) {np.flatnonzero(counts == 0).tolist()} empty in batch; group weights undefined")
    share = counts / a.shape[0]
    return 1.0 / (num_groups * share[a])


def pointwise_loss(kind: LossKind, out: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    if kind is LossKind.SQUARED_ERROR:
        r = out - y
        return r * r, 2.0 * r
    return np.logaddexp(0.0, out) - y * out, expit(out) - y


def _ipm_term(R: np.ndarray, a: np.ndarray, num_groups: int, ipm: IpmConfig, need_grad: bool):
    pairs = list(combinations(range(num_groups), 2))
    value = 0.0
    dR = np.zeros_like(R)
    for g, h in pairs:
        ig, ih = np.flatnonzero(a == g), np.flatnonzero(a == h)
        res = sinkhorn_w1(PointCloud(R[ig]), PointCloud(R[ih]), ipm.eps, ipm.iters, with_grad=need_grad)
        value += res.cost
        if need_grad:
            dR[ig] += res.grad_p
            dR[ih] += res.grad_q
    return value / len(pairs), dR / len(pairs)


def _objective_arrays(model: TarNetModel, x, a, y, config: TrainConfig, need_grad: bool):
    G = model.num_treatments
    if x.shape[1] != model.d:
        raise DimensionError(f"covariate width {x.shape[1]} != model input width {model.d}")
    counts = np.bincount(a, minlength=G)
    if len(counts) > G:
        raise DatasetError(f"labels exceed the model's {G} heads")
    if config.alpha > 0 and np.count_nonzero(counts) < 2:
        raise DegenerateGroupError("single-group batch: IPM undefined")
    w = group_weights(a, G)
    n = x.shape[0]

    R, phi_cache = forward_batch(model.phi_spec, model.phi_params, x)
    losses = np.empty(n)
    dR = np.zeros_like(R)
    head_grads = []
    for g in range(G):
        idx = np.flatnonzero(a == g)
        out, cache = forward_batch(model.head_specs[g], model.head_params[g], R[idx])
        loss, dloss = pointwise_loss(config.loss_kind, out[:, 0], y[idx])
        losses[idx] = loss
        if need_grad:
            grad, dRg = backward_batch(model.head_specs[g], model.head_params[g], cache,
                                       (w[idx] * dloss / n)[:, None])
            dR[idx] += dRg
            head_grads.append(grad)

    factual = float(np.sum(w * losses) / n)
    ipm_value = 0.0
    if config.alpha > 0:
        ipm_value, dR_ipm = _ipm_term(R, a, G, config.ipm, need_grad)
        dR += config.alpha * dR_ipm
    value = ObjectiveValue(factual, ipm_value, factual + config.alpha * ipm_value)
    if not need_grad:
        return value, None
    phi_grad, _ = backward_batch(model.phi_spec, model.phi_params, phi_cache, dR)
    return value, np.concatenate([phi_grad] + head_grads)


def objective(model: TarNetModel, batch: CausalDataset, config: TrainConfig) -> ObjectiveValue:
    value, _ = _objective_arrays(model, batch.x, batch.a, batch.y, config, need_grad=False)
    return value


def objective_and_grad(model: TarNetModel, batch: CausalDataset, config: TrainConfig) -> Tuple[ObjectiveValue, np.ndarray]:
    """Objective and its gradient wrt ``model.flat_params()``."""
    return _objective_arrays(model, batch.x, batch.a, batch.y, config, need_grad=True)


def _complete_batch(idx: np.ndarray, a: np.ndarray, num_groups: int, rng: np.random.Generator) -> np.ndarray:
    # batches missing a treatment group are resampled, then patched
    for _ in range(10):
        if np.all(np.bincount(a[idx], minlength=num_groups) > 0):
            return idx
        idx = rng.choice(a.shape[0], size=max(len(idx), num_groups), replace=False)
    missing = np.flatnonzero(np.bincount(a[idx], minlength=num_groups) == 0)
    extra = [rng.choice(np.flatnonzero(a == g)) for g in missing]
    return np.concatenate([idx, np.asarray(extra, dtype=np.int64)])


def _optimize(
    model: TarNetModel,
    ds: CausalDataset,
    config: TrainConfig,
    epochs: int,
    progress: Optional[ProgressFn],
) -> Tuple[TarNetModel, TrainTrace]:
    rng = np.random.default_rng(config.seed)
    opt_cfg = config.optimizer_config
    params = model.flat_params()
    state = OptimizerState()
    trace = TrainTrace()
    G = model.num_treatments
    for epoch in range(epochs):
        order = rng.permutation(ds.n)
        sums = np.zeros(3)
        batches = 0
        for start in range(0, ds.n, config.batch_size):
            idx = _complete_batch(order[start:start + config.batch_size], ds.a, G, rng)
            value, grad = _objective_arrays(model, ds.x[idx], ds.a[idx], ds.y[idx], config, need_grad=True)
            params, state = optimizer_step(params, grad, state, opt_cfg)
            model = model.with_flat_params(params)
            sums += (value.factual_term, value.ipm_term, value.total)
            batches += 1
        factual, ipm, total = sums / batches
        trace.records.append(EpochRecord(epoch, factual, ipm, total))
        logger.debug("epoch %d factual=%.6g ipm=%.6g total=%.6g", epoch, factual, ipm, total,
                     extra={"epoch": epoch, "dataset": model.meta.dataset_id})
        if progress is not None:
            progress((epoch + 1) / epochs)
    return model, trace


def train(
    ds: CausalDataset,
    phi_spec: Optional[MlpSpec] = None,
    head_hidden: Sequence[int] = DEFAULT_HEAD_HIDDEN,
    config: TrainConfig = TrainConfig(),
    *,
    progress: Optional[ProgressFn] = None,
) -> Tuple[TarNetModel, TrainTrace]:
    """Minibatch training of a fresh model on ``ds``; deterministic per ``config.seed``."""
    if not ds.both_groups:
        raise DegenerateGroupError(f"dataset {ds.dataset_id} has an empty treatment group")
    model = build_model(ds.d, phi_spec, head_hidden, ds.M + 1, config.seed, config.loss_kind)
    model = replace(model, meta=ModelMeta(ds.dataset_id, config_hash(config), config.loss_kind))
    logger.info("training on %s (n=%d, alpha=%g, epochs=%d)", ds.dataset_id, ds.n, config.alpha, config.epochs)
    return _optimize(model, ds, config, int(config.epochs), progress)


def fine_tune(
    model: TarNetModel,
    ds_target: CausalDataset,
    config: TrainConfig,
    *,
    epochs: Optional[int] = None,
    progress: Optional[ProgressFn] = None,
) -> Tuple[TarNetModel, TrainTrace]:
    """Continue optimizing a trained model on target data; ``model`` itself is untouched."""
    if ds_target.d != model.d:
        raise DimensionError(f"incompatible covariate width: model expects {model.d}, target has {ds_target.d}")
    if ds_target.M + 1 != model.num_treatments:
        raise DatasetError(f"target has {ds_target.M + 1} treatments, model has {model.num_treatments} heads")
    epochs = int(config.epochs if epochs is None else epochs)
    if epochs < 0:
        raise ConfigError(f"epochs must be nonnegative, got {epochs}")
    if epochs == 0:
        return model, TrainTrace()
    if not ds_target.both_groups:
        raise DegenerateGroupError(f"target {ds_target.dataset_id} has an empty treatment group")
    meta = ModelMeta(ds_target.dataset_id, config_hash(config), config.loss_kind)
    return _optimize(replace(model, meta=meta), ds_target, config, epochs, progress)


def predict_ite_batch(model: TarNetModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.d:
        raise DimensionError(f"covariates of shape {X.shape} do not match model width {model.d}")
    out = model.predict_outcomes(X)
    return out[:, 1] - out[:, 0]


def predict_ite(model: TarNetModel, x: np.ndarray) -> float:
    """τ̂(x) = f̂(x, 1) − f̂(x, 0) for one covariate vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.d:
        raise DimensionError(f"covariate vector of shape {x.shape} does not match model width {model.d}")
    return float(predict_ite_batch(model, x[None, :])[0])


def permute_heads(model: TarNetModel, sigma: Sequence[int]) -> TarNetModel:
    """Head g moves to slot sigma[g], matching labels relabelled as sigma[a]."""
    sigma = list(sigma)
    if sorted(sigma) != list(range(model.num_treatments)):
        raise ConfigError(f"{sigma} is not a permutation of the heads")
    specs = [None] * len(sigma)
    params = [None] * len(sigma)
    for g, target in enumerate(sigma):
        specs[target] = model.head_specs[g]
        params[target] = model.head_params[g]
    return TarNetModel(model.phi_spec, model.phi_params, tuple(specs), tuple(params), model.meta)


def swap_heads(model: TarNetModel) -> TarNetModel:
    return permute_heads(model, [1, 0])


def save_model(model: TarNetModel, path: PathLike) -> Path:
    return dump_json({
        "phi_spec": model.phi_spec.to_dict(),
        "phi_params": model.phi_params,
        "head_specs": [s.to_dict() for s in model.head_specs],
        "head_params": list(model.head_params),
        "meta": {"dataset_id": model.meta.dataset_id, "config_hash": model.meta.config_hash,
                 "loss_kind": model.meta.loss_kind.value},
    }, path)


def load_model(path: PathLike) -> TarNetModel:
    data = load_json(path)
    try:
        return TarNetModel(
            MlpSpec.from_dict(data["phi_spec"]),
            np.asarray(data["phi_params"], dtype=np.float64),
            tuple(MlpSpec.from_dict(s) for s in data["head_specs"]),
            tuple(np.asarray(p, dtype=np.float64) for p in data["head_params"]),
            ModelMeta(**data["meta"]),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed model file {path}: {exc}") from exc
