"""Experiment runners.

Every runner takes an :class:`ExperimentConfig`, runs one job per seed through
the worker pool and merges the per-seed tables in seed order. With a
:class:`Workspace` the datasets, models and reports of each job are persisted.
"""

from __future__ import annotations

import logging
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..affinity import cita, select_closest
from ..datagen import (
    CausalDataset,
    GeneratorConfig,
    concat_datasets,
    counterfactual_view,
    flip_treatments,
    generate,
    nested_subsets,
)
from ..errors import ConfigError, DatasetError, StageError
from ..metrics import (
    check_shalit_sandwich,
    check_thm1,
    check_thm2_l1_heat,
    check_transfer_bounds,
    losses,
    pearson,
    pehe,
    spearman,
)
from ..nnkernel import Activation, MlpSpec
from ..tarnet import TarNetModel, TrainTrace, build_model, fine_tune, permute_heads, train
from .config import Experiment, ExperimentConfig
from .results import ResultTable
from .store import Workspace
from .workers import run_jobs

logger = logging.getLogger(__name__)


@contextmanager
def stage(name: str, task: Optional[str] = None) -> Iterator[None]:
    """Tag any failure inside the block with the stage (and task) it came from."""
    logger.info("stage %s%s", name, f" [{task}]" if task else "", extra={"stage": name, "task": task})
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        logger.error("stage %s failed: %s", name, exc, extra={"stage": name, "task": task})
        raise StageError(name, str(exc), task=task) from exc


@dataclass(frozen=True)
class Trained:
    ds: CausalDataset
    model: TarNetModel
    trace: TrainTrace
    label: str


def _phi_spec(config: ExperimentConfig, d: int, seed: int) -> MlpSpec:
    return MlpSpec((d,) + tuple(config.train.phi_hidden), Activation.ELU, seed)


def _fit(config: ExperimentConfig, ds: CausalDataset, alpha: float, seed: int, label: str,
         epochs: Optional[int] = None) -> Trained:
    cfg = config.train.train_config(alpha, seed, epochs)
    model, trace = train(ds, _phi_spec(config, ds.d, seed), config.train.head_hidden, cfg)
    return Trained(ds, model, trace, label)


def _fine_tune(config: ExperimentConfig, source: TarNetModel, ds: CausalDataset, seed: int) -> TarNetModel:
    cfg = config.train.train_config(config.alpha, seed)
    model, _ = fine_tune(source, ds, cfg, epochs=config.fine_tune_epochs)
    return model


def _metric_row(model: TarNetModel, eval_ds: CausalDataset) -> Dict[str, float]:
    rep = losses(model, eval_ds)
    return {"pehe": pehe(model, eval_ds), "factual_loss": rep.factual, "cf_loss": rep.counterfactual}


def _persist(workspace: Optional[Workspace], *items) -> None:
    if workspace is None:
        return
    for item in items:
        if isinstance(item, CausalDataset):
            workspace.put_dataset(item)
        elif isinstance(item, TarNetModel):
            workspace.put_model(item)


def _sources_and_target(config: ExperimentConfig, seed: int) -> Tuple[GeneratorConfig, List[GeneratorConfig]]:
    grid = config.task_grid(seed)
    if len(grid) < 2:
        raise ConfigError("at least one source task is required")
    return grid[0], grid[1:]


def _target_train(config: ExperimentConfig, target: CausalDataset, seed: int) -> CausalDataset:
    if not config.sizes:
        return target
    if config.sizes[0] > target.n:
        raise ConfigError(f"size {config.sizes[0]} exceeds the {target.n} target rows")
    return nested_subsets(target, [config.sizes[0]], seed)[0]


def _train_pool(config: ExperimentConfig, cfgs: Sequence[GeneratorConfig], seed: int,
                workspace: Optional[Workspace]) -> List[Trained]:
    pool = []
    for gen in cfgs:
        with stage("train-sources", gen.label):
            ds = generate(gen)
            trained = _fit(config, ds, config.alpha, seed, gen.label)
        _persist(workspace, ds, trained.model)
        pool.append(trained)
    return pool


def _select_and_transfer(config: ExperimentConfig, pool: List[Trained], target_train: CausalDataset,
                         seed: int, workspace: Optional[Workspace]):
    with stage("affinity", target_train.dataset_id):
        best, reports = select_closest([(t.model, t.ds) for t in pool], target_train, gate=config.gate)
    if workspace is not None:
        for rep in reports:
            workspace.put_report(rep, f"s{seed}")
    chosen = pool[best]
    before = workspace.fingerprint([workspace.model_path(chosen.model)]) if workspace else None
    with stage("fine-tune", chosen.label):
        # target label a is served by source head best_perm[a]
        aligned = permute_heads(chosen.model, np.argsort(reports[best].best_perm).tolist())
        tuned = _fine_tune(config, aligned, target_train, seed)
    if workspace is not None and workspace.fingerprint([workspace.model_path(chosen.model)]) != before:
        raise StageError("fine-tune", f"persisted source model {chosen.model.model_id} changed", task=chosen.label)
    return best, reports, tuned


def _merge(config: ExperimentConfig, parts: Sequence[ResultTable]) -> ResultTable:
    table = ResultTable(metadata={
        "experiment": config.experiment.value,
        "config_digest": config.digest,
        "defaults": config.train.to_dict(),
        "fine_tune_epochs": config.fine_tune_epochs,
        "per_seed": [],
    })
    for part in parts:
        table.extend(part)
        table.metadata["per_seed"].append(part.metadata)
    return table


def _run(config: ExperimentConfig, job: Callable[[int], ResultTable]) -> ResultTable:
    logger.info("experiment %s over seeds %s", config.experiment.value, list(config.seeds))
    parts = run_jobs(job, list(config.seeds), config.workers, name=config.experiment.value)
    return _merge(config, parts)


# Source selection and transfer


def run_transfer(config: ExperimentConfig, workspace: Optional[Workspace] = None) -> ResultTable:
    """Train every source, pick the closest by task distance, fine-tune it on
    the target and compare with a model trained from scratch."""

    def job(seed: int) -> ResultTable:
        out = ResultTable(metadata={"seed": seed})
        target_cfg, source_cfgs = _sources_and_target(config, seed)
        with stage("generate", target_cfg.label):
            target = generate(target_cfg)
            target_train = _target_train(config, target, seed)
        _persist(workspace, target, target_train)
        pool = _train_pool(config, source_cfgs, seed, workspace)
        best, reports, tuned = _select_and_transfer(config, pool, target_train, seed, workspace)
        with stage("scratch", target_cfg.label):
            scratch = _fit(config, target_train, config.alpha, seed, target_cfg.label)
        _persist(workspace, tuned, scratch.model)

        common = dict(experiment=Experiment.TRANSFER.value, seed=seed, alpha=config.alpha,
                      target_id=target.dataset_id, n_train=target_train.n)
        for i, (trained, rep) in enumerate(zip(pool, reports)):
            out.add(arm="source", source_id=trained.ds.dataset_id, param=float(i),
                    d_sym=rep.d_sym, d_identity=rep.d_identity, **common)
        chosen = pool[best]
        out.add(arm="transfer", source_id=chosen.ds.dataset_id, param=float(best),
                d_sym=reports[best].d_sym, d_identity=reports[best].d_identity,
                **_metric_row(tuned, target), **common)
        out.add(arm="scratch", **_metric_row(scratch.model, target), **common)
        out.metadata.update(selected=best, selected_label=chosen.label,
                            selected_perm=list(reports[best].best_perm))
        logger.info("seed %d: selected source %d (%s)", seed, best, chosen.label, extra={"seed": seed})
        return out

    return _run(config, job)


# Symmetry of the task distance under treatment flips


def run_symmetry(config: ExperimentConfig, workspace: Optional[Workspace] = None) -> ResultTable:
    """For each flip probability p: train on the flipped task and measure its
    distance back to the base task, symmetrized and with labels as given."""

    def job(seed: int) -> ResultTable:
        out = ResultTable(metadata={"seed": seed})
        base_cfg = config.task_grid(seed)[0]
        with stage("generate", base_cfg.label):
            base = generate(base_cfg)
        if base.M != 1:
            raise ConfigError("symmetry study needs a binary task")
        _persist(workspace, base)
        for i, p in enumerate(config.p_grid):
            label = f"{base_cfg.label}-flip{p:g}"
            with stage("train-sources", label):
                flipped = base if p == 0 else flip_treatments(base, p, seed * 1000 + i)
                trained = _fit(config, flipped, config.alpha, seed, label)
            with stage("affinity", label):
                rep = cita(trained.model, flipped, base)
            _persist(workspace, flipped, trained.model)
            if workspace is not None:
                workspace.put_report(rep, f"s{seed}")
            out.add(experiment=Experiment.SYMMETRY.value, seed=seed, alpha=config.alpha, arm="symmetry",
                    source_id=flipped.dataset_id, target_id=base.dataset_id, param=float(p),
                    d_sym=rep.d_sym, d_identity=rep.d_identity, n_train=flipped.n)
            out.curves.append({"curve": "d_sym", "seed": seed, "alpha": config.alpha, "x": p, "y": rep.d_sym})
            out.curves.append({"curve": "d_identity", "seed": seed, "alpha": config.alpha, "x": p,
                               "y": rep.d_identity})
        return out

    return _run(config, job)


# Task distance against counterfactual loss


def run_correlation(config: ExperimentConfig, workspace: Optional[Workspace] = None) -> ResultTable:
    """Base-task model per α; distance and counterfactual loss on every task.

    For the first α the base task's counterfactual view is also trained and
    compared with the counterfactual views of all tasks, which gives the
    order-preservation ranking.
    """

    def job(seed: int) -> ResultTable:
        out = ResultTable(metadata={"seed": seed, "spearman": {}, "pearson": {}})
        grid = config.task_grid(seed)
        with stage("generate"):
            tasks = [generate(g) for g in grid]
        for ds in tasks:
            if not ds.has_potentials:
                raise DatasetError(f"{ds.dataset_id} has no potential outcomes")
        _persist(workspace, *tasks)
        base = tasks[0]
        for alpha in config.alpha_grid:
            with stage("train-sources", f"{grid[0].label}-a{alpha:g}"):
                trained = _fit(config, base, alpha, seed, grid[0].label)
            _persist(workspace, trained.model)
            d_syms, cf_losses = [], []
            for i, (gen, ds) in enumerate(zip(grid, tasks)):
                with stage("affinity", gen.label):
                    rep = cita(trained.model, base, ds)
                    cf = losses(trained.model, ds).counterfactual
                d_syms.append(rep.d_sym)
                cf_losses.append(cf)
                out.add(experiment=Experiment.CORRELATION.value, seed=seed, alpha=alpha, arm="correlation",
                        source_id=base.dataset_id, target_id=ds.dataset_id, param=float(i), d_sym=rep.d_sym,
                        d_identity=rep.d_identity, cf_loss=cf, pehe=pehe(trained.model, ds), n_train=base.n)
                out.curves.append({"curve": "cita_vs_cf", "seed": seed, "alpha": alpha, "x": rep.d_sym, "y": cf})
            out.metadata["spearman"][str(alpha)] = spearman(d_syms, cf_losses)
            out.metadata["pearson"][str(alpha)] = pearson(d_syms, cf_losses)

        cf_tasks = [counterfactual_view(ds) for ds in tasks]
        with stage("train-sources", f"{grid[0].label}-counterfactual"):
            cf_trained = _fit(config, cf_tasks[0], config.alpha, seed, grid[0].label)
        for i, ds in enumerate(cf_tasks):
            with stage("affinity", f"{grid[i].label}-counterfactual"):
                rep = cita(cf_trained.model, cf_tasks[0], ds)
            out.add(experiment=Experiment.CORRELATION.value, seed=seed, alpha=config.alpha,
                    arm="correlation-cf", source_id=cf_tasks[0].dataset_id, target_id=ds.dataset_id,
                    param=float(i), d_sym=rep.d_sym, d_identity=rep.d_identity, n_train=base.n)
        return out

    return _run(config, job)


# Data efficiency


def default_sizes(n: int) -> List[int]:
    return sorted({max(2, n // 8), max(2, n // 4), max(2, n // 2), n})


def efficiency_summary(table: ResultTable) -> Dict[str, float]:
    """Median over seeds of the data-efficiency summary rows."""

    def median_curve(arm: str) -> Dict[int, float]:
        sizes = sorted({int(r["n_train"]) for r in table.where(arm=arm)})
        return {s: float(np.median(table.column("pehe", arm=arm, n_train=s))) for s in sizes}

    practice = median_curve("scratch-practice")
    ideal = median_curve("scratch-ideal")
    transfer = median_curve("transfer")
    if not practice or not transfer:
        return {}
    ori = max(practice)
    best_scratch = min(practice.values())
    reached = [s for s in sorted(transfer) if transfer[s] <= best_scratch]
    tl_size = reached[0] if reached else ori
    return {
        "ori_size": float(ori),
        "tl_size": float(tl_size),
        "wo_tl_ideal": ideal.get(ori, float("nan")),
        "wo_tl_practice": practice[ori],
        "w_tl_practice": transfer[tl_size],
        "data_gain": (1.0 - tl_size / ori) if reached else 0.0,
        "perf_gain": 1.0 - transfer[tl_size] / practice[ori] if practice[ori] > 0 else 0.0,
    }


def run_efficiency(config: ExperimentConfig, workspace: Optional[Workspace] = None) -> ResultTable:
    """PEHE against training-set size for scratch and transfer arms on nested
    subsets of the target task."""

    def job(seed: int) -> ResultTable:
        out = ResultTable(metadata={"seed": seed})
        target_cfg, source_cfgs = _sources_and_target(config, seed)
        with stage("generate", target_cfg.label):
            target = generate(target_cfg)
        sizes = list(config.sizes) or default_sizes(target.n)
        if sizes[-1] > target.n:
            raise ConfigError(f"size {sizes[-1]} exceeds the {target.n} target rows")
        subsets = nested_subsets(target, sizes, seed)
        _persist(workspace, target)
        pool = _train_pool(config, source_cfgs, seed, workspace)
        common = dict(experiment=Experiment.EFFICIENCY.value, seed=seed, target_id=target.dataset_id)

        for size, sub in zip(sizes, subsets):
            scratch = []
            for alpha in config.alpha_grid:
                with stage("scratch", f"{target_cfg.label}-n{size}-a{alpha:g}"):
                    trained = _fit(config, sub, alpha, seed, target_cfg.label)
                metrics = _metric_row(trained.model, target)
                scratch.append((trained.trace.final_factual, metrics["pehe"], alpha, metrics))
                out.add(arm="scratch", alpha=alpha, param=float(size), n_train=size, **metrics, **common)
            practice = min(scratch, key=lambda s: s[0])
            ideal = min(scratch, key=lambda s: s[1])
            out.add(arm="scratch-practice", alpha=practice[2], param=float(size), n_train=size,
                    **practice[3], **common)
            out.add(arm="scratch-ideal", alpha=ideal[2], param=float(size), n_train=size, **ideal[3], **common)

            best, reports, tuned = _select_and_transfer(config, pool, sub, seed, workspace)
            out.add(arm="transfer", alpha=config.alpha, source_id=pool[best].ds.dataset_id,
                    param=float(size), d_sym=reports[best].d_sym, d_identity=reports[best].d_identity,
                    n_train=size, **_metric_row(tuned, target), **common)
            out.curves.append({"curve": "scratch-practice", "seed": seed, "alpha": practice[2], "x": size,
                               "y": practice[1]})
            out.curves.append({"curve": "transfer", "seed": seed, "alpha": config.alpha, "x": size,
                               "y": out.rows[-1]["pehe"]})
        return out

    table = _run(config, job)
    table.metadata["summary"] = efficiency_summary(table)
    return table


# Data bundling baseline


def run_bundling(config: ExperimentConfig, workspace: Optional[Workspace] = None) -> ResultTable:
    """Train on the target data bundled with a growing number of source
    datasets (closest first) and compare with CITA transfer."""

    def job(seed: int) -> ResultTable:
        out = ResultTable(metadata={"seed": seed})
        target_cfg, source_cfgs = _sources_and_target(config, seed)
        with stage("generate", target_cfg.label):
            target = generate(target_cfg)
            target_train = _target_train(config, target, seed)
        pool = _train_pool(config, source_cfgs, seed, workspace)
        best, reports, tuned = _select_and_transfer(config, pool, target_train, seed, workspace)
        order = sorted(range(len(pool)), key=lambda i: (reports[i].d_sym, i))
        common = dict(experiment=Experiment.BUNDLING.value, seed=seed, alpha=config.alpha,
                      target_id=target.dataset_id)
        out.add(arm="transfer", source_id=pool[best].ds.dataset_id, param=float(best),
                d_sym=reports[best].d_sym, n_train=target_train.n, **_metric_row(tuned, target), **common)

        for count in range(len(pool) + 1):
            with stage("bundle", f"{target_cfg.label}-{count}"):
                bundle = concat_datasets([target_train] + [pool[i].ds for i in order[:count]])
                trained = _fit(config, bundle, config.alpha, seed, f"bundle{count}")
            metrics = _metric_row(trained.model, target)
            out.add(arm="bundle", param=float(count), n_train=bundle.n, **metrics, **common)
            if count == 0:
                out.add(arm="scratch", param=0.0, n_train=bundle.n, **metrics, **common)
            out.curves.append({"curve": "bundle", "seed": seed, "alpha": config.alpha, "x": bundle.n,
                               "y": metrics["pehe"]})
        return out

    return _run(config, job)


# Bound sweep


def run_verify_bounds(config: ExperimentConfig, workspace: Optional[Workspace] = None) -> ResultTable:
    """Evaluate every bound check over the family's tasks.

    Lower/sandwich bounds use ``bound_models`` freshly initialized models per
    task; transfer bounds use a model trained on the base task; the L1 check
    runs on Heat tasks only.
    """

    def job(seed: int) -> ResultTable:
        out = ResultTable(metadata={"seed": seed, "bounds": []})
        grid = config.task_grid(seed)
        with stage("generate"):
            tasks = [generate(g) for g in grid]
        base = tasks[0]
        with stage("train-sources", grid[0].label):
            source = _fit(config, base, config.alpha, seed, grid[0].label)
        heat = config.family.value == "heat"
        reports = []
        for i, (gen, ds) in enumerate(zip(grid, tasks)):
            with stage("bounds", gen.label):
                for j in range(config.bound_models):
                    model = build_model(ds.d, _phi_spec(config, ds.d, seed * 1000 + j), config.train.head_hidden,
                                        seed=seed * 1000 + j)
                    reports += [check_thm1(model, ds), check_shalit_sandwich(model, ds)]
                    if heat:
                        reports.append(check_thm2_l1_heat(base, ds, model))
                    out.add(experiment=Experiment.VERIFY_BOUNDS.value, seed=seed, alpha=0.0, arm="random-model",
                            target_id=ds.dataset_id, param=float(i), n_train=0, **_metric_row(model, ds))
                transfer = check_transfer_bounds(source.model, base, ds, seed=seed)
                reports += transfer
            out.add(experiment=Experiment.VERIFY_BOUNDS.value, seed=seed, alpha=config.alpha, arm="source-model",
                    source_id=base.dataset_id, target_id=ds.dataset_id, param=float(i), n_train=base.n,
                    **_metric_row(source.model, ds))
        if workspace is not None:
            workspace.put_bounds(reports, f"{config.family.value}-s{seed}")
        out.metadata["bounds"] = [r.to_dict() for r in reports]
        out.metadata["violations"] = sum(not r.holds for r in reports)
        return out

    return _run(config, job)


RUNNERS: Dict[Experiment, Callable[..., ResultTable]] = {
    Experiment.TRANSFER: run_transfer,
    Experiment.SYMMETRY: run_symmetry,
    Experiment.CORRELATION: run_correlation,
    Experiment.EFFICIENCY: run_efficiency,
    Experiment.BUNDLING: run_bundling,
    Experiment.VERIFY_BOUNDS: run_verify_bounds,
}


def run_experiment(config: ExperimentConfig, workspace: Optional[Workspace] = None) -> ResultTable:
    return RUNNERS[config.experiment](config, workspace)
