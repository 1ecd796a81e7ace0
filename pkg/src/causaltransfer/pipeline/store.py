"""Workspace layout ``workdir/{datasets,models,reports,results}`` with
content-hash file names."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Sequence

from .._io import PathLike, file_hash
from ..affinity import TaskDistanceReport, save_report
from ..datagen import CausalDataset, load_dataset, save_dataset
from ..metrics import BoundReport, save_bound_reports
from ..tarnet import TarNetModel, load_model, save_model
from .results import ResultTable, save_curves, save_table

logger = logging.getLogger(__name__)

SUBDIRS = ("datasets", "models", "reports", "results")


@dataclass(frozen=True)
class Workspace:
    root: Path

    @classmethod
    def create(cls, root: PathLike) -> "Workspace":
        root = Path(root)
        for sub in SUBDIRS:
            (root / sub).mkdir(parents=True, exist_ok=True)
        return cls(root)

    def dir(self, sub: str) -> Path:
        return self.root / sub

    def dataset_path(self, ds: CausalDataset) -> Path:
        return self.dir("datasets") / f"{ds.dataset_id}.csv"

    def model_path(self, model: TarNetModel) -> Path:
        return self.dir("models") / f"{model.model_id}.json"

    def put_dataset(self, ds: CausalDataset) -> Path:
        path = self.dataset_path(ds)
        if not path.exists():
            save_dataset(ds, path)
        return path

    def get_dataset(self, dataset_id: str) -> CausalDataset:
        return load_dataset(self.dir("datasets") / f"{dataset_id}.csv")

    def put_model(self, model: TarNetModel) -> Path:
        path = self.model_path(model)
        if not path.exists():
            save_model(model, path)
        return path

    def get_model(self, model_id: str) -> TarNetModel:
        return load_model(self.dir("models") / f"{model_id}.json")

    def put_report(self, report: TaskDistanceReport, tag: str = "") -> Path:
        name = f"cita-{report.source_id}-{report.target_id}{'-' + tag if tag else ''}.json"
        return save_report(report, self.dir("reports") / name)

    def put_bounds(self, reports: Sequence[BoundReport], name: str) -> Path:
        return save_bound_reports(reports, self.dir("reports") / f"bounds-{name}.json")

    def put_table(self, table: ResultTable, name: str) -> Path:
        return save_table(table, self.dir("results") / f"{name}.csv")

    def put_curves(self, curves, name: str) -> Path:
        return save_curves(curves, self.dir("results") / f"{name}-curves.csv")

    def fingerprint(self, paths: Sequence[Path]) -> Dict[str, str]:
        """sha256 of each file, for before/after comparisons."""
        return {str(p): file_hash(p) for p in paths}
