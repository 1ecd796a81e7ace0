"""Result tables written as CSV with a fixed column schema."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import numpy as np
import pandas as pd

from .._io import FLOAT_FORMAT, PathLike, dump_json, load_json
from ..errors import DatasetError

COLUMNS = (
    "experiment", "seed", "alpha", "arm", "source_id", "target_id", "param",
    "d_sym", "d_identity", "pehe", "factual_loss", "cf_loss", "n_train",
)
_STRINGS = ("experiment", "arm", "source_id", "target_id")
_INTS = ("seed", "n_train")


@dataclass
class ResultTable:
    """One row per (seed, cell); unknown columns are rejected, missing ones are NaN."""

    rows: List[Dict[str, Any]] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)
    curves: List[Dict[str, Any]] = field(default_factory=list, repr=False)

    def add(self, **row: Any) -> None:
        extra = set(row) - set(COLUMNS)
        if extra:
            raise DatasetError(f"unknown result columns {sorted(extra)}")
        full = {col: row.get(col) for col in COLUMNS}
        for col in COLUMNS:
            if full[col] is None:
                full[col] = "" if col in _STRINGS else (-1 if col in _INTS else np.nan)
        self.rows.append(full)

    def extend(self, other: "ResultTable") -> None:
        self.rows.extend(other.rows)
        self.curves.extend(other.curves)

    def __len__(self) -> int:
        return len(self.rows)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.rows, columns=list(COLUMNS))
        for col in _INTS:
            frame[col] = frame[col].astype("int64")
        for col in _STRINGS:
            frame[col] = frame[col].astype(str)
        return frame

    def where(self, **match: Any) -> List[Dict[str, Any]]:
        return [r for r in self.rows if all(r[k] == v for k, v in match.items())]

    def column(self, name: str, **match: Any) -> np.ndarray:
        return np.array([r[name] for r in self.where(**match)], dtype=np.float64)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, metadata: Optional[Dict[str, Any]] = None) -> "ResultTable":
        if tuple(frame.columns) != COLUMNS:
            raise DatasetError(f"result table columns {list(frame.columns)} do not match the schema")
        table = cls(metadata=dict(metadata or {}))
        for record in frame.to_dict(orient="records"):
            table.rows.append({
                col: (str(record[col]) if col in _STRINGS
                      else int(record[col]) if col in _INTS else float(record[col]))
                for col in COLUMNS
            })
        return table


def _meta_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def save_table(table: ResultTable, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="NaN", encoding="utf-8")
    if table.metadata:
        dump_json(table.metadata, _meta_path(path))
    return path


def load_table(path: PathLike) -> ResultTable:
    path = Path(path)
    frame = pd.read_csv(path, float_precision="round_trip", keep_default_na=False,
                        na_values={c: ["NaN", "nan"] for c in COLUMNS if c not in _STRINGS},
                        dtype={c: str for c in _STRINGS})
    meta = load_json(_meta_path(path)) if _meta_path(path).exists() else {}
    return ResultTable.from_frame(frame, meta)


def save_curves(curves: Iterable[Dict[str, Any]], path: PathLike) -> Path:
    """Long-format plot data: one row per (curve, x) point."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(list(curves), columns=["curve", "seed", "alpha", "x", "y"])
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, encoding="utf-8")
    return path


def load_curves(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")
