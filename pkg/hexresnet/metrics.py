"""Per-epoch metrics records, top-k accuracy and the append-only JSON-lines stream."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

# excluded when comparing runs for determinism
TIMING_FIELDS = frozenset({"seconds"})


@dataclass
class EvalResult:
    loss: float
    top1: float
    top5: float
    count: int


@dataclass
class MetricsRecord:
    epoch: int
    iteration: int
    lr: float
    train_loss: Optional[float]
    val_loss: float
    val_top1: float
    val_top5: float
    seconds: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.val_top1 <= self.val_top5 <= 100.0:
            raise ValueError(f"accuracies out of order: top1={self.val_top1} top5={self.val_top5}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MetricsRecord":
        return cls(**{name: data.get(name) for name in cls.__dataclass_fields__})

    def comparable(self) -> Dict[str, Any]:
        return {k: v for k, v in self.to_dict().items() if k not in TIMING_FIELDS}


def topk_accuracy(scores: np.ndarray, labels: np.ndarray, ks: Sequence[int] = (1, 5)) -> Dict[int, float]:
    """
    Percentage of rows whose true label is among the k largest scores.

    Ties are broken in favour of the lower class index.
    """
    if scores.shape[0] == 0:
        return {k: 0.0 for k in ks}
    ranking = np.argsort(-scores, axis=1, kind="stable")
    labels = np.asarray(labels).reshape(-1, 1)
    result = {}
    for k in ks:
        hits = (ranking[:, : min(k, scores.shape[1])] == labels).any(axis=1)
        result[k] = 100.0 * float(hits.mean())
    return result


def append_record(path: Union[str, Path], record: MetricsRecord) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as fp:
        fp.write(json.dumps(record.to_dict()) + "\n")


def read_records(path: Union[str, Path]) -> List[MetricsRecord]:
    path = Path(path)
    records = []
    with path.open("r", encoding="utf-8") as fp:
        for line in fp:
            if line.strip():
                records.append(MetricsRecord.from_dict(json.loads(line)))
    return records


def load_history(path: Union[str, Path]) -> pd.DataFrame:
    """Metrics stream as a DataFrame, one row per epoch record."""
    records = read_records(path)
    columns = list(MetricsRecord.__dataclass_fields__)
    return pd.DataFrame([r.to_dict() for r in records], columns=columns)


def summarize(history: pd.DataFrame) -> Dict[str, Any]:
    if history.empty:
        return {"epochs": 0}
    best = history.loc[history["val_top1"].idxmax()]
    last = history.iloc[-1]
    train_losses = history["train_loss"].dropna()
    return {
        "epochs": int(last["epoch"]),
        "iterations": int(last["iteration"]),
        "best_epoch": int(best["epoch"]),
        "best_val_top1": float(best["val_top1"]),
        "best_val_top5": float(best["val_top5"]),
        "final_val_loss": float(last["val_loss"]),
        "final_train_loss": float(train_losses.iloc[-1]) if not train_losses.empty else None,
        "total_seconds": float(history["seconds"].sum()),
    }


COMPARE_COLUMNS = ("val_loss", "val_top1", "val_top5", "val_top1_error")


def compare_histories(histories: Mapping[str, pd.DataFrame]) -> pd.DataFrame:
    """
    Validation curves of several runs side by side.

    One row per epoch and one ``(metric, run)`` column per entry of
    :data:`COMPARE_COLUMNS`; ``val_top1_error`` is ``100 - val_top1``. Epochs a
    run never reached are NaN.
    """
    columns = pd.MultiIndex.from_product([COMPARE_COLUMNS, list(histories)], names=["metric", "run"])
    frames = [
        history[["epoch", "val_loss", "val_top1", "val_top5"]].assign(
            val_top1_error=100.0 - history["val_top1"], run=label
        )
        for label, history in histories.items()
        if not history.empty
    ]
    if not frames:
        return pd.DataFrame(columns=columns)
    combined = pd.concat(frames, ignore_index=True)
    # a resumed stream may repeat an epoch; the last record wins
    combined = combined.drop_duplicates(subset=["run", "epoch"], keep="last")
    table = combined.pivot(index="epoch", columns="run", values=list(COMPARE_COLUMNS))
    return table.reindex(columns=columns).sort_index()


def read_json(path: Path) -> Optional[Dict[str, Any]]:
    if not path.exists():
        return None
    try:
        with path.open("r", encoding="utf-8") as fp:
            return json.load(fp)
    except (OSError, json.JSONDecodeError) as exc:
        logger.warning("could not read %s: %s", path, exc)
        return None


def write_json(path: Path, data: Dict[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fp:
        json.dump(data, fp, indent=2, sort_keys=True)
