"""
Loss trace tracking and CSV export.
"""
import csv
import io
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Deque, List, Union

import numpy as np

from config.neti_config import SMOOTHING_WINDOW
from persistence.run_files import atomic_write_bytes

FIELDNAMES = ["step", "raw_loss", "smoothed_loss"]


@dataclass
class LossRecord:
    """One optimizer step."""
    step: int
    raw_loss: float
    smoothed_loss: float


class LossTrace:
    """Raw per-step losses and their moving average over the last ``window`` steps."""

    def __init__(self, window: int = SMOOTHING_WINDOW):
        self.window = window
        self.records: List[LossRecord] = []
        self._recent: Deque[float] = deque(maxlen=window)

    def __len__(self) -> int:
        return len(self.records)

    def record(self, step: int, loss: float) -> LossRecord:
        """Record a step's loss and return the new record."""
        self._recent.append(float(loss))
        rec = LossRecord(step, float(loss), float(np.mean(self._recent)))
        self.records.append(rec)
        return rec

    @property
    def raw(self) -> np.ndarray:
        return np.asarray([r.raw_loss for r in self.records])

    @property
    def smoothed(self) -> np.ndarray:
        return np.asarray([r.smoothed_loss for r in self.records])

    @property
    def final_smoothed(self) -> float:
        if not self.records:
            return float("nan")
        return self.records[-1].smoothed_loss

    def export_csv(self, path: Union[str, Path]) -> None:
        """Write step, raw_loss and smoothed_loss rows."""
        buffer = io.StringIO(newline="")
        writer = csv.DictWriter(buffer, fieldnames=FIELDNAMES, lineterminator="\n")
        writer.writeheader()
        for rec in self.records:
            writer.writerow({"step": rec.step, "raw_loss": repr(rec.raw_loss), "smoothed_loss": repr(rec.smoothed_loss)})
        atomic_write_bytes(path, buffer.getvalue().encode("utf-8"))

    @classmethod
    def load_csv(cls, path: Union[str, Path], window: int = SMOOTHING_WINDOW) -> "LossTrace":
        trace = cls(window)
        with open(path, "r", encoding="utf-8", newline="") as handle:
            for row in csv.DictReader(handle):
                trace.records.append(LossRecord(int(row["step"]), float(row["raw_loss"]), float(row["smoothed_loss"])))
        for rec in trace.records[-window:]:
            trace._recent.append(rec.raw_loss)
        return trace
