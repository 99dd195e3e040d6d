"""Run traces: the CSV row format shared by the policy engine and the GA baseline."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import IO

CSV_COLUMNS = [
    "cycle",
    "evaluations",
    "batch_mean_reward",
    "running_reward",
    "best_reward",
    "beta_e",
    "loss_u",
    "loss_kl",
    "loss_e",
    "anomaly_count",
]


@dataclass(frozen=True)
class TraceRow:
    cycle: int
    evaluations: int
    batch_mean_reward: float
    running_reward: float
    best_reward: float
    beta_e: float
    loss_u: float
    loss_kl: float
    loss_e: float
    anomaly_count: int

    def as_csv_values(self) -> list[str]:
        raw = asdict(self)
        out = []
        for col in CSV_COLUMNS:
            v = raw[col]
            out.append(str(v) if isinstance(v, int) else repr(float(v)))
        return out


@dataclass
class RunTrace:
    """Append-only record of one run plus its summary."""

    seed: int
    method: str = ""
    rows: list[TraceRow] = field(default_factory=list)
    best_reward: float = float("-inf")
    best_design: tuple[int, ...] | None = None
    evaluations_used: int = 0
    aborted: str | None = None

    def append(self, row: TraceRow) -> None:
        self.rows.append(row)

    def best_reward_at(self, budget: int) -> float | None:
        """Best-so-far after at most ``budget`` evaluations, None if nothing recorded yet."""
        best = None
        for row in self.rows:
            if row.evaluations > budget:
                break
            best = row.best_reward
        return best

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(CSV_COLUMNS)
            for row in self.rows:
                writer.writerow(row.as_csv_values())

    def summary_dict(self, space=None) -> dict:
        best_wire = None
        if self.best_design is not None:
            best_wire = (
                space.point_to_wire(self.best_design) if space is not None
                else list(self.best_design)
            )
        return {
            "method": self.method,
            "seed": self.seed,
            "best_reward": None if self.best_design is None else self.best_reward,
            "best_design": best_wire,
            "best_design_indices": None if self.best_design is None else list(self.best_design),
            "evaluations": self.evaluations_used,
            "aborted": self.aborted,
        }

    def write_summary(self, path: str | Path, space=None) -> None:
        with open(path, "w") as f:
            json.dump(self.summary_dict(space), f, indent=2, sort_keys=True)
            f.write("\n")


def read_trace_csv(path: str | Path) -> list[TraceRow]:
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != CSV_COLUMNS:
            raise ValueError(f"unexpected trace columns in {path}: {reader.fieldnames}")
        for rec in reader:
            rows.append(
                TraceRow(
                    cycle=int(rec["cycle"]),
                    evaluations=int(rec["evaluations"]),
                    batch_mean_reward=float(rec["batch_mean_reward"]),
                    running_reward=float(rec["running_reward"]),
                    best_reward=float(rec["best_reward"]),
                    beta_e=float(rec["beta_e"]),
                    loss_u=float(rec["loss_u"]),
                    loss_kl=float(rec["loss_kl"]),
                    loss_e=float(rec["loss_e"]),
                    anomaly_count=int(rec["anomaly_count"]),
                )
            )
    return rows


class TraceWriter:
    """Incremental CSV writer so partial traces survive an aborted run."""

    def __init__(self, path: str | Path | None):
        self._file: IO[str] | None = None
        self._writer = None
        if path is not None:
            self._file = open(path, "w", newline="")
            self._writer = csv.writer(self._file)
            self._writer.writerow(CSV_COLUMNS)
            self._file.flush()

    def write_row(self, row: TraceRow) -> None:
        if self._writer is None:
            return
        self._writer.writerow(row.as_csv_values())
        self._file.flush()

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None
