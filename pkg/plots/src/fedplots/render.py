"""Rendering of experiment artifacts into figures.

Two input schemas are understood: run-record CSVs (one training curve per
file, legend text pulled from the sibling JSON echo) and partition-statistics
CSVs (one stacked bar of class counts per client).  Every figure is written
in both a raster and a vector format, deterministically.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "fedplots"

import matplotlib.pyplot as plt

X_AXES = {
    "rounds": ("comm_rounds", "communication rounds"),
    "uplink_bits": ("uplink_bits", "uplink bits"),
    "total_bits": (None, "total communicated bits"),
    "total_cost": ("total_cost", "total cost"),
}
Y_AXES = {
    "train_loss": "train loss",
    "test_accuracy": "test accuracy",
}

RUN_COLUMNS = (
    "t",
    "comm_rounds",
    "uplink_bits",
    "downlink_bits",
    "local_steps",
    "total_cost",
    "train_loss",
    "test_loss",
    "test_accuracy",
)
PARTITION_COLUMNS = ("client_id", "class_id", "count")

PALETTE = plt.get_cmap("tab10").colors


class SchemaError(ValueError):
    """Input CSV does not carry the columns a job needs."""


@dataclass(frozen=True)
class PlotJob:
    """One figure: a set of input CSVs, an axis pair, and an output path."""

    inputs: tuple[str, ...]
    x_axis: str = "rounds"
    y_axis: str = "train_loss"
    legend_from: str = "cell"
    output: str = "figure.png"

    def __post_init__(self):
        if self.x_axis not in X_AXES:
            raise ValueError(f"unknown x axis {self.x_axis!r}, expected one of {sorted(X_AXES)}")
        if self.y_axis not in Y_AXES:
            raise ValueError(f"unknown y axis {self.y_axis!r}, expected one of {sorted(Y_AXES)}")
        if not self.inputs:
            raise ValueError("no input CSVs")


@dataclass
class Table:
    path: Path
    columns: tuple[str, ...]
    rows: list[dict] = field(default_factory=list)

    def numbers(self, column: str) -> list[float]:
        if column not in self.columns:
            raise SchemaError(f"{self.path}: missing column {column!r}")
        return [float(row[column]) for row in self.rows]


def read_table(path) -> Table:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: empty file")
        table = Table(path=path, columns=tuple(reader.fieldnames))
        table.rows = list(reader)
    return table


def is_partition_table(table: Table) -> bool:
    return tuple(table.columns) == PARTITION_COLUMNS


def curve_label(csv_path: Path, legend_from: str) -> str:
    """Label from the sibling JSON echo, falling back to the file stem."""
    sibling = csv_path.with_suffix(".json")
    if sibling.exists():
        config = json.loads(sibling.read_text()).get("config", {})
        value = config
        for key in legend_from.split("."):
            if not isinstance(value, dict) or key not in value:
                value = None
                break
            value = value[key]
        if value is not None:
            return str(value)
    return csv_path.stem


def _output_pair(output: str) -> tuple[Path, Path]:
    """The requested path plus its raster/vector counterpart."""
    path = Path(output)
    if path.suffix.lower() == ".svg":
        return path, path.with_suffix(".png")
    if path.suffix.lower() in (".png", ".jpg", ".jpeg"):
        return path, path.with_suffix(".svg")
    raise ValueError(f"unsupported output format {path.suffix!r} (use .png or .svg)")


def _save(fig, output: str) -> list[Path]:
    written = []
    for path in _output_pair(output):
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, dpi=150, metadata={"Date": None} if path.suffix == ".svg" else None)
        written.append(path)
    plt.close(fig)
    return written


def render_curves(job: PlotJob, tables: list[Table]) -> list[Path]:
    x_column, x_label = X_AXES[job.x_axis]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for i, table in enumerate(tables):
        if job.x_axis == "total_bits":
            xs = [a + b for a, b in zip(table.numbers("uplink_bits"), table.numbers("downlink_bits"))]
        else:
            xs = table.numbers(x_column)
        ys = table.numbers(job.y_axis)
        points = [(x, y) for x, y in zip(xs, ys) if math.isfinite(y)]
        label = curve_label(table.path, job.legend_from)
        color = PALETTE[i % len(PALETTE)]
        ax.plot([p[0] for p in points], [p[1] for p in points], label=label, color=color, linewidth=1.6)
    if job.y_axis == "train_loss":
        ax.set_yscale("log")
    ax.set_xlabel(x_label)
    ax.set_ylabel(Y_AXES[job.y_axis])
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return _save(fig, job.output)


def render_partition(job: PlotJob, table: Table) -> list[Path]:
    """Stacked bars of per-client class counts."""
    clients = sorted({int(float(v)) for v in table.numbers("client_id")})
    classes = sorted({int(float(v)) for v in table.numbers("class_id")})
    counts = {(int(float(r["client_id"])), int(float(r["class_id"]))): float(r["count"]) for r in table.rows}
    fig, ax = plt.subplots(figsize=(7, 4.5))
    bottom = [0.0] * len(clients)
    for j, cls in enumerate(classes):
        heights = [counts.get((client, cls), 0.0) for client in clients]
        ax.bar(range(len(clients)), heights, bottom=bottom, label=f"class {cls}", color=PALETTE[j % len(PALETTE)])
        bottom = [b + h for b, h in zip(bottom, heights)]
    ax.set_xticks(range(len(clients)))
    ax.set_xticklabels([str(c) for c in clients], fontsize=7)
    ax.set_xlabel("client")
    ax.set_ylabel("samples")
    ax.legend(fontsize=7, ncols=2)
    fig.tight_layout()
    return _save(fig, job.output)


def render(job: PlotJob) -> list[Path]:
    """Render one job; returns the written image paths (raster + vector)."""
    tables = [read_table(path) for path in job.inputs]
    partition_flags = [is_partition_table(t) for t in tables]
    if all(partition_flags):
        if len(tables) != 1:
            raise ValueError("partition charts take exactly one statistics CSV per figure")
        return render_partition(job, tables[0])
    if any(partition_flags):
        mixed = ", ".join(str(t.path) for t, flag in zip(tables, partition_flags) if flag)
        raise ValueError(f"cannot mix partition statistics with run records: {mixed}")
    return render_curves(job, tables)
