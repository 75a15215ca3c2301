"""Bit accounting, the combined cost model, and per-round run records.

local_steps counts rounds of parallel local work (sampled clients step
together), comm_rounds counts the rounds where models actually moved over
the wire, and the bit counters advance only on those rounds.  One eval row
is appended per evaluation point; rows serialize to a fixed-schema CSV with
a sibling JSON carrying the configuration echo and summary.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

CSV_HEADER = "t,comm_rounds,uplink_bits,downlink_bits,local_steps,total_cost,train_loss,test_loss,test_accuracy"


def total_cost(comm_rounds: int, local_steps: int, tau: float) -> float:
    """Combined cost: a communication round has unit cost, a local round costs tau."""
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    return comm_rounds + local_steps * tau


@dataclass
class BitLedger:
    uplink_bits: int = 0
    downlink_bits: int = 0
    comm_rounds: int = 0
    local_steps: int = 0


@dataclass(frozen=True)
class EvalRow:
    t: int
    comm_rounds: int
    uplink_bits: int
    downlink_bits: int
    local_steps: int
    total_cost: float
    train_loss: float
    test_loss: float
    test_accuracy: float

    def as_csv(self) -> str:
        return ",".join(
            [
                str(self.t),
                str(self.comm_rounds),
                str(self.uplink_bits),
                str(self.downlink_bits),
                str(self.local_steps),
                repr(self.total_cost),
                repr(self.train_loss),
                repr(self.test_loss),
                repr(self.test_accuracy),
            ]
        )


@dataclass
class RunRecord:
    """Ordered evaluation rows plus the run's configuration echo.

    extra_summary carries run-level diagnostics (e.g. the control-variate
    sum drift) straight into the JSON summary.
    """

    config: dict
    tau: float
    rows: list[EvalRow] = field(default_factory=list)
    extra_summary: dict = field(default_factory=dict)

    def record_eval(self, ledger: BitLedger, train_loss: float, test_loss: float, test_accuracy: float, t: int) -> EvalRow:
        if self.rows and t <= self.rows[-1].t:
            raise ValueError(f"evaluation at t={t} is out of order (last was t={self.rows[-1].t})")
        row = EvalRow(
            t=t,
            comm_rounds=ledger.comm_rounds,
            uplink_bits=ledger.uplink_bits,
            downlink_bits=ledger.downlink_bits,
            local_steps=ledger.local_steps,
            total_cost=total_cost(ledger.comm_rounds, ledger.local_steps, self.tau),
            train_loss=float(train_loss),
            test_loss=float(test_loss),
            test_accuracy=float(test_accuracy),
        )
        self.rows.append(row)
        return row

    def summary(self) -> dict:
        if not self.rows:
            return dict(self.extra_summary)
        last = self.rows[-1]
        return {
            **self.extra_summary,
            "best_accuracy": max(r.test_accuracy for r in self.rows),
            "final_loss": last.train_loss,
            "final_test_loss": last.test_loss,
            "final_test_accuracy": last.test_accuracy,
            "comm_rounds": last.comm_rounds,
            "uplink_bits": last.uplink_bits,
            "downlink_bits": last.downlink_bits,
            "local_steps": last.local_steps,
            "total_cost": last.total_cost,
            "seed": self.config.get("seed", self.config.get("fed", {}).get("seed")),
        }

    def write_csv(self, path) -> None:
        lines = [CSV_HEADER] + [row.as_csv() for row in self.rows]
        _atomic_write(path, "\n".join(lines) + "\n")

    def write_json(self, path) -> None:
        payload = {"config": self.config, "summary": self.summary()}
        _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _atomic_write(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)
