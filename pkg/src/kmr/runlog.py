"""JSON-lines run logs and the CSV cost/quality report.

Layout: one ``header`` line, one ``step`` line per accepted transformation
(flushed as it happens), and a closing ``summary`` line. Wall-clock timings
sit under each step's ``timing`` key so reproducibility checks can drop them.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from .core import TransformationRecord
from .engine import RunResult

FORMAT_VERSION = 1


def _json(value) -> str:
    return json.dumps(value, sort_keys=True)


class RunLogWriter:
    def __init__(self, path, config: dict, seed: int):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("w")
        self._line({"type": "header", "format_version": FORMAT_VERSION, "seed": seed, "config": config})

    def _line(self, obj: dict) -> None:
        self._fh.write(_json(obj) + "\n")
        self._fh.flush()

    def write_record(self, record: TransformationRecord) -> None:
        self._line(record.to_dict())

    def write_summary(self, result: RunResult) -> None:
        self._line(
            {
                "type": "summary",
                "outcome": result.outcome.value,
                "budget": result.budget,
                "iterations": len(result.log),
                "stop_reason": result.stop_reason,
                "initial": result.initial.to_dict(),
                "final": result.final.to_dict(),
                "cost": result.final.cost,
                "quality": result.final.quality,
                "rejected": result.rejected,
            }
        )

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_runlog(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def strip_timing(lines: list[dict]) -> list[dict]:
    return [{k: v for k, v in line.items() if k != "timing"} for line in lines]


def steps(lines: list[dict]) -> list[TransformationRecord]:
    return [TransformationRecord.from_dict(d) for d in lines if d.get("type") == "step"]


def report_rows(lines: list[dict]) -> list[dict]:
    """Initial row plus one row per step: iteration, cost, quality, knob, value."""
    step_lines = [d for d in lines if d.get("type") == "step"]
    summary = next((d for d in lines if d.get("type") == "summary"), None)
    if step_lines:
        initial = step_lines[0]["pre"]
    elif summary is not None:
        initial = summary["initial"]
    else:
        raise ValueError("run log has neither steps nor a summary")
    rows = [{"iteration": 0, "cost": initial["cost"], "quality": initial["quality"], "knob": "", "value": ""}]
    for d in step_lines:
        value = d["value"]
        rows.append(
            {
                "iteration": d["step"],
                "cost": d["post"]["cost"],
                "quality": d["post"]["quality"],
                "knob": d["knob_id"],
                "value": json.dumps(value) if isinstance(value, list) else value,
            }
        )
    return rows


def report_csv(lines: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["iteration", "cost", "quality", "knob", "value"],
                            lineterminator="\r\n")
    writer.writeheader()
    writer.writerows(report_rows(lines))
    return buf.getvalue()
