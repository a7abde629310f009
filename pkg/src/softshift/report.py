from __future__ import annotations

import csv
import io
import json
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

from .shift_analysis import Check

_FLOAT_FORMAT = ".17g"
_RECORD_SCALARS = (
    "trial_index", "n", "d", "R", "shift_norm", "log_actual", "slack_log", "wall_time",
)
_RECORD_MAPS = ("log_bounds", "log_actuals", "satisfied", "metrics")


class ReportParseError(RuntimeError):
    def __init__(self, message: str, *, field: str | None = None, line: int | None = None) -> None:
        location = []
        if field is not None:
            location.append(f"field {field!r}")
        if line is not None:
            location.append(f"line {line}")
        suffix = f" ({', '.join(location)})" if location else ""
        super().__init__(f"{message}{suffix}")
        self.field = field
        self.line = line


def encode_float(value: float) -> float | str:
    if math.isfinite(value):
        return value
    if math.isnan(value):
        return "nan"
    return "inf" if value > 0 else "-inf"


def decode_float(value: Any, field_name: str) -> float:
    if isinstance(value, bool):
        raise ReportParseError("expected a number", field=field_name)
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str) and value in {"inf", "-inf", "nan"}:
        return float(value)
    raise ReportParseError(f"expected a number, got {value!r}", field=field_name)


@dataclass(frozen=True)
class TrialRecord:
    trial_index: int
    n: int
    d: int
    R: float
    shift_norm: float
    log_actual: float
    slack_log: float
    log_bounds: dict[str, float]
    log_actuals: dict[str, float]
    satisfied: dict[str, bool]
    metrics: dict[str, float] = field(default_factory=dict)
    wall_time: float = 0.0

    @classmethod
    def from_checks(
        cls,
        *,
        trial_index: int,
        n: int,
        d: int,
        R: float,
        shift_norm: float,
        checks: Mapping[str, Check],
        primary: str,
        metrics: Mapping[str, float] | None = None,
        wall_time: float = 0.0,
    ) -> TrialRecord:
        names = sorted(checks)
        return cls(
            trial_index=trial_index,
            n=n,
            d=d,
            R=R,
            shift_norm=shift_norm,
            log_actual=checks[primary].log_actual,
            slack_log=checks[primary].slack,
            log_bounds={name: checks[name].log_bound for name in names},
            log_actuals={name: checks[name].log_actual for name in names},
            satisfied={name: checks[name].satisfied for name in names},
            metrics=dict(sorted((metrics or {}).items())),
            wall_time=wall_time,
        )

    def slack(self, name: str) -> float:
        return Check(self.log_actuals[name], self.log_bounds[name]).slack

    def to_dict(self, *, include_wall_time: bool = True) -> dict[str, Any]:
        data: dict[str, Any] = {
            "trial_index": self.trial_index,
            "n": self.n,
            "d": self.d,
            "R": encode_float(self.R),
            "shift_norm": encode_float(self.shift_norm),
            "log_actual": encode_float(self.log_actual),
            "slack_log": encode_float(self.slack_log),
            "log_bounds": {k: encode_float(v) for k, v in self.log_bounds.items()},
            "log_actuals": {k: encode_float(v) for k, v in self.log_actuals.items()},
            "satisfied": dict(self.satisfied),
            "metrics": {k: encode_float(v) for k, v in self.metrics.items()},
        }
        if include_wall_time:
            data["wall_time"] = encode_float(self.wall_time)
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TrialRecord:
        for name in (*_RECORD_SCALARS[:-1], *_RECORD_MAPS[:-1]):
            if name not in data:
                raise ReportParseError("missing record field", field=name)
        satisfied = data["satisfied"]
        if not isinstance(satisfied, dict) or any(
            not isinstance(v, bool) for v in satisfied.values()
        ):
            raise ReportParseError("expected a mapping of booleans", field="satisfied")
        return cls(
            trial_index=int(data["trial_index"]),
            n=int(data["n"]),
            d=int(data["d"]),
            R=decode_float(data["R"], "R"),
            shift_norm=decode_float(data["shift_norm"], "shift_norm"),
            log_actual=decode_float(data["log_actual"], "log_actual"),
            slack_log=decode_float(data["slack_log"], "slack_log"),
            log_bounds=_decode_map(data["log_bounds"], "log_bounds"),
            log_actuals=_decode_map(data["log_actuals"], "log_actuals"),
            satisfied=dict(satisfied),
            metrics=_decode_map(data.get("metrics", {}), "metrics"),
            wall_time=decode_float(data.get("wall_time", 0.0), "wall_time"),
        )


def _decode_map(value: Any, field_name: str) -> dict[str, float]:
    if not isinstance(value, dict):
        raise ReportParseError("expected a mapping", field=field_name)
    return {str(k): decode_float(v, f"{field_name}.{k}") for k, v in value.items()}


@dataclass(frozen=True)
class SuiteSummary:
    trials: int
    violations: dict[str, int]
    min_slack_log: dict[str, float]
    median_slack_log: float
    metric_max: dict[str, float]
    advisory: list[str]
    failed: list[str]

    @property
    def passed(self) -> bool:
        return not self.failed

    def to_dict(self) -> dict[str, Any]:
        return {
            "trials": self.trials,
            "violations": dict(self.violations),
            "min_slack_log": {k: encode_float(v) for k, v in self.min_slack_log.items()},
            "median_slack_log": encode_float(self.median_slack_log),
            "metric_max": {k: encode_float(v) for k, v in self.metric_max.items()},
            "advisory": list(self.advisory),
            "failed": list(self.failed),
            "passed": self.passed,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SuiteSummary:
        try:
            return cls(
                trials=int(data["trials"]),
                violations={str(k): int(v) for k, v in data["violations"].items()},
                min_slack_log=_decode_map(data["min_slack_log"], "min_slack_log"),
                median_slack_log=decode_float(data["median_slack_log"], "median_slack_log"),
                metric_max=_decode_map(data.get("metric_max", {}), "metric_max"),
                advisory=[str(name) for name in data.get("advisory", [])],
                failed=[str(name) for name in data.get("failed", [])],
            )
        except KeyError as exc:
            raise ReportParseError("missing summary field", field=str(exc.args[0])) from exc


def summarize(records: Iterable[TrialRecord], advisory: Iterable[str] = ()) -> SuiteSummary:
    ordered = sorted(records, key=lambda record: record.trial_index)
    advisory_names = sorted(set(advisory))
    names = sorted({name for record in ordered for name in record.satisfied})
    violations = {
        name: sum(1 for record in ordered if not record.satisfied.get(name, True))
        for name in names
    }
    min_slack = {
        name: min(record.slack(name) for record in ordered if name in record.satisfied)
        for name in names
    }
    metric_names = sorted({name for record in ordered for name in record.metrics})
    metric_max = {
        name: max(record.metrics[name] for record in ordered if name in record.metrics)
        for name in metric_names
    }
    slacks = [record.slack_log for record in ordered]
    median = statistics.median(slacks) if slacks else math.nan
    failed = [name for name in names if name not in advisory_names and violations[name] > 0]
    return SuiteSummary(
        trials=len(ordered),
        violations=violations,
        min_slack_log=min_slack,
        median_slack_log=median,
        metric_max=metric_max,
        advisory=advisory_names,
        failed=failed,
    )


@dataclass(frozen=True)
class SuiteReport:
    suite: str
    primary: str
    config: dict[str, Any]
    records: list[TrialRecord]
    summary: SuiteSummary

    @classmethod
    def assemble(
        cls,
        *,
        suite: str,
        primary: str,
        config: Mapping[str, Any],
        records: Iterable[TrialRecord],
        advisory: Iterable[str] = (),
    ) -> SuiteReport:
        ordered = sorted(records, key=lambda record: record.trial_index)
        return cls(
            suite=suite,
            primary=primary,
            config=dict(config),
            records=ordered,
            summary=summarize(ordered, advisory),
        )

    def first_violation(self) -> TrialRecord | None:
        for record in self.records:
            if any(not ok for name, ok in record.satisfied.items() if name in self.summary.failed):
                return record
        return None

    def to_dict(self, *, include_wall_time: bool = True) -> dict[str, Any]:
        return {
            "suite": self.suite,
            "primary": self.primary,
            "config": self.config,
            "records": [r.to_dict(include_wall_time=include_wall_time) for r in self.records],
            "summary": self.summary.to_dict(),
        }

    def to_json(self, *, include_wall_time: bool = True) -> str:
        payload = self.to_dict(include_wall_time=include_wall_time)
        return json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SuiteReport:
        for name in ("suite", "config", "records", "summary"):
            if name not in data:
                raise ReportParseError("missing report field", field=name)
        if not isinstance(data["records"], list):
            raise ReportParseError("expected a list", field="records")
        return cls(
            suite=str(data["suite"]),
            primary=str(data.get("primary", "")),
            config=dict(data["config"]),
            records=[TrialRecord.from_dict(item) for item in data["records"]],
            summary=SuiteSummary.from_dict(data["summary"]),
        )

    @classmethod
    def from_json(cls, text: str) -> SuiteReport:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ReportParseError(exc.msg, line=exc.lineno) from exc
        if not isinstance(data, dict):
            raise ReportParseError("report must be a JSON object", line=1)
        return cls.from_dict(data)


def _csv_columns(records: list[TrialRecord]) -> list[str]:
    columns = list(_RECORD_SCALARS)
    for prefix in _RECORD_MAPS:
        keys = sorted({key for record in records for key in getattr(record, prefix)})
        columns.extend(f"{prefix}.{key}" for key in keys)
    return columns


def _csv_cell(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, _FLOAT_FORMAT)
    return str(value)


def records_to_csv(records: list[TrialRecord]) -> str:
    columns = _csv_columns(records)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for record in records:
        row = []
        for column in columns:
            if "." in column:
                prefix, key = column.split(".", 1)
                value = getattr(record, prefix).get(key, "")
            else:
                value = getattr(record, column)
            row.append(_csv_cell(value))
        writer.writerow(row)
    return buffer.getvalue()


def records_from_csv(text: str) -> list[TrialRecord]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration as exc:
        raise ReportParseError("missing header row", line=1) from exc
    missing = [name for name in _RECORD_SCALARS if name not in header]
    if missing:
        raise ReportParseError("missing column", field=missing[0], line=1)
    records: list[TrialRecord] = []
    for line_number, row in enumerate(reader, start=2):
        if len(row) != len(header):
            raise ReportParseError("row length does not match header", line=line_number)
        data: dict[str, Any] = {prefix: {} for prefix in _RECORD_MAPS}
        for column, cell in zip(header, row):
            if "." in column:
                prefix, key = column.split(".", 1)
                if cell == "":
                    continue
                if prefix == "satisfied":
                    data[prefix][key] = cell == "true"
                else:
                    data[prefix][key] = _parse_csv_float(cell, column, line_number)
            elif column in {"trial_index", "n", "d"}:
                data[column] = int(cell)
            else:
                data[column] = _parse_csv_float(cell, column, line_number)
        records.append(TrialRecord.from_dict(data))
    return records


def _parse_csv_float(cell: str, column: str, line: int) -> float:
    try:
        return float(cell)
    except ValueError as exc:
        raise ReportParseError(f"not a number: {cell!r}", field=column, line=line) from exc


def read_report(path: Path) -> SuiteReport:
    try:
        text = path.read_text()
    except FileNotFoundError as exc:
        raise ReportParseError(f"report not found: {path}") from exc
    return SuiteReport.from_json(text)
