"""Human-readable report built from the metrics CSV alone."""

from __future__ import annotations

import csv
import io
import math
import operator
from collections import Counter
from dataclasses import dataclass

from iiotsim.scenario.schema import AssertSpec

_OPS = {"==": operator.eq, "!=": operator.ne, "<": operator.lt, "<=": operator.le,
        ">": operator.gt, ">=": operator.ge}


@dataclass(frozen=True)
class AssertionOutcome:
    spec: AssertSpec
    actual: str | None
    passed: bool

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        actual = "missing" if self.actual is None else self.actual
        return f"{verdict} {self.spec.label()} (actual {actual})"


def read_records(csv_text: str) -> dict[str, list[dict[str, str]]]:
    """Record type -> rows keyed by that type's header."""
    headers: dict[str, list[str]] = {}
    out: dict[str, list[dict[str, str]]] = {}
    for row in csv.reader(io.StringIO(csv_text)):
        if not row:
            continue
        if row[0].startswith("#"):
            headers[row[0][1:]] = row[1:]
            out.setdefault(row[0][1:], [])
            continue
        cols = headers.get(row[0])
        if cols is None:
            raise ValueError(f"row of type {row[0]!r} before its header")
        out[row[0]].append(dict(zip(cols, row[1:])))
    return out


def read_summary(csv_text: str) -> dict[str, str]:
    return {r["metric"]: r["value"] for r in read_records(csv_text).get("summary", [])}


def _number(text: str) -> float | None:
    try:
        v = float(text)
    except ValueError:
        return None
    return None if math.isnan(v) else v


def check(actual: str | None, op: str, expected: float | str) -> bool:
    if actual is None:
        return False
    a = _number(actual)
    e = expected if isinstance(expected, (int, float)) else _number(expected)
    if a is not None and e is not None:
        return _OPS[op](a, float(e))
    if op in ("==", "!="):
        return _OPS[op](actual, str(expected))
    return False


def evaluate_asserts(summary: dict[str, str], asserts: tuple[AssertSpec, ...]) -> list[AssertionOutcome]:
    out = []
    for a in asserts:
        actual = summary.get(a.metric)
        out.append(AssertionOutcome(a, actual, check(actual, a.op, a.value)))
    return out


def build_report(csv_text: str, outcomes: list[AssertionOutcome]) -> str:
    records = read_records(csv_text)
    summary = {r["metric"]: r["value"] for r in records.get("summary", [])}
    counts = Counter({k: len(v) for k, v in records.items() if k != "summary"})
    lines = [f"scenario {summary.get('scenario.name', '?')} "
             f"(seed {summary.get('scenario.seed', '?')}, "
             f"{summary.get('scenario.duration_s', '?')} s virtual)"]
    if counts:
        lines.append("records: " + ", ".join(f"{k}={counts[k]}" for k in sorted(counts)))
    lines.append("metrics:")
    width = max((len(k) for k in summary), default=0)
    for k, v in summary.items():
        if not k.startswith("scenario."):
            lines.append(f"  {k.ljust(width)}  {v}")
    if outcomes:
        lines.append("checks:")
        lines.extend(f"  {o.line()}" for o in outcomes)
    passed = sum(o.passed for o in outcomes)
    verdict = "PASS" if passed == len(outcomes) else "FAIL"
    lines.append(f"result: {verdict} ({passed}/{len(outcomes)} checks)")
    return "\n".join(lines) + "\n"
