"""Scenario files and the ``iiotsim`` command line that runs them."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from iiotsim.scenario.runner import RECORD_COLUMNS, RunResult, run_scenario
from iiotsim.scenario.schema import (
    ParseError,
    Scenario,
    ScenarioError,
    ValidationError,
    build_scenario,
    load_scenario,
    validate_scenario,
)

SUFFIX = ".scn"


def _builtin_dir() -> Path:
    return Path(str(resources.files("iiotsim") / "scenarios"))


def list_scenarios() -> list[str]:
    """Names of the scenarios shipped with the package."""
    return sorted(p.stem for p in _builtin_dir().glob(f"*{SUFFIX}"))


def resolve(name_or_path: str | Path) -> Path:
    """A file path as given, or the built-in scenario of that name."""
    p = Path(name_or_path)
    if p.exists():
        return p
    stem = p.name[: -len(SUFFIX)] if p.name.endswith(SUFFIX) else p.name
    builtin = _builtin_dir() / f"{stem}{SUFFIX}"
    if builtin.exists():
        return builtin
    raise ParseError(f"no such scenario file or built-in: {name_or_path}")


def run_file(name_or_path: str | Path, overrides: list[str] | None = None) -> RunResult:
    return run_scenario(load_scenario(resolve(name_or_path), overrides))


__all__ = [
    "RECORD_COLUMNS",
    "ParseError",
    "RunResult",
    "Scenario",
    "ScenarioError",
    "ValidationError",
    "build_scenario",
    "list_scenarios",
    "load_scenario",
    "resolve",
    "run_file",
    "run_scenario",
    "validate_scenario",
]
