"""Experiment configuration files (YAML, schema ``magrisk/1``).

Example::

    schema: magrisk/1
    stage: Simulation            # Simulation | Sandbox | Pilot | Deployment
    scenario: {name: fraud-monoculture}   # or {inline: {...}} or {file: spec.yaml}
    ensemble: {runs: 100, seed_base: 0, jobs: 1}
    injections: []               # optional; replaces the scenario's perturbations
    metrics: [entropy, similarity]
    judge: {kind: RuleBased}     # or {kind: ExternalAdapter, cache: judge-cache.json}
    output: out/
    traces: []                   # Pilot/Deployment: recorded traces to ingest

External judge endpoints and keys are read from the environment only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

import yaml

from magrisk.core.events import content_hash
from magrisk.core.scenario import HORIZON_BELOW_ROUNDS, PerturbationSpec, ScenarioSpec, validate

SCHEMA = "magrisk/1"
SECRET_KEYS = {"endpoint", "key", "api_key", "token", "secret", "password"}


class Stage(str, Enum):
    SIMULATION = "Simulation"
    SANDBOX = "Sandbox"
    PILOT = "Pilot"
    DEPLOYMENT = "Deployment"

    @property
    def executes(self) -> bool:
        """Only the first two stages are run by the engine; later ones ingest traces."""
        return self in (Stage.SIMULATION, Stage.SANDBOX)


class ConfigParseError(ValueError):
    def __init__(self, message: str, path: str = "", line: int | None = None, column: int | None = None):
        self.line, self.column, self.path = line, column, path
        where = path
        if line is not None:
            where += f":{line}:{column}"
        super().__init__(f"{where}: {message}" if where else message)


class ConfigInvalid(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


@dataclass
class ExperimentConfig:
    spec: ScenarioSpec
    stage: Stage = Stage.SIMULATION
    runs: int = 100
    seed_base: int = 0
    jobs: int = 1
    metrics: list[str] = field(default_factory=list)
    judge: dict = field(default_factory=lambda: {"kind": "RuleBased"})
    output: str = "out"
    traces: list[str] = field(default_factory=list)
    scenario_name: str | None = None
    raw: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path)

    @property
    def digest(self) -> str:
        """Hash of the parsed config with the scenario fully resolved."""
        body = {k: v for k, v in self.raw.items() if k not in ("scenario", "output", "injections")}
        body["ensemble"] = {"runs": self.runs, "seed_base": self.seed_base}  # jobs never changes results
        body["stage"] = self.stage.value
        body["scenario"] = self.spec.to_dict()
        return content_hash(body)

    def with_overrides(self, runs=None, seed_base=None, jobs=None, output=None) -> ExperimentConfig:
        raw = dict(self.raw)
        ens = dict(raw.get("ensemble", {}))
        for key, value in (("runs", runs), ("seed_base", seed_base), ("jobs", jobs)):
            if value is not None:
                ens[key] = value
        raw["ensemble"] = ens
        if output is not None:
            raw["output"] = str(output)
        return from_dict(raw, self.base_dir)


def _spec_from(ref: Any, base_dir: Path) -> tuple[ScenarioSpec, str | None]:
    from magrisk.scenarios import UnknownScenario, load_scenario

    if not isinstance(ref, dict) or len(ref) != 1:
        raise ConfigInvalid(["scenario: give exactly one of name, inline or file"])
    (how, value), = ref.items()
    if how == "name":
        try:
            return load_scenario(value).spec, value
        except UnknownScenario as exc:
            raise ConfigInvalid([f"scenario.name: {exc.args[0]}"]) from None
    if how == "inline":
        data = value
    elif how == "file":
        path = base_dir / value
        data = _load_yaml(path)
        data = data.get("scenario", {}).get("inline", data) if isinstance(data, dict) else data
    else:
        raise ConfigInvalid([f"scenario: unknown reference kind {how!r}"])
    try:
        return ScenarioSpec.from_dict(data), None
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ConfigInvalid([f"scenario: cannot build spec: {exc!r}"]) from None


def _find_secrets(obj: Any, path: str) -> list[str]:
    out = []
    if isinstance(obj, dict):
        for k, v in obj.items():
            if str(k).lower() in SECRET_KEYS:
                out.append(f"{path}.{k}: secrets come from MAGRISK_JUDGE_* environment variables, not config")
            out.extend(_find_secrets(v, f"{path}.{k}"))
    return out


def from_dict(raw: dict, base_dir: Path | str = ".") -> ExperimentConfig:
    base_dir = Path(base_dir)
    if not isinstance(raw, dict):
        raise ConfigInvalid(["config must be a mapping"])
    problems = []
    if raw.get("schema") != SCHEMA:
        problems.append(f"schema: expected {SCHEMA!r}, got {raw.get('schema')!r}")
    known = {"schema", "stage", "scenario", "ensemble", "injections", "metrics", "judge", "output", "traces"}
    problems += [f"{k}: unknown field" for k in raw if k not in known]
    problems += _find_secrets(raw.get("judge", {}), "judge")
    try:
        stage = Stage(raw.get("stage", "Simulation"))
    except ValueError:
        problems.append(f"stage: {raw.get('stage')!r} is not one of {[s.value for s in Stage]}")
        stage = Stage.SIMULATION
    ens = raw.get("ensemble", {}) or {}
    runs, seed_base, jobs = ens.get("runs", 100), ens.get("seed_base", 0), ens.get("jobs", 1)
    for name, v, lo in (("runs", runs, 1), ("seed_base", seed_base, 0), ("jobs", jobs, 1)):
        if not isinstance(v, int) or isinstance(v, bool) or v < lo:
            problems.append(f"ensemble.{name}: must be an integer >= {lo}")
    traces = list(raw.get("traces", []) or [])
    if not stage.executes and not traces:
        problems.append(f"stage {stage.value}: the engine does not execute this stage; list recorded traces to ingest")
    if "scenario" not in raw:
        problems.append("scenario: required")
    if problems:
        raise ConfigInvalid(problems)

    spec, name = _spec_from(raw["scenario"], base_dir)
    if "injections" in raw:
        try:
            spec = spec.with_injections(PerturbationSpec.from_dict(i) for i in raw["injections"] or [])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigInvalid([f"injections: {exc!r}"]) from None
    violations = [v for v in validate(spec) if v.code != HORIZON_BELOW_ROUNDS]
    if violations:
        raise ConfigInvalid([f"scenario.{v}" for v in violations])
    judge = dict(raw.get("judge") or {"kind": "RuleBased"})
    return ExperimentConfig(
        spec=spec,
        stage=stage,
        runs=runs,
        seed_base=seed_base,
        jobs=jobs,
        metrics=list(raw.get("metrics", []) or []),
        judge=judge,
        output=str(raw.get("output", "out")),
        traces=[str(base_dir / t) for t in traces],
        scenario_name=name,
        raw=raw,
        base_dir=base_dir,
    )


def _load_yaml(path: Path) -> Any:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigParseError(f"cannot read config: {exc.strerror}", str(path)) from None
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        problem = getattr(exc, "problem", None) or str(exc)
        if mark is not None:
            raise ConfigParseError(problem, str(path), mark.line + 1, mark.column + 1) from None
        raise ConfigParseError(problem, str(path)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    raw = _load_yaml(path)
    return from_dict(raw, path.parent)
