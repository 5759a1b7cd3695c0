"""Experiment configuration: schema, loading, overrides and snapshots."""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml


class ConfigError(ValueError):
    pass


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e-9`` style floats (YAML 1.2 behaviour)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
                |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
                |[-+]?\.(?:inf|Inf|INF)
                |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."),
)


def parse_yaml(text: str):
    return yaml.load(text, Loader=_Loader)


@dataclass
class ExperimentConfig:
    """One scenario run.

    ``learner`` holds training settings (see :class:`cocoa_lab.training.TrainConfig`)
    and ``params`` scenario-specific knobs; both are validated against the
    scenario's declared keys by :func:`cocoa_lab.scenarios.validate`.
    """

    scenario: str
    env: str | None = None
    env_overrides: dict = field(default_factory=dict)
    estimators: list = field(default_factory=list)
    seeds: list = field(default_factory=lambda: [0])
    batch_size: int = 8
    num_batches: int | None = None
    sample_count: int = 512
    learner: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    out: str = "results"

    def __post_init__(self):
        if not isinstance(self.scenario, str) or not self.scenario:
            raise ConfigError("scenario must be a non-empty string")
        for name in ("env_overrides", "learner", "params"):
            if not isinstance(getattr(self, name), dict):
                raise ConfigError(f"{name} must be a mapping")
        if isinstance(self.seeds, int):
            self.seeds = [self.seeds]
        if not isinstance(self.seeds, list) or not all(isinstance(s, int) and s >= 0 for s in self.seeds):
            raise ConfigError("seeds must be a list of non-negative integers")
        if not isinstance(self.estimators, list) or not all(isinstance(e, str) for e in self.estimators):
            raise ConfigError("estimators must be a list of names")
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            raise ConfigError("batch_size must be a positive integer")
        if self.num_batches is not None and (not isinstance(self.num_batches, int) or self.num_batches < 0):
            raise ConfigError("num_batches must be a non-negative integer")
        if not isinstance(self.sample_count, int) or self.sample_count < 2:
            raise ConfigError("sample_count must be an integer >= 2")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        if "scenario" not in data:
            raise ConfigError("config needs a 'scenario'")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def snapshot(self) -> str:
        """Canonical JSON text; reconstructs the run together with the seeds it lists."""
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @property
    def experiment_id(self) -> str:
        """Stable id of everything that affects results (the output directory does not)."""
        data = {k: v for k, v in self.to_dict().items() if k != "out"}
        digest = hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()[:10]
        return f"{self.scenario}-{digest}"


def load_file(path) -> dict:
    """Parse a YAML or JSON mapping (JSON is valid YAML)."""
    text = Path(path).read_text()
    try:
        data = parse_yaml(text)
    except yaml.YAMLError as err:
        raise ConfigError(f"cannot parse {path}: {err}") from err
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a mapping")
    return data


def apply_override(data: dict, item: str) -> dict:
    """Apply ``dotted.key=value`` where ``value`` is parsed as YAML."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key=value")
    key, raw = item.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"override {item!r} has an empty key")
    try:
        value = parse_yaml(raw)
    except yaml.YAMLError as err:
        raise ConfigError(f"cannot parse override value {raw!r}") from err
    node = data
    for p in parts[:-1]:
        child = node.setdefault(p, {})
        if not isinstance(child, dict):
            raise ConfigError(f"override {item!r} descends into a non-mapping")
        node = child
    node[parts[-1]] = value
    return data


def build_config(scenario: str, path=None, overrides=(), seed: int | None = None, out: str | None = None,
                 defaults: dict | None = None) -> ExperimentConfig:
    """Merge scenario defaults, a config file, overrides and CLI flags, in that order."""
    data = json.loads(json.dumps(defaults or {}))
    if path is not None:
        loaded = load_file(path)
        if loaded.get("scenario", scenario) != scenario:
            raise ConfigError(f"config file is for scenario {loaded['scenario']!r}, not {scenario!r}")
        for k, v in loaded.items():
            if isinstance(v, dict) and isinstance(data.get(k), dict):
                data[k] = {**data[k], **v}
            else:
                data[k] = v
    for item in overrides:
        apply_override(data, item)
    data["scenario"] = scenario
    if seed is not None:
        data["seeds"] = [seed]
    if out is not None:
        data["out"] = out
    return ExperimentConfig.from_dict(data)
