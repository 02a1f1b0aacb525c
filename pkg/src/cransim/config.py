"""Experiment configuration and its YAML file format.

A config file has optional top-level sections ``scenario``, ``phy``,
``channel``, ``frame``, ``forest`` and ``experiment``; each section's keys are
the fields of the matching dataclass. Omitted keys keep their defaults and
unknown keys are rejected. See ``configs/default.yaml`` for every key.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from cransim.channel import ChannelModel, PathlossModel, ShadowConfig
from cransim.errors import ConfigError
from cransim.overhead import FrameConfig
from cransim.phy import PhyConfig
from cransim.scenario import ScenarioConfig

TABLE2_GRID = ((5, 3), (10, 3), (10, 4), (20, 3), (20, 4))


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 10
    max_depth: int = 3
    features_per_split: int | None = None
    grid: tuple[tuple[int, int], ...] = TABLE2_GRID


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    phy: PhyConfig = field(default_factory=PhyConfig)
    channel: ChannelModel = field(default_factory=ChannelModel)
    frame: FrameConfig = field(default_factory=FrameConfig)
    forest: ForestParams = field(default_factory=ForestParams)

    tx_grid_step: float = 3.0
    rx_grid_step: float = 12.0
    tx_coverage: tuple[float, float] = (-60.0, 60.0)
    rx_coverage: tuple[float, float] = (-60.0, 60.0)
    num_positions: int = 100
    seeds: tuple[int, ...] = tuple(range(10))
    noise_variances: tuple[float, ...] = (0.0, 0.4, 0.6, 1.0)
    density_sweep: tuple[float, ...] = (0.01, 0.03, 0.05, 0.1)
    shadow_sweep: tuple[float, ...] = (1.5, 2.5, 3.5, 5.0)
    test_offset_ttis: int = 1
    max_training_rows: int = 10_000
    exact_search_limit: int = 200_000
    backoff_mode: str = "uniform"
    output_dir: str = "results"

    def validate(self) -> "ExperimentConfig":
        self.scenario.validate()
        if not self.seeds:
            raise ConfigError("need at least one seed", "experiment.seeds")
        for key in ("noise_variances", "density_sweep", "shadow_sweep"):
            values = getattr(self, key)
            if not values:
                raise ConfigError("sweep values must be non-empty", f"experiment.{key}")
            if any(v < 0 for v in values):
                raise ConfigError("values must be >= 0", f"experiment.{key}")
        if any(d > 1 for d in self.density_sweep):
            raise ConfigError("densities must be <= 1 per m^2", "experiment.density_sweep")
        if not 1 <= self.num_positions <= self.scenario.candidate_positions:
            raise ConfigError("must be in [1, scenario.candidate_positions]", "experiment.num_positions")
        if self.test_offset_ttis < 0:
            raise ConfigError("must be >= 0", "experiment.test_offset_ttis")
        if self.backoff_mode not in ("uniform", "adjacent"):
            raise ConfigError("must be 'uniform' or 'adjacent'", "experiment.backoff_mode")
        if self.forest.n_trees < 1:
            raise ConfigError("must be >= 1", "forest.n_trees")
        if self.forest.max_depth < 1:
            raise ConfigError("must be >= 1", "forest.max_depth")
        return self


def _coerce(value, default):
    if isinstance(default, tuple) and isinstance(value, list):
        if default and isinstance(default[0], tuple):
            return tuple(tuple(v) for v in value)
        return tuple(value)
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def _section(cls, data, prefix, base=None):
    if data is None:
        return base if base is not None else cls()
    if not isinstance(data, dict):
        raise ConfigError("expected a mapping", prefix)
    base = base if base is not None else cls()
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in names:
            raise ConfigError("unknown key", f"{prefix}.{key}")
        kwargs[key] = _coerce(value, getattr(base, key))
    try:
        return dataclasses.replace(base, **kwargs)
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], f"{prefix}.{exc.key}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), prefix) from None


def from_dict(doc: dict | None) -> ExperimentConfig:
    doc = dict(doc or {})
    sections = {"scenario", "phy", "channel", "frame", "forest", "experiment"}
    for key in doc:
        if key not in sections:
            raise ConfigError("unknown section", key)
    channel_doc = dict(doc.get("channel") or {})
    pathloss = _section(PathlossModel, channel_doc.pop("pathloss", None), "channel.pathloss")
    shadow = _section(ShadowConfig, channel_doc.pop("shadow", None), "channel.shadow")
    channel = _section(ChannelModel, channel_doc, "channel",
                       ChannelModel(pathloss=pathloss, shadow=shadow))
    cfg = ExperimentConfig(
        scenario=_section(ScenarioConfig, doc.get("scenario"), "scenario"),
        phy=_section(PhyConfig, doc.get("phy"), "phy"),
        channel=channel,
        frame=_section(FrameConfig, doc.get("frame"), "frame"),
        forest=_section(ForestParams, doc.get("forest"), "forest"),
    )
    cfg = _section(ExperimentConfig, doc.get("experiment"), "experiment", cfg)
    try:
        return cfg.validate()
    except ConfigError as exc:
        if exc.key and "." not in exc.key:
            raise ConfigError(str(exc).split(": ", 1)[-1], f"scenario.{exc.key}") from None
        raise


def load_config(path) -> ExperimentConfig:
    """Read a YAML config file; the literal ``"default"`` returns the built-in defaults."""
    if str(path) == "default":
        return ExperimentConfig().validate()
    text = Path(path).read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse YAML: {exc}", str(path)) from None
    return from_dict(doc)


def to_dict(cfg: ExperimentConfig) -> dict:
    def plain(obj):
        if dataclasses.is_dataclass(obj):
            return {f.name: plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        if isinstance(obj, tuple):
            return [plain(v) for v in obj]
        return obj

    d = plain(cfg)
    experiment = {k: d.pop(k) for k in list(d) if k not in ("scenario", "phy", "channel", "frame", "forest")}
    d["experiment"] = experiment
    return d
