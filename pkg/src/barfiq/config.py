"""Experiment configuration document: JSON sections plus dotted overrides.

The document has five sections (generator, model, fusion, qfm, train) whose
keys mirror the corresponding dataclass fields. The fusion section accepts a
``variant`` key (ca_sa | sa | ca | none) instead of the two boolean flags.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .dataio import GeneratorConfig
from .errors import ConfigError, DataError
from .fusion import FusionConfig, VARIANTS
from .model import ModelConfig
from .qfm import QfmConfig
from .training import TrainConfig


@dataclass
class ExperimentConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    qfm: QfmConfig = field(default_factory=QfmConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> None:
        self.generator.validate()
        self.model.validate()
        self.fusion.validate()
        self.qfm.validate()
        self.train.validate()
        if self.train.fusion_variant != self.fusion.variant:
            raise ConfigError("train.fusion_variant disagrees with the fusion flags")

    def set_variant(self, variant: str) -> None:
        if variant not in VARIANTS:
            raise ConfigError(f"unknown fusion variant: {variant!r}")
        ca, sa = VARIANTS[variant]
        self.fusion.use_channel_attention = ca
        self.fusion.use_spatial_attention = sa
        self.train.fusion_variant = variant

    def to_dict(self) -> dict:
        doc = {
            "generator": dataclasses.asdict(self.generator),
            "model": dataclasses.asdict(self.model),
            "fusion": dataclasses.asdict(self.fusion),
            "qfm": dataclasses.asdict(self.qfm),
            "train": dataclasses.asdict(self.train),
        }
        fusion = doc["fusion"]
        fusion.pop("use_channel_attention")
        fusion.pop("use_spatial_attention")
        fusion["variant"] = self.fusion.variant
        fusion["kernel_sizes"] = list(self.fusion.kernel_sizes)
        return doc


_SECTION_TYPES = {
    "generator": GeneratorConfig,
    "model": ModelConfig,
    "qfm": QfmConfig,
    "train": TrainConfig,
}


def config_from_dict(doc: dict) -> ExperimentConfig:
    cfg = ExperimentConfig()
    unknown = set(doc) - (set(_SECTION_TYPES) | {"fusion"})
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    for section, cls in _SECTION_TYPES.items():
        payload = dict(doc.get(section, {}))
        valid = {f.name for f in dataclasses.fields(cls)}
        bad = set(payload) - valid
        if bad:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(bad)}")
        setattr(cfg, section, cls(**payload))
    fusion_payload = dict(doc.get("fusion", {}))
    variant = fusion_payload.pop("variant", None)
    valid = {f.name for f in dataclasses.fields(FusionConfig)} - {
        "use_channel_attention",
        "use_spatial_attention",
    }
    bad = set(fusion_payload) - valid
    if bad:
        raise ConfigError(f"unknown keys in [fusion]: {sorted(bad)}")
    if "kernel_sizes" in fusion_payload:
        fusion_payload["kernel_sizes"] = tuple(fusion_payload["kernel_sizes"])
    cfg.fusion = FusionConfig(**fusion_payload)
    cfg.set_variant(variant if variant is not None else cfg.train.fusion_variant)
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot open config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed config JSON: {exc}") from exc
    return config_from_dict(doc)


def save_config(path, cfg: ExperimentConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply dotted key=value pairs (e.g. model.d_model=64) on top of ``cfg``."""
    doc = cfg.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        if len(parts) != 2:
            raise ConfigError(f"override key must be section.key: {key!r}")
        section, name = parts
        if section not in doc:
            raise ConfigError(f"unknown config section: {section!r}")
        if name not in doc[section]:
            raise ConfigError(f"unknown key {name!r} in section {section!r}")
        doc[section][name] = _parse_value(raw.strip())
    return config_from_dict(doc)
