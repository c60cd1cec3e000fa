"""Flat key=value run configuration.

One schema drives everything: config-file parsing, CLI flag generation,
default documentation, and the resolved snapshot written next to every run.
Unknown keys are rejected; command-line flags override file values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Optional

from .training import TrainConfig


class ConfigError(ValueError):
    pass


def _parse_bool(text: str) -> bool:
    lowered = str(text).strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


@dataclass(frozen=True)
class Field:
    default: object
    parse: Callable
    help: str


SCHEMA: Dict[str, Field] = {
    # data
    "dataset": Field("", str, "path to the interaction log"),
    "delimiter": Field("tab", str, "field delimiter in the log: tab or comma"),
    "min_count": Field(5, int, "core filter: minimum interactions per user and item"),
    "outdir": Field("", str, "output directory for run artifacts"),
    # model
    "dim": Field(64, int, "embedding width"),
    "max_len": Field(50, int, "maximum sequence length (left-padded)"),
    "heads": Field(2, int, "attention heads"),
    "encoder_layers": Field(2, int, "Transformer layers"),
    "dropout": Field(0.2, float, "dropout rate"),
    "gcn_layers": Field(2, int, "graph propagation layers"),
    "alpha": Field(0.05, float, "strength of the learned graph refinement"),
    "rank": Field(32, int, "rank of the refinement factors"),
    "window": Field(2, int, "co-occurrence window for graph construction"),
    "degree_mode": Field("weighted", str, "graph degree definition: weighted or count"),
    "literal_layer_avg": Field(True, _parse_bool,
                               "divide the layer sum by L (true) or L+1 (false)"),
    # training
    "batch_size": Field(256, int, "training batch size"),
    "lr": Field(1e-3, float, "Adam learning rate"),
    "beta1": Field(0.9, float, "Adam first-moment decay"),
    "beta2": Field(0.999, float, "Adam second-moment decay"),
    "eps": Field(1e-8, float, "Adam epsilon"),
    "lambda1": Field(0.1, float, "weight of the graph contrastive loss"),
    "lambda2": Field(0.1, float, "weight of the sequence contrastive loss"),
    "tau": Field(0.2, float, "contrastive temperature"),
    "max_epochs": Field(1000, int, "maximum training epochs"),
    "patience": Field(40, int, "early stopping patience (validation NDCG@20)"),
    "seed": Field(0, int, "random seed"),
    "crop_ratio": Field(0.6, float, "crop augmentation keep ratio"),
    "mask_ratio": Field(0.3, float, "mask augmentation ratio"),
    "reorder_ratio": Field(0.6, float, "reorder augmentation span ratio"),
    "gce_batch_mode": Field("targets", str,
                            "rows coupled by the graph loss: targets or unique"),
    "exclude_history": Field(True, _parse_bool, "exclude seen items when ranking"),
    # toggles
    "enable_agcl": Field(True, _parse_bool, "enable the adaptive collaborative learner"),
    "enable_pge": Field(True, _parse_bool, "enable the personalized graph encoding"),
    "pge_graph": Field("refined", str, "graph read by subgraph extraction: original or refined"),
    "fusion_ablation": Field(False, _parse_bool,
                             "replace the graph encoding with representation-level fusion"),
    # reporting
    "spectrum": Field(False, _parse_bool, "write the embedding spectrum CSV after training"),
}

TRAIN_CONFIG_KEYS = {
    "dim", "max_len", "batch_size", "lr", "beta1", "beta2", "eps", "gcn_layers",
    "alpha", "rank", "heads", "encoder_layers", "dropout", "lambda1", "lambda2",
    "tau", "max_epochs", "patience", "seed", "window", "degree_mode", "crop_ratio",
    "mask_ratio", "reorder_ratio", "gce_batch_mode", "exclude_history",
    "enable_agcl", "enable_pge", "pge_graph", "literal_layer_avg", "fusion_ablation",
}


def defaults() -> Dict[str, object]:
    return {key: f.default for key, f in SCHEMA.items()}


def parse_config_file(path) -> Dict[str, object]:
    """Read 'key = value' lines; '#' starts a comment; unknown keys fail."""
    out: Dict[str, object] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in SCHEMA:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                out[key] = SCHEMA[key].parse(value)
            except (ValueError, ConfigError) as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return out


def resolve(file_path: Optional[str], overrides: Dict[str, object]) -> Dict[str, object]:
    """defaults < config file < explicit overrides."""
    resolved = defaults()
    if file_path:
        resolved.update(parse_config_file(file_path))
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in SCHEMA:
            raise ConfigError(f"unknown configuration key {key!r}")
        resolved[key] = SCHEMA[key].parse(value) if isinstance(value, str) else value
    return resolved


def format_resolved(resolved: Dict[str, object]) -> str:
    lines = []
    for key in SCHEMA:
        value = resolved[key]
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def write_resolved(path, resolved: Dict[str, object]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_resolved(resolved))


def to_train_config(resolved: Dict[str, object]) -> TrainConfig:
    kwargs = {key: resolved[key] for key in TRAIN_CONFIG_KEYS}
    cfg = TrainConfig(**kwargs)
    cfg.validate()
    return cfg


def delimiter_char(resolved: Dict[str, object]) -> str:
    name = str(resolved["delimiter"])
    if name == "tab":
        return "\t"
    if name == "comma":
        return ","
    raise ConfigError(f"delimiter must be 'tab' or 'comma', got {name!r}")
