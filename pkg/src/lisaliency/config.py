"""Run configuration: one human-readable key=value file for all module knobs.

Unknown keys are rejected.  Every artifact-emitting command writes a sidecar
``<artifact>.meta`` in the same format, recording the fully resolved
configuration, the weight-file checksum, the seed, and the tool version,
which is enough to reproduce the run bit-exactly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError
from .inhibition import LIParams
from .network import NetworkSpec, TAP_AFTER, TAP_BEFORE
from .preprocess import PreprocessConfig

CONFIG_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class RunConfig:
    li_a: float = 0.1
    li_b: float = 0.9
    li_k: int = 7
    li_source: str = "gradient"
    tap: str = TAP_AFTER
    spatial_layers_only: bool = True
    blur_radii: tuple[float, ...] = (2.0, 5.0, 10.0)
    mask_threshold: float = 0.1
    seed: int = 42
    sanity_seeds: int = 10
    input_mean: tuple[float, float, float] = (0.5, 0.5, 0.5)
    input_std: tuple[float, float, float] = (0.25, 0.25, 0.25)
    resize_shorter: int = 64
    train_lr: float = 0.02
    train_epochs: int = 10
    train_batch: int = 32
    spec: str = ""
    weights: str = ""
    dataset: str = ""
    image: str = ""
    out: str = ""

    def li_params(self) -> LIParams:
        return LIParams(self.li_a, self.li_b, self.li_k)

    def preprocess_config(self, spec: NetworkSpec) -> PreprocessConfig:
        return PreprocessConfig((spec.input_shape[1], spec.input_shape[2]),
                                self.input_mean, self.input_std,
                                self.resize_shorter)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _parse_value(name: str, raw: str, like):
    try:
        if isinstance(like, bool):
            lowered = raw.lower()
            if lowered in ("true", "on", "1", "yes"):
                return True
            if lowered in ("false", "off", "0", "no"):
                return False
            raise ValueError(raw)
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        if isinstance(like, tuple):
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            return tuple(float(p) for p in parts)
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key {name}: cannot parse {raw!r}") from exc


def parse_run_config(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    known = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        updates[key] = _parse_value(key, value, known[key])
    cfg = replace(cfg, **updates)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg.tap not in (TAP_AFTER, TAP_BEFORE):
        raise ConfigError(f"tap must be {TAP_AFTER} or {TAP_BEFORE}, got {cfg.tap!r}")
    if cfg.li_source not in ("gradient", "activation"):
        raise ConfigError(f"li_source must be gradient or activation, got {cfg.li_source!r}")
    if len(cfg.input_mean) != 3 or len(cfg.input_std) != 3:
        raise ConfigError("input_mean and input_std need three components")
    cfg.li_params()


def load_run_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_run_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def format_config(values: dict) -> str:
    lines = []
    for key, value in values.items():
        if isinstance(value, (tuple, list)):
            value = ",".join(f"{v:g}" if isinstance(v, float) else str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_sidecar(artifact_path, cfg: RunConfig, *, seed: int,
                  weights_path=None, extra: dict | None = None) -> Path:
    """Record everything needed to reproduce the artifact next to it."""
    from . import __version__

    meta = {
        "tool_version": __version__,
        "config_schema": CONFIG_SCHEMA_VERSION,
    }
    meta.update(cfg.to_dict())
    if extra:
        meta.update(extra)
    # The seed actually used wins over whatever the config carried.
    meta["seed"] = seed
    if weights_path:
        meta["weights_sha256"] = file_sha256(weights_path)
    sidecar = Path(str(artifact_path) + ".meta")
    sidecar.write_text(format_config(meta), encoding="utf-8")
    return sidecar
