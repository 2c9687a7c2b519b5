"""Run configuration: an INI file with one section per module.

Every key maps onto a dataclass field; unknown keys, unparsable values and
failed constraints are all collected and reported together.

    [run]
    source = synth            ; synth | kitti-raw | kitti-odom
    out = runs/out
    seed = 0

    [stack]
    n_layers = 1
    height = 32
    width = 64

    [train]
    iterations = 150

    [loss]
    lambda_l = 1.0, 0.1

    [synth]
    motion = 0.05 0 0.02 0 0 0; 0.15 0 0.05 0 0 0
"""

from __future__ import annotations

import configparser
import dataclasses
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .data.synth import SynthSceneSpec
from .losses import LossWeights
from .network import StackConfig
from .trainer import TrainConfig

SOURCES = ("synth", "kitti-raw", "kitti-odom")
DATA_ROOT_ENV = "SGANVO_DATA_ROOT"


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class RunSettings:
    source: str = "synth"
    data_root: Optional[str] = None  # falls back to $SGANVO_DATA_ROOT
    split: Optional[str] = None  # Eigen-style split file for kitti-raw
    sequences: tuple = ()  # kitti-odom ids
    eval_sequences: tuple = ()
    synth_dir: Optional[str] = None  # a saved synthetic scene; overrides [synth]
    out: str = "runs/out"
    seed: int = 0
    paper_literal_signs: bool = False
    median_scaling: bool = True
    depth_cap: float = 80.0
    snippets: tuple = (3, 5)
    dump_outputs: bool = False

    def validate(self) -> list:
        errors = []
        if self.source not in SOURCES:
            errors.append(f"source must be one of {', '.join(SOURCES)}, got {self.source!r}")
        if self.source == "kitti-odom" and not self.sequences:
            errors.append("sequences must list at least one id for kitti-odom")
        if not self.depth_cap > 0:
            errors.append(f"depth_cap must be > 0, got {self.depth_cap}")
        if any(int(n) < 2 for n in self.snippets):
            errors.append(f"snippets must be >= 2 frames, got {self.snippets}")
        return errors

    def resolved_data_root(self) -> Optional[str]:
        return self.data_root or os.environ.get(DATA_ROOT_ENV)


@dataclass
class RunConfig:
    run: RunSettings = field(default_factory=RunSettings)
    stack: StackConfig = field(default_factory=StackConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    synth: SynthSceneSpec = field(default_factory=SynthSceneSpec)

    SECTIONS = ("run", "stack", "train", "loss", "synth")

    def validate(self) -> list:
        errors = []
        for name in self.SECTIONS:
            errors.extend(f"[{name}] {e}" for e in _section_errors(name, getattr(self, name)))
        if self.train.window != self.stack.window:
            errors.append(f"[train] window ({self.train.window}) must equal [stack] window ({self.stack.window})")
        if self.run.source == "synth" and self.run.synth_dir is None:
            if (self.synth.width, self.synth.height) != (self.stack.width, self.stack.height):
                errors.append(f"[synth] size {self.synth.width}x{self.synth.height} must match "
                              f"[stack] size {self.stack.width}x{self.stack.height}")
            if self.synth.n_frames < self.stack.window:
                errors.append(f"[synth] n_frames ({self.synth.n_frames}) must be >= window ({self.stack.window})")
        return errors

    def with_overrides(self, seed: Optional[int] = None, out: Optional[str] = None,
                       paper_literal_signs: Optional[bool] = None) -> "RunConfig":
        cfg = dataclasses.replace(self, run=dataclasses.replace(self.run), train=dataclasses.replace(self.train))
        if seed is not None:
            cfg.run.seed = seed
            cfg.train.seed = seed
        if out is not None:
            cfg.run.out = out
        if paper_literal_signs:
            cfg.run.paper_literal_signs = True
        cfg.train.paper_literal_signs = cfg.run.paper_literal_signs
        return cfg


def _section_errors(name: str, obj) -> list:
    if name == "synth":
        errs = []
        if obj.width <= 0 or obj.height <= 0:
            errs.append(f"image size must be positive, got {obj.width}x{obj.height}")
        if obj.n_frames < 1:
            errs.append(f"n_frames must be >= 1, got {obj.n_frames}")
        if not obj.plane_depth > 0:
            errs.append(f"plane_depth must be > 0, got {obj.plane_depth}")
        if not obj.baseline > 0:
            errs.append(f"baseline must be > 0, got {obj.baseline}")
        try:
            bad = [m for m in obj.motion if len(m) != 6]
        except TypeError:
            bad = [obj.motion]
        if bad:
            errs.append(f"motion entries need 6 values each, got {bad}")
        return errs
    return obj.validate()


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_value(text: str, hint, default):
    text = text.strip()
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union and type(None) in args:
        if text.lower() in ("", "none"):
            return None
        inner = next(a for a in args if a is not type(None))
        return _parse_value(text, inner, default)
    if hint is bool:
        return _parse_bool(text)
    if hint is int:
        return int(text)
    if hint is float:
        return float(text)
    if hint is str:
        return text
    if hint in (tuple, list) or origin in (tuple, list):
        if not text:
            return ()
        sample = default[0] if default else None
        items = [t.strip() for t in text.split(",") if t.strip()]
        if isinstance(sample, int) and not isinstance(sample, bool):
            return tuple(int(t) for t in items)
        if isinstance(sample, str):
            return tuple(items)
        try:
            return tuple(float(t) if any(c in t for c in ".eE") else int(t) for t in items)
        except ValueError:
            return tuple(items)
    raise ValueError(f"unsupported field type {hint!r}")


def _parse_motion(text: str) -> list:
    rows = [r for r in text.split(";") if r.strip()]
    return [[float(v) for v in r.replace(",", " ").split()] for r in rows]


def _hints(cls) -> dict:
    return typing.get_type_hints(cls)


def _build(cls, items: dict, section: str, errors: list):
    hints = _hints(cls)
    names = {f.name: f for f in dataclasses.fields(cls)}
    defaults = cls()
    kwargs = {}
    for key, text in items.items():
        if key not in names:
            errors.append(f"[{section}] unknown key {key!r} (allowed: {', '.join(sorted(names))})")
            continue
        try:
            if cls is SynthSceneSpec and key == "motion":
                kwargs[key] = _parse_motion(text)
            else:
                kwargs[key] = _parse_value(text, hints[key], getattr(defaults, key))
        except (ValueError, TypeError) as exc:
            errors.append(f"[{section}] {key} = {text!r}: {exc}")
    return cls(**kwargs)


_CLASSES = {"run": RunSettings, "stack": StackConfig, "train": TrainConfig, "loss": LossWeights,
            "synth": SynthSceneSpec}


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    parser.optionxform = str  # keys are field names, e.g. lambda_D
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError([f"{source}: {exc}"]) from exc
    errors = []
    for sec in parser.sections():
        if sec not in _CLASSES:
            errors.append(f"unknown section [{sec}] (allowed: {', '.join(RunConfig.SECTIONS)})")
    parts = {name: _build(cls, dict(parser[name]) if parser.has_section(name) else {}, name, errors)
             for name, cls in _CLASSES.items()}
    cfg = RunConfig(**parts)
    # the run seed drives training unless [train] sets its own
    if not (parser.has_section("train") and parser.has_option("train", "seed")):
        cfg.train.seed = cfg.run.seed
    if not (parser.has_section("train") and parser.has_option("train", "window")):
        cfg.train.window = cfg.stack.window
    if not (parser.has_section("train") and parser.has_option("train", "paper_literal_signs")):
        cfg.train.paper_literal_signs = cfg.run.paper_literal_signs
    errors.extend(cfg.validate())
    if errors:
        raise ConfigError(errors)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"config file not found: {path}"])
    return parse_config(path.read_text(), str(path))


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        if value and isinstance(value[0], (list, tuple)):
            return "; ".join(" ".join(repr(float(v)) for v in row) for row in value)
        return ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(cfg: RunConfig) -> str:
    """Every field with its effective value; parsing the result reproduces ``cfg``."""
    lines = []
    for name in RunConfig.SECTIONS:
        obj = getattr(cfg, name)
        lines.append(f"[{name}]")
        for f in dataclasses.fields(obj):
            lines.append(f"{f.name} = {_format(getattr(obj, f.name))}")
        lines.append("")
    return "\n".join(lines)


def write_resolved(cfg: RunConfig, out_dir) -> Path:
    path = Path(out_dir) / "config.resolved"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_config(cfg))
    return path
