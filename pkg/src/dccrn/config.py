"""Run configuration: flat ``dotted.key = value`` text files.

Blank lines and ``#`` comments are ignored. Unknown keys, malformed values
and out-of-range settings are rejected with the offending key in the
message. Relative paths resolve against the config file's directory.

Recognised keys (defaults in brackets)::

    model.preset            tiny | default                 [tiny]
    model.variant           R | C | E | CL                 [E]
    model.encoder_channels  comma list, re+im channels     [preset]
    model.kernel            kF,kT                          [5,2]
    model.stride            sF,sT                          [2,1]
    model.lstm_layers       int                            [preset]
    model.lstm_units        int                            [preset]
    model.dense_units       int                            [preset]
    model.lookahead_frames  int                            [preset]
    optim.lr                float > 0                      [0.001]
    optim.beta1, optim.beta2, optim.eps                    [0.9, 0.999, 1e-8]
    optim.lr_decay          factor on val-loss increase    [0.5]
    optim.patience          epochs without improvement     [5]
    optim.grad_clip         global norm, 0 disables        [5.0]
    train.epochs            int                            [3]
    train.batch_size        int                            [8]
    train.segment           samples per training clip      [8000]
    train.seed              int                            [0]
    train.time_budget       seconds, 0 = unlimited         [0]
    data.source             synthetic | manifest           [synthetic]
    data.train_manifest     directory (manifest source)
    data.val_manifest       directory (manifest source)
    data.train_clips        clips per epoch                [200]
    data.val_clips          validation clips               [40]
    data.val_segment        samples per validation clip    [16000]
    data.reverb             true | false                   [true]
    data.noise_rir          independent | same | none      [independent]
    output.dir              checkpoint / log directory     [runs]
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .model import VARIANTS, ModelConfig


class ConfigError(ValueError):
    pass


@dataclass
class OptimConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_decay: float = 0.5
    patience: int = 5
    grad_clip: float = 5.0


@dataclass
class TrainConfig:
    epochs: int = 3
    batch_size: int = 8
    segment: int = 8000
    seed: int = 0
    time_budget: float = 0.0


@dataclass
class DataConfig:
    source: str = "synthetic"
    train_manifest: Path | None = None
    val_manifest: Path | None = None
    train_clips: int = 200
    val_clips: int = 40
    val_segment: int = 16000
    reverb: bool = True
    noise_rir: str = "independent"


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig.tiny)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    output_dir: Path = Path("runs")

    def validate(self) -> None:
        o, t, d = self.optim, self.train, self.data
        checks = [
            (o.lr > 0, "optim.lr", "must be > 0"),
            (0 <= o.beta1 < 1 and 0 <= o.beta2 < 1, "optim.beta1/beta2", "must lie in [0, 1)"),
            (o.eps > 0, "optim.eps", "must be > 0"),
            (0 < o.lr_decay <= 1, "optim.lr_decay", "must lie in (0, 1]"),
            (o.patience >= 1, "optim.patience", "must be >= 1"),
            (o.grad_clip >= 0, "optim.grad_clip", "must be >= 0"),
            (t.epochs >= 1, "train.epochs", "must be >= 1"),
            (t.batch_size >= 1, "train.batch_size", "must be >= 1"),
            (t.segment >= self.model.stft.win_len, "train.segment",
             f"must be at least one window ({self.model.stft.win_len} samples)"),
            (t.time_budget >= 0, "train.time_budget", "must be >= 0"),
            (d.source in ("synthetic", "manifest"), "data.source", "must be synthetic or manifest"),
            (d.train_clips >= 1, "data.train_clips", "must be >= 1"),
            (d.val_clips >= 1, "data.val_clips", "must be >= 1"),
            (d.val_segment >= self.model.stft.win_len, "data.val_segment", "must be at least one window"),
            (d.noise_rir in ("independent", "same", "none"), "data.noise_rir",
             "must be independent, same or none"),
        ]
        for ok, key, msg in checks:
            if not ok:
                raise ConfigError(f"{key}: {msg}")
        if d.source == "manifest":
            for key, path in (("data.train_manifest", d.train_manifest), ("data.val_manifest", d.val_manifest)):
                if path is None:
                    raise ConfigError(f"{key}: required when data.source = manifest")
                if not Path(path).is_dir():
                    raise ConfigError(f"{key}: directory {path} not found")
        try:
            self.model.validate()
        except ValueError as err:
            raise ConfigError(f"model: {err}") from None


def _bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected true/false, got {raw!r}")


def _ints(raw: str) -> tuple[int, ...]:
    return tuple(int(x) for x in raw.split(",") if x.strip())


_MODEL_KEYS = {
    "variant": str, "encoder_channels": _ints, "kernel": _ints, "stride": _ints,
    "lstm_layers": int, "lstm_units": int, "dense_units": int, "lookahead_frames": int,
}
_SECTIONS = {"optim": OptimConfig, "train": TrainConfig, "data": DataConfig}
_CASTS = {"float": float, "int": int, "bool": _bool, "str": str, "Path | None": Path}


def parse_pairs(text: str, source: str = "<config>") -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        if key in pairs:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key}")
        pairs[key] = value
    return pairs


def from_pairs(pairs: dict[str, str], base_dir: Path | None = None) -> RunConfig:
    base_dir = base_dir or Path(".")
    preset = pairs.get("model.preset", "tiny")
    variant = pairs.get("model.variant", "E")
    if preset not in ("tiny", "default"):
        raise ConfigError(f"model.preset: must be tiny or default, got {preset!r}")
    if variant not in VARIANTS:
        raise ConfigError(f"model.variant: must be one of {', '.join(VARIANTS)}, got {variant!r}")
    model = ModelConfig.tiny(variant) if preset == "tiny" else ModelConfig.for_variant(variant)
    sections = {name: cls() for name, cls in _SECTIONS.items()}
    output_dir = Path("runs")
    model_over = {}
    for key, raw in pairs.items():
        head, _, name = key.partition(".")
        try:
            if key in ("model.preset", "model.variant"):
                continue
            if head == "model" and name in _MODEL_KEYS:
                model_over[name] = _MODEL_KEYS[name](raw)
            elif head in sections and name in {f.name for f in fields(sections[head])}:
                ftype = {f.name: f.type for f in fields(sections[head])}[name]
                value = _CASTS[ftype](raw)
                if isinstance(value, Path) and not value.is_absolute():
                    value = base_dir / value
                setattr(sections[head], name, value)
            elif key == "output.dir":
                output_dir = Path(raw) if Path(raw).is_absolute() else base_dir / raw
            else:
                raise ConfigError(f"{key}: unknown key")
        except ConfigError:
            raise
        except (ValueError, TypeError) as err:
            raise ConfigError(f"{key}: invalid value {raw!r} ({err})") from None
    if model_over:
        try:
            model = replace(model, **model_over)
        except TypeError as err:
            raise ConfigError(f"model: {err}") from None
    run = RunConfig(model, sections["optim"], sections["train"], sections["data"], output_dir)
    run.validate()
    return run


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"{path}: cannot read config ({err.strerror})") from None
    return from_pairs(parse_pairs(text, str(path)), path.parent)
