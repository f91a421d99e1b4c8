"""Run configuration: dataclass sections read from INI files.

Every section maps onto one dataclass. Unknown sections or keys are
errors, values are converted by the field's annotated type, and
``section.key=value`` overrides are applied after the file.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field

from .ddpm import DiffusionConfig
from .denoiser import TransformerConfig
from .motion.dropout import DropoutScheduler


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    clips: int = 10
    duration: float = 4.0
    fps: float = 20.0
    step_freq_min: float = 0.9
    step_freq_max: float = 1.2
    profile: str = "random"
    stance_slip: float = 0.0

    def validate(self):
        if self.clips < 1:
            raise ConfigError("data.clips must be >= 1")
        if not self.duration > 0:
            raise ConfigError("data.duration must be positive")
        if not self.fps > 0:
            raise ConfigError("data.fps must be positive")
        if not 0 < self.step_freq_min <= self.step_freq_max:
            raise ConfigError("need 0 < data.step_freq_min <= data.step_freq_max")


@dataclass
class ModelConfig:
    kind: str = "transformer"
    d_model: int = 64
    heads: int = 4
    n_enc_motion: int = 1
    n_enc_control: int = 1
    n_fusion: int = 2
    n_dec: int = 1
    ff_mult: int = 4
    num_buckets: int = 16
    max_distance: int = 32
    init_std: float = 0.02

    def validate(self):
        if self.kind not in ("transformer", "linear"):
            raise ConfigError(f"model.kind must be 'transformer' or 'linear', got {self.kind!r}")
        if self.d_model % self.heads:
            raise ConfigError("model.d_model must be divisible by model.heads")

    def architecture(self, T_h: int, T_p: int, D: int = 63, C: int = 3) -> dict:
        if self.kind == "linear":
            return {"kind": "linear", "T_h": T_h, "T_p": T_p, "D": D, "C": C, "step_dim": 16}
        tf = {k: v for k, v in dataclasses.asdict(self).items() if k != "kind"}
        return {"kind": "transformer", **dataclasses.asdict(TransformerConfig(T_h=T_h, T_p=T_p, D=D, C=C, **tf))}


@dataclass
class TrainSection:
    epochs: int = 1000
    batch_size: int = 64
    lr: float = 1e-3
    T_h: int = 10
    T_p: int = 10
    stride: int = 1
    augment: bool = True
    max_windows: int = 0           # 0 keeps every window
    normalize: bool = True
    dropout_rates: tuple = (0.0, 0.05, 0.10, 0.15, 0.20, 0.25)
    warmup_epochs: int = 500
    interval_epochs: int = 100

    def validate(self):
        if self.epochs < 0 or self.batch_size < 1 or self.T_h < 1 or self.T_p < 1 or self.stride < 1:
            raise ConfigError("train.epochs must be >= 0; batch_size, T_h, T_p, stride must be positive")
        if not self.lr > 0:
            raise ConfigError("train.lr must be positive")
        try:
            self.scheduler()
        except ValueError as e:
            raise ConfigError(f"train dropout schedule: {e}") from None

    def scheduler(self) -> DropoutScheduler:
        return DropoutScheduler(tuple(self.dropout_rates), self.warmup_epochs, self.interval_epochs)


@dataclass
class SampleConfig:
    frames: int = 100

    def validate(self):
        if self.frames < 1:
            raise ConfigError("sample.frames must be >= 1")


@dataclass
class ReconstructConfig:
    horizon: int = 0               # 0 means T_h
    average: bool = False
    max_iterations: int = 0        # 0 means enough passes to cover the clip

    def validate(self):
        if self.horizon < 0 or self.max_iterations < 0:
            raise ConfigError("reconstruct.horizon and reconstruct.max_iterations must be >= 0")


@dataclass
class EvalConfig:
    v_grid: tuple = tuple(float(v) for v in range(1, 21))
    min_frames: int = 3

    def validate(self):
        if not self.v_grid:
            raise ConfigError("eval.v_grid must not be empty")
        if self.min_frames < 1:
            raise ConfigError("eval.min_frames must be >= 1")


@dataclass
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSection = field(default_factory=TrainSection)
    sample: SampleConfig = field(default_factory=SampleConfig)
    reconstruct: ReconstructConfig = field(default_factory=ReconstructConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "RunConfig":
        for name in SECTIONS:
            sec = getattr(self, name)
            if hasattr(sec, "validate"):
                sec.validate()
        try:
            self.diffusion.build()
        except ValueError as e:
            raise ConfigError(f"diffusion: {e}") from None
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


SECTIONS = ("data", "diffusion", "model", "train", "sample", "reconstruct", "eval")


def _convert(text: str, typ, where: str):
    typ = typ if isinstance(typ, str) else getattr(typ, "__name__", str(typ))
    t = text.strip()
    try:
        if typ == "bool":
            low = t.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(t)
        if typ == "int":
            return int(t)
        if typ == "float":
            return float(t)
        if typ == "tuple":
            return tuple(float(v) for v in t.replace(" ", "").split(",") if v)
        return t
    except ValueError:
        raise ConfigError(f"{where}: cannot read {text!r} as {typ}") from None


def _set(cfg: RunConfig, dotted: str, value: str) -> None:
    if "." not in dotted:
        if dotted == "seed":
            cfg.seed = _convert(value, "int", "seed")
            return
        raise ConfigError(f"override {dotted!r} must look like section.key")
    section, key = dotted.split(".", 1)
    if section not in SECTIONS:
        raise ConfigError(f"unknown config section [{section}]")
    obj = getattr(cfg, section)
    fields = {f.name: f for f in dataclasses.fields(obj)}
    if key not in fields:
        raise ConfigError(f"unknown key {key!r} in section [{section}]; known: {', '.join(fields)}")
    new = _convert(value, fields[key].type, f"{section}.{key}")
    if dataclasses.is_dataclass(obj) and getattr(type(obj), "__dataclass_params__").frozen:
        setattr(cfg, section, dataclasses.replace(obj, **{key: new}))
    else:
        setattr(obj, key, new)


def load_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path) as f:
                parser.read_file(f)
        except configparser.Error as e:
            raise ConfigError(f"{path}: {e}") from None
        if parser.defaults():
            raise ConfigError(f"{path}: keys outside a section are not allowed")
        for section in parser.sections():
            for key, value in parser[section].items():
                if section == "run":
                    if key != "seed":
                        raise ConfigError(f"unknown key {key!r} in section [run]; known: seed")
                    _set(cfg, "seed", value)
                else:
                    _set(cfg, f"{section}.{key}", value)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        k, v = item.split("=", 1)
        _set(cfg, k.strip(), v)
    return cfg.validate()


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def dump_config(cfg: RunConfig) -> str:
    out = io.StringIO()
    out.write(f"[run]\nseed = {cfg.seed}\n")
    for name in SECTIONS:
        out.write(f"\n[{name}]\n")
        sec = getattr(cfg, name)
        for f in dataclasses.fields(sec):
            out.write(f"{f.name} = {_fmt(getattr(sec, f.name))}\n")
    return out.getvalue()
