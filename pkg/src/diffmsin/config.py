"""Training/model configuration and TOML loading."""
from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field, fields

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

LR_GRID = (1e-5, 1e-4, 1e-3)
LOSS_WEIGHT_RANGE = (1e-4, 0.3)
ABLATIONS = ("none", "no_mfe", "no_src", "no_fdaf", "all")


@dataclass
class SrcConfig:
    T: int = 50
    alpha_start: float = 0.999
    alpha_end: float = 0.98
    weight_init: float = 0.5
    # None keeps the hinge as defined; a float switches the negative branch to
    # max(0, cos - margin), which changes the loss definition.
    syn_margin: float | None = None


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 1024
    d_id: int = 16
    d_im: int = 512
    d_te: int = 512
    d_e: int = 128
    hidden: int = 128
    att_hidden: int = 36
    d_profile: int = 8
    heads: int = 8
    w1: float = 0.01
    w2: float = 0.01
    max_len: int = 50
    early_stop_patience: int = 10
    max_epochs: int = 100
    optimizer: str = "adam"
    seed: int = 0
    no_mfe: bool = False
    no_src: bool = False
    no_fdaf: bool = False
    src: SrcConfig = field(default_factory=SrcConfig)

    def __post_init__(self):
        if isinstance(self.src, dict):
            self.src = SrcConfig(**self.src)
        self.validate()

    def validate(self) -> None:
        for name in ("batch_size", "d_id", "d_im", "d_te", "d_e", "hidden", "att_hidden",
                     "d_profile", "heads", "max_len", "max_epochs"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.early_stop_patience < 0:
            raise ConfigError("early_stop_patience must be >= 0")
        lo, hi = LOSS_WEIGHT_RANGE
        for name in ("w1", "w2"):
            w = getattr(self, name)
            if not lo <= w <= hi:
                raise ConfigError(f"{name}={w} outside [{lo}, {hi}]")
        if self.d_e % self.heads:
            raise ConfigError(f"d_e={self.d_e} not divisible by heads={self.heads}")
        if self.src.T < 1:
            raise ConfigError("src.T must be >= 1")
        if not 0 < self.src.alpha_end <= 1 or not 0 < self.src.alpha_start <= 1:
            raise ConfigError("schedule endpoints must lie in (0, 1]")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.max_len > 50 or self.max_len < 5:
            raise ConfigError("max_len must lie in [5, 50]")

    @property
    def ablation(self) -> str:
        flags = [n for n in ("no_mfe", "no_src", "no_fdaf") if getattr(self, n)]
        if len(flags) == 3:
            return "no_mfe_src_fdaf"
        return "+".join(flags) or "full"

    def with_ablation(self, name: str) -> "TrainConfig":
        if name not in ABLATIONS:
            raise ConfigError(f"unknown ablation {name!r}; choose from {ABLATIONS}")
        flags = {"no_mfe": False, "no_src": False, "no_fdaf": False}
        if name == "all":
            flags = dict.fromkeys(flags, True)
        elif name != "none":
            flags[name] = True
        return self.replace(**flags)

    def replace(self, **changes) -> "TrainConfig":
        src_changes = {k[4:]: changes.pop(k) for k in list(changes) if k.startswith("src_")}
        src = dataclasses.replace(self.src, **src_changes) if src_changes else self.src
        return dataclasses.replace(self, src=src, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        raw = dict(raw)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        src = raw.pop("src", {}) or {}
        src_known = {f.name for f in fields(SrcConfig)}
        if set(src) - src_known:
            raise ConfigError(f"unknown src keys: {sorted(set(src) - src_known)}")
        try:
            return cls(src=SrcConfig(**src), **raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def load_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_config(path) -> tuple[TrainConfig, dict]:
    """Read a TOML file; the ``[train]`` table (or the top level) becomes a
    TrainConfig, a ``[data]`` table is returned untouched for the generator."""
    raw = load_toml(path)
    data = raw.pop("data", {})
    train = raw.pop("train", None)
    if train is None:
        train = raw
    elif raw:
        train = {**raw, **train}
    return TrainConfig.from_dict(train), data
