"""Run configuration: a YAML file of sections, every field overridable by flag.

Unknown sections or keys are rejected before any work starts. Flags take the
form ``--section.key value``; list fields accept comma-separated values.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data_io import SyntheticSpec
from .network import TrunkConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


MODALITIES = ("rgb", "rgb+flow")
SIZES = (224, 256, 320)


@dataclass
class DataSection:
    train_features: str = "data/train/features"
    train_flow: str = ""
    train_annotations: str = "data/train/annotations.txt"
    val_features: str = ""
    val_flow: str = ""
    val_annotations: str = ""
    test_features: str = "data/test/features"
    test_flow: str = ""
    test_annotations: str = "data/test/annotations.txt"


@dataclass
class SynthSection:
    num_train: int = 400
    num_test: int = 100
    T: int = 100
    C: int = 16
    boundary_rate: float = 4.0
    mean_scale: float = 1.0
    noise_scale: float = 0.5
    min_gap: int = 10
    fps: float = 10.0
    num_categories: int = 8
    category_shift: float = 2.0
    flow_C: int = 0

    def spec(self, split: str, seed: int) -> SyntheticSpec:
        n = self.num_train if split == "train" else self.num_test
        fields = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)
                  if f.name not in ("num_train", "num_test")}
        # distinct, seed-derived streams per split
        offset = 0 if split == "train" else 1_000_003
        return SyntheticSpec(num_videos=n, seed=seed + offset, prefix=f"{split}_", **fields)


@dataclass
class ModelSection:
    in_channels: int = 16
    C: int = 32
    L: int = 16
    s: int = 8
    num_encoder_blocks: int = 2
    num_decoder_blocks: int = 1
    num_heads: int = 4
    feedforward_width: int = 64
    G: int = 4
    K: int = 8
    sim_channels: int = 4
    positional: bool = True
    boundary_prior: float = 0.05


@dataclass
class SupervisionSection:
    sigma: float = 1.0
    radius: float = 3.0
    category_weight: float = 1.0


@dataclass
class TrainingSection:
    epochs: int = 20
    drop_epochs: list[int] = field(default_factory=lambda: [6, 10])
    drop_factor: float = 10.0
    lr: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 2


@dataclass
class PostSection:
    radius: int = 4
    threshold: float = 0.5


@dataclass
class EvalSection:
    rel_dis: list[float] = field(default_factory=lambda: [0.05])


@dataclass
class MetaSection:
    """Ensemble-member descriptors: input modalities, frame size tag, category branch."""

    modalities: str = "rgb"
    size: int = 256
    category_prediction: bool = True


@dataclass
class RunConfig:
    seed: int = 0
    data: DataSection = field(default_factory=DataSection)
    synth: SynthSection = field(default_factory=SynthSection)
    model: ModelSection = field(default_factory=ModelSection)
    supervision: SupervisionSection = field(default_factory=SupervisionSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    post: PostSection = field(default_factory=PostSection)
    eval: EvalSection = field(default_factory=EvalSection)
    meta: MetaSection = field(default_factory=MetaSection)

    def trunk(self) -> TrunkConfig:
        kw = dataclasses.asdict(self.model)
        return TrunkConfig(category_head=self.meta.category_prediction, **kw)

    def train_config(self) -> TrainConfig:
        t, s = self.training, self.supervision
        return TrainConfig(epochs=t.epochs, drop_epochs=tuple(t.drop_epochs),
                           drop_factor=t.drop_factor, lr=t.lr, momentum=t.momentum,
                           weight_decay=t.weight_decay, batch_size=t.batch_size,
                           sigma=s.sigma, radius=s.radius, category_weight=s.category_weight,
                           seed=self.seed)

    def validate(self) -> None:
        if self.meta.modalities not in MODALITIES:
            raise ConfigError(f"meta.modalities must be one of {MODALITIES}, "
                              f"got {self.meta.modalities!r}")
        if self.meta.size not in SIZES:
            raise ConfigError(f"meta.size must be one of {SIZES}, got {self.meta.size}")
        if self.post.radius < 0:
            raise ConfigError("post.radius must be >= 0")
        if not self.eval.rel_dis or any(r <= 0 for r in self.eval.rel_dis):
            raise ConfigError("eval.rel_dis must be a non-empty list of positive values")
        if self.training.batch_size < 1 or self.training.epochs < 1:
            raise ConfigError("training.batch_size and training.epochs must be >= 1")
        if self.supervision.sigma <= 0 or self.supervision.radius < 0:
            raise ConfigError("supervision.sigma must be > 0 and radius >= 0")
        try:
            self.trunk().validate()
            self.train_config().schedule()
            self.synth.spec("train", self.seed).validate()
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _sections() -> dict[str, type]:
    return {f.name: f.default_factory for f in dataclasses.fields(RunConfig)
            if f.default_factory is not dataclasses.MISSING}


def iter_fields():
    """Yield (dotted_key, python_type) for every overridable field."""
    yield "seed", int
    for name, cls in _sections().items():
        for f in dataclasses.fields(cls):
            yield f"{name}.{f.name}", _field_type(cls, f.name)


def _field_type(cls, name: str):
    default = getattr(cls(), name)
    if isinstance(default, list):
        return (list, type(default[0]) if default else float)
    return type(default)


def coerce(key: str, value, typ):
    """Convert a YAML or command-line value to the field's type."""
    try:
        if isinstance(typ, tuple):
            _, inner = typ
            if isinstance(value, str):
                value = [v for v in value.split(",") if v.strip()]
            if not isinstance(value, (list, tuple)):
                value = [value]
            return [coerce(key, v, inner) for v in value]
        if typ is bool:
            if isinstance(value, bool):
                return value
            low = str(value).strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        if typ is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(f"not an integer: {value!r}")
            return int(value)
        if typ is float:
            if isinstance(value, bool):
                raise ValueError(f"not a number: {value!r}")
            return float(value)
        if typ is str:
            return "" if value is None else str(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{key}: {e}") from None
    raise ConfigError(f"{key}: unsupported type {typ}")


def from_dict(raw: dict | None, overrides: dict[str, object] | None = None) -> RunConfig:
    cfg = RunConfig()
    types = dict(iter_fields())
    sections = _sections()
    for key, val in (raw or {}).items():
        if key == "seed":
            cfg.seed = coerce("seed", val, int)
            continue
        if key not in sections:
            raise ConfigError(f"unknown config key {key!r}")
        if not isinstance(val, dict):
            raise ConfigError(f"section {key!r} must be a mapping")
        for sub, v in val.items():
            dotted = f"{key}.{sub}"
            if dotted not in types:
                raise ConfigError(f"unknown config key {dotted!r}")
            setattr(getattr(cfg, key), sub, coerce(dotted, v, types[dotted]))
    for dotted, v in (overrides or {}).items():
        if dotted not in types:
            raise ConfigError(f"unknown config key {dotted!r}")
        val = coerce(dotted, v, types[dotted])
        if dotted == "seed":
            cfg.seed = val
        else:
            sec, sub = dotted.split(".", 1)
            setattr(getattr(cfg, sec), sub, val)
    cfg.validate()
    return cfg


def load(path=None, overrides: dict[str, object] | None = None) -> RunConfig:
    raw = {}
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text()) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: invalid YAML ({e})".replace("\n", " ")) from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    return from_dict(raw, overrides)


def dump(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)


# The twelve ensemble members: (modalities, size, category prediction).
ENSEMBLE_ROWS = [
    ("rgb", 224, False), ("rgb+flow", 224, False),
    ("rgb", 256, False), ("rgb+flow", 256, False),
    ("rgb", 320, False), ("rgb+flow", 320, False),
    ("rgb", 224, True), ("rgb+flow", 224, True),
    ("rgb", 256, True), ("rgb+flow", 256, True),
    ("rgb", 320, True), ("rgb+flow", 320, True),
]


def ensemble_member(row: int, base: RunConfig | None = None) -> RunConfig:
    """Config for ensemble member ``row`` (1-based) derived from ``base``.

    The input width follows the modalities: the synthetic RGB width, plus
    the flow width for two-stream rows.
    """
    if not 1 <= row <= len(ENSEMBLE_ROWS):
        raise ConfigError(f"ensemble row must be in 1..{len(ENSEMBLE_ROWS)}, got {row}")
    base = base or RunConfig()
    modalities, size, category = ENSEMBLE_ROWS[row - 1]
    d = base.to_dict()
    d["meta"] = {"modalities": modalities, "size": size, "category_prediction": category}
    flow = base.synth.flow_C if modalities == "rgb+flow" else 0
    d["model"]["in_channels"] = base.synth.C + flow
    return from_dict(d)
