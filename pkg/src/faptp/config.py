"""Configuration containers and their JSON file round-trip.

Two scales exist: the desk scale (small widths, CPU-trainable in minutes)
used by tests and the toy end-to-end runs, and the paper scale used only
for parameter-budget reporting.
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .decoder import DecoderConfig
from .exceptions import ConfigError
from .phyfusion import PhyFusionConfig
from .social import SocialConfig
from .temporal import TemporalConfig


@dataclass
class AblationSpec:
    no_phyfusion: bool = False
    no_mamba: bool = False
    no_dynahetero: bool = False
    use_transformer: bool = False
    homo_graph: bool = False

    def __post_init__(self):
        if self.no_mamba and self.use_transformer:
            raise ConfigError("no_mamba and use_transformer are mutually exclusive")

    def tag(self):
        on = [f.name for f in dataclasses.fields(self) if getattr(self, f.name)]
        return "+".join(on) if on else "full"


@dataclass
class ModelConfig:
    phyfusion: PhyFusionConfig = field(default_factory=PhyFusionConfig)
    temporal: TemporalConfig = field(default_factory=TemporalConfig)
    social: SocialConfig = field(default_factory=SocialConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    ablation: AblationSpec = field(default_factory=AblationSpec)
    seed: int = 0

    def __post_init__(self):
        d = self.temporal.d_model
        if self.social.d_model != d or self.decoder.d_model != d:
            raise ConfigError(
                f"width mismatch: temporal={d} social={self.social.d_model} "
                f"decoder={self.decoder.d_model}"
            )

    @staticmethod
    def desk_scale(ablation=None, seed=0):
        return ModelConfig(ablation=ablation or AblationSpec(), seed=seed)

    @staticmethod
    def paper_scale(ablation=None, seed=0):
        return ModelConfig(
            phyfusion=PhyFusionConfig.paper_scale(),
            temporal=TemporalConfig.paper_scale(),
            social=SocialConfig.paper_scale(),
            decoder=DecoderConfig.paper_scale(),
            ablation=ablation or AblationSpec(),
            seed=seed,
        )


@dataclass
class TrainConfig:
    lr: float = 1e-4
    lr_floor: float = 1e-6
    weight_decay: float = 1e-5
    batch_groups: int = 4  # frame-groups per optimizer step
    epochs: int = 20
    grad_clip: float = 1.0
    ema_decay: float = 0.999
    mixed_precision: bool = False  # float32 scan kernels; off for acceptance
    image_update_every: int = 4  # dedicated image-branch step every k-th step
    image_lr_scale: float = 3.0  # image steps run at lr * this factor
    seed: int = 0
    deterministic: bool = True

    def __post_init__(self):
        if self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive")
        if not (0.0 <= self.ema_decay < 1.0):
            raise ConfigError("ema_decay must lie in [0, 1)")


def _to_jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return list(obj)
    return obj


def _dataclass_from(cls, data):
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if dataclasses.is_dataclass(f.type) or f.type in (
            PhyFusionConfig, TemporalConfig, SocialConfig, DecoderConfig, AblationSpec
        ):
            value = _dataclass_from(f.type, value)
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[f.name] = value
    return cls(**kwargs)


def save_config(path, model_cfg, train_cfg):
    doc = {"model": _to_jsonable(model_cfg), "train": _to_jsonable(train_cfg)}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


def load_config(path):
    with open(path) as fh:
        doc = json.load(fh)
    try:
        model = _dataclass_from(ModelConfig, doc.get("model", {}))
        train = _dataclass_from(TrainConfig, doc.get("train", {}))
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return model, train


def config_hash(model_cfg, train_cfg=None):
    doc = {"model": _to_jsonable(model_cfg)}
    if train_cfg is not None:
        doc["train"] = _to_jsonable(train_cfg)
    blob = json.dumps(doc, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]
