"""
Run configuration: a tree of dataclass sections with a lossless YAML form.
"""

from __future__ import annotations

import copy
import sys
from dataclasses import MISSING, dataclass, field, fields, is_dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Type, TypeVar, Union

import yaml

from labeldiff.data.types import DatasetSpec
from labeldiff.enums import ChannelCollapse, EncoderPreset, PriorCombine, Variant
from labeldiff.exceptions import ConfigError
from labeldiff.models.denoiser import DenoiserConfig
from labeldiff.objectives import MMDConfig

Section = TypeVar('Section')


@dataclass
class DiffusionSettings:
    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    prior_combine: PriorCombine = PriorCombine.MEAN
    infer_steps: int = 100
    votes: int = 1


@dataclass
class DenoiserSettings:
    latent_dim: int = 256
    n_mid_layers: int = 2
    encoder: EncoderPreset = EncoderPreset.DESK


@dataclass
class DCGSettings:
    encoder: EncoderPreset = EncoderPreset.DESK
    attention_dim: int = 128
    roi_count: int = 6
    roi_size: int = 32
    roi_collapse: ChannelCollapse = ChannelCollapse.MAX


@dataclass
class OptimSettings:
    lr_denoiser: float = 1e-3
    lr_dcg: float = 2e-4
    batch_size: int = 32
    warmup_epochs: int = 10
    epochs: int = 100
    # Weight of the guidance cross-entropy during joint training.
    ce_weight: float = 1.0
    eval_every: int = 5
    num_workers: int = 0
    augment: bool = True


@dataclass
class RunConfig:
    data: DatasetSpec = field(default_factory=DatasetSpec)
    diffusion: DiffusionSettings = field(default_factory=DiffusionSettings)
    denoiser: DenoiserSettings = field(default_factory=DenoiserSettings)
    dcg: DCGSettings = field(default_factory=DCGSettings)
    optim: OptimSettings = field(default_factory=OptimSettings)
    mmd: MMDConfig = field(default_factory=MMDConfig)
    seed: int = 0
    variant: Variant = Variant.FULL

    @property
    def num_classes(self) -> int:
        return self.data.num_classes

    @property
    def mmd_weight(self) -> float:
        """
        Weight actually applied to the MMD terms; zero for variants without them.
        """
        return self.mmd.weight if self.variant.uses_mmd else 0.0

    def denoiser_config(self) -> DenoiserConfig:
        return DenoiserConfig(
            num_classes=self.data.num_classes,
            latent_dim=self.denoiser.latent_dim,
            n_mid_layers=self.denoiser.n_mid_layers,
            num_timesteps=self.diffusion.timesteps,
        )

    def validate(self) -> RunConfig:
        self.data.validate()
        self.mmd.validate()
        diffusion, optim = self.diffusion, self.optim
        if diffusion.timesteps < 1:
            raise ConfigError(f'need at least one diffusion step, got {diffusion.timesteps}')
        if not 0.0 < diffusion.beta_start <= diffusion.beta_end < 1.0:
            raise ConfigError(f'need 0 < beta_start <= beta_end < 1, got {diffusion.beta_start}, {diffusion.beta_end}')
        if not 1 <= diffusion.infer_steps <= diffusion.timesteps:
            raise ConfigError(f'infer_steps must lie in [1, {diffusion.timesteps}], got {diffusion.infer_steps}')
        if diffusion.votes < 1:
            raise ConfigError(f'votes must be positive, got {diffusion.votes}')
        if self.denoiser.latent_dim < 1 or self.denoiser.n_mid_layers < 0:
            raise ConfigError(f'bad denoiser dimensions {self.denoiser}')
        if self.dcg.roi_count < 1 or not 1 <= self.dcg.roi_size <= self.data.image_size:
            raise ConfigError(f'ROI settings do not fit {self.data.image_size}px images: {self.dcg}')
        if optim.lr_denoiser <= 0 or optim.lr_dcg <= 0:
            raise ConfigError(f'learning rates must be positive, got {optim.lr_denoiser}, {optim.lr_dcg}')
        if optim.batch_size < 1 or optim.epochs < 0 or optim.warmup_epochs < 0 or optim.eval_every < 1:
            raise ConfigError(f'bad optimizer schedule {optim}')
        if optim.ce_weight < 0:
            raise ConfigError(f'ce_weight must be non-negative, got {optim.ce_weight}')
        return self

    def with_overrides(self, variant: Union[Variant, str, None] = None, seed: Optional[int] = None) -> RunConfig:
        config = copy.deepcopy(self)
        if variant is not None:
            config.variant = coerce_enum(Variant, variant, 'variant')
        if seed is not None:
            config.seed = int(seed)
        return config

    def to_dict(self) -> Dict[str, Any]:
        return to_plain(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> RunConfig:
        return section_from_dict(cls, data, 'config')


# Plain-data conversion.

def to_plain(value: Any) -> Any:
    if is_dataclass(value):
        return {item.name: to_plain(getattr(value, item.name)) for item in fields(value)}
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (list, tuple)):
        return [to_plain(item) for item in value]
    return value


def coerce_enum(enum_type: Type[Enum], value: Any, where: str) -> Enum:
    try:
        return enum_type(value)
    except ValueError:
        choices = ', '.join(member.value for member in enum_type)
        raise ConfigError(f'{where}: unknown value {value!r}, expected one of {choices}') from None


def field_default(item) -> Any:
    if item.default is not MISSING:
        return item.default
    if item.default_factory is not MISSING:
        return item.default_factory()
    return None


def coerce_value(default: Any, value: Any, where: str) -> Any:
    if is_dataclass(default):
        return section_from_dict(type(default), value, where)
    if isinstance(default, Enum):
        return coerce_enum(type(default), value, where)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f'{where}: expected a boolean, got {value!r}')
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f'{where}: expected a list, got {value!r}')
        try:
            return tuple(float(item) for item in value)
        except (TypeError, ValueError):
            raise ConfigError(f'{where}: expected a list of numbers, got {value!r}') from None
    try:
        if isinstance(default, float):
            return float(value)
        if isinstance(default, int):
            return int(value)
    except (TypeError, ValueError):
        raise ConfigError(f'{where}: expected a number, got {value!r}') from None
    if where.endswith('.imbalance') and value is not None:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f'{where}: expected a list of class weights, got {value!r}')
        try:
            return [float(item) for item in value]
        except (TypeError, ValueError):
            raise ConfigError(f'{where}: expected a list of class weights, got {value!r}') from None
    return value


def section_from_dict(cls: Type[Section], data: Any, where: str) -> Section:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f'{where}: expected a mapping, got {type(data).__name__}')
    known = {item.name: item for item in fields(cls)}
    unknown = sorted(set(data).difference(known))
    if unknown:
        raise ConfigError(f'{where}: unknown keys {unknown}')
    kwargs = {
        name: coerce_value(field_default(known[name]), value, f'{where}.{name}')
        for name, value in data.items()
    }
    return cls(**kwargs)


# Files.

def load_config(path: Union[str, Path]) -> RunConfig:
    """
    Read a YAML (canonical) or TOML config; missing keys take the desk defaults.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f'cannot read config {path}: {e}') from e

    if path.suffix.lower() == '.toml':
        if sys.version_info < (3, 11):
            raise ConfigError(f'{path}: TOML configs need Python 3.11 or newer, use YAML instead')
        import tomllib
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f'{path}: {e}') from e
    else:
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise ConfigError(f'{path}: {e}') from e
    return RunConfig.from_dict(data or {}).validate()


def save_config(config: RunConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(config.to_dict(), sort_keys=False))
    return path


# Presets.

def desk_config() -> RunConfig:
    return RunConfig()


def large_config() -> RunConfig:
    return RunConfig(
        data=DatasetSpec(image_size=224, channels=3),
        denoiser=DenoiserSettings(latent_dim=6144, encoder=EncoderPreset.RESNET18),
        dcg=DCGSettings(encoder=EncoderPreset.RESNET18),
        optim=OptimSettings(epochs=1000),
    )


PRESETS: Dict[str, Callable[[], RunConfig]] = {
    'desk': desk_config,
    'large': large_config,
}
