"""Model hyperparameters."""

from __future__ import annotations

from dataclasses import dataclass, asdict

from ..errors import ConfigError


@dataclass
class ModelConfig:
    text_hidden: int = 64            # D: text-encoder output size
    embedding_dim: int = 32          # D_e: speaker-embedding size
    n_mels: int = 40                 # D_a: acoustic feature bands
    decoder_hidden: int = 128
    attention_dim: int = 32
    location_filters: int = 4
    location_kernel: int = 15
    resnet_channels: tuple = (8, 16)
    lde_components: int = 8          # C: dictionary size
    reduction_factor: int = 2        # r: frames per decoder step
    spk_loss_weight: float = 0.03    # w: multi-task weight on the speaker loss
    angular_margin: int = 2          # m: multiplicative margin
    prenet_units: int = 32
    text_conv_layers: int = 3
    text_conv_kernel: int = 5
    stop_positive_weight: float = 5.0

    def __post_init__(self):
        sizes = (self.text_hidden, self.embedding_dim, self.n_mels,
                 self.decoder_hidden, self.attention_dim, self.location_filters,
                 self.location_kernel, self.lde_components, self.reduction_factor,
                 self.prenet_units)
        if any(s < 1 for s in sizes):
            raise ConfigError("all model sizes must be >= 1")
        if self.spk_loss_weight < 0:
            raise ConfigError("spk_loss_weight must be >= 0")
        if not (isinstance(self.angular_margin, int) and self.angular_margin >= 1):
            raise ConfigError("angular_margin must be an integer >= 1")
        if self.text_hidden % 2 != 0:
            raise ConfigError("text_hidden must be even (bidirectional halves)")
        if len(self.resnet_channels) != 2:
            raise ConfigError("resnet_channels must list two block widths")
        self.resnet_channels = tuple(int(c) for c in self.resnet_channels)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["resnet_channels"] = list(self.resnet_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        if "resnet_channels" in d:
            d = dict(d, resnet_channels=tuple(d["resnet_channels"]))
        return cls(**d)
