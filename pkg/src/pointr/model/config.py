from __future__ import annotations

import dataclasses
from dataclasses import dataclass

PLACEMENTS = ("none", "first", "all")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    n_input: int = 2048
    n_proxies: int = 128
    n_queries: int = 96
    embed_dim: int = 384
    n_heads: int = 6
    enc_depth: int = 6
    dec_depth: int = 8
    k_dgcnn: int = 16
    k_geo: int = 8
    fold_grid: int = 8
    fold_extent: float = 0.05
    fold_hidden: int = 256
    query_hidden: int = 1024
    pos_hidden: int = 128
    ffn_ratio: float = 2.0
    extractor_channels: tuple = (8, 32, 64, 64, 128)
    geometry_block_placement: str = "first"
    dropout: float = 0.1
    train_norm: str = "L2SQ"

    def __post_init__(self):
        self.extractor_channels = tuple(self.extractor_channels)
        self.validate()

    @property
    def fold_points(self) -> int:
        """Points generated around each predicted centre (s)."""
        return self.fold_grid * self.fold_grid

    @property
    def n_missing(self) -> int:
        return self.n_queries * self.fold_points

    @property
    def n_complete(self) -> int:
        return self.n_input + self.n_missing

    @property
    def stage_sizes(self) -> tuple:
        """Point counts after each extractor stage: all, 4N, 4N, N."""
        wide = min(self.n_input, 4 * self.n_proxies)
        return (self.n_input, wide, wide, self.n_proxies)

    def validate(self) -> None:
        counts = {k: v for k, v in dataclasses.asdict(self).items() if isinstance(v, int) and not isinstance(v, bool)}
        for key, value in counts.items():
            if key in ("enc_depth", "dec_depth"):
                if value < 0:
                    raise ConfigError(f"{key} must be >= 0")
            elif value <= 0:
                raise ConfigError(f"{key} must be positive, got {value}")
        if self.embed_dim % self.n_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by n_heads {self.n_heads}")
        if self.geometry_block_placement not in PLACEMENTS:
            raise ConfigError(f"geometry_block_placement must be one of {PLACEMENTS}")
        if len(self.extractor_channels) != 5:
            raise ConfigError("extractor_channels needs 5 widths (input projection + 4 stages)")
        if self.n_proxies > self.n_input:
            raise ConfigError("n_proxies exceeds n_input")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.train_norm not in ("L1", "L2", "L2SQ"):
            raise ConfigError(f"unknown train_norm {self.train_norm!r}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["extractor_channels"] = list(self.extractor_channels)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown model config key: {unknown[0]}")
        return cls(**data)


def shapenet55_config(**overrides) -> ModelConfig:
    return ModelConfig(**overrides)


def pcn_config(**overrides) -> ModelConfig:
    return ModelConfig(**{"n_queries": 224, **overrides})


def desk_config(**overrides) -> ModelConfig:
    """Quarter-scale point counts with a narrow, shallow transformer."""
    base = dict(
        n_input=512,
        n_proxies=32,
        n_queries=24,
        embed_dim=96,
        n_heads=6,
        enc_depth=2,
        dec_depth=2,
        fold_hidden=128,
        query_hidden=256,
        pos_hidden=64,
    )
    base.update(overrides)
    return ModelConfig(**base)


PRESETS = {"shapenet55": shapenet55_config, "pcn": pcn_config, "desk": desk_config}
