"""Architecture and training hyperparameters."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

from ..errors import ParameterError

MLP_RATIO = 4  # transformer feed-forward width, in multiples of embed_dim


@dataclass(frozen=True)
class TrustConfig:
    """Hybrid reconstructor: attention encoder, adaptive pooling, upsampling
    decoder with projected token skips.

    Decoder stages double the resolution until the image size is reached;
    any remaining stages refine at full resolution. Skip connection j wires
    encoder block ``skip_sources[j]`` (1-indexed) into decoder stage j.
    """

    image_size: int = 32
    patch_size: int = 4
    embed_dim: int = 64
    num_heads: int = 4
    encoder_depth: int = 4
    pool_grid: int = 8
    decoder_channels: tuple[int, ...] = (64, 32, 16, 8)
    skip_sources: tuple[int, ...] = (4, 2)
    skip_enabled: tuple[bool, ...] = (True, True)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "decoder_channels", tuple(self.decoder_channels))
        object.__setattr__(self, "skip_sources", tuple(self.skip_sources))
        object.__setattr__(self, "skip_enabled", tuple(bool(b) for b in self.skip_enabled))
        if self.image_size % self.patch_size != 0:
            raise ParameterError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if self.embed_dim % self.num_heads != 0:
            raise ParameterError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.pool_grid > self.token_grid:
            raise ParameterError(
                f"pool_grid {self.pool_grid} exceeds token grid {self.token_grid}"
            )
        ratio = self.image_size // self.pool_grid
        ups = _log2(ratio)
        if ups < 0 or self.pool_grid * ratio != self.image_size:
            raise ParameterError(
                f"image_size {self.image_size} must be pool_grid {self.pool_grid} "
                "times a power of two"
            )
        if len(self.decoder_channels) < ups:
            raise ParameterError(
                f"{ups} upsampling stages needed to reach {self.image_size} from "
                f"{self.pool_grid}, but only {len(self.decoder_channels)} decoder channels given"
            )
        if len(self.skip_sources) != len(self.skip_enabled):
            raise ParameterError("skip_sources and skip_enabled lengths differ")
        if len(self.skip_sources) > len(self.decoder_channels):
            raise ParameterError("more skip connections than decoder stages")
        for s in self.skip_sources:
            if not 1 <= s <= self.encoder_depth:
                raise ParameterError(
                    f"skip source block {s} outside 1..{self.encoder_depth}"
                )

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    @property
    def token_grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def tokens(self) -> int:
        return self.token_grid**2

    @property
    def patch_dim(self) -> int:
        return self.patch_size**2

    @property
    def mlp_dim(self) -> int:
        return MLP_RATIO * self.embed_dim

    def stage_plan(self) -> list[tuple[int, int, bool]]:
        """(resolution_after_stage, out_channels, upsampled) per decoder stage."""
        plan = []
        res = self.pool_grid
        for ch in self.decoder_channels:
            up = res < self.image_size
            if up:
                res *= 2
            plan.append((res, ch, up))
        return plan

    def skip_for_stage(self, stage: int) -> int | None:
        """1-indexed encoder block feeding this decoder stage, if enabled."""
        if stage < len(self.skip_sources) and self.skip_enabled[stage]:
            return self.skip_sources[stage]
        return None

    def to_dict(self) -> dict:
        return asdict(self)


def _log2(value: int) -> int:
    out = 0
    while value > 1:
        if value % 2:
            return -1  # caller's divisibility check fails on reconstruction
        value //= 2
        out += 1
    return out


@dataclass(frozen=True)
class UnetConfig:
    """Three-level convolutional encoder/decoder baseline with skips."""

    image_size: int = 32
    base_channels: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.image_size % 4 != 0:
            raise ParameterError(f"image_size {self.image_size} must be divisible by 4")
        if self.base_channels < 1:
            raise ParameterError("base_channels must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


LOSS_KINDS = ("l2", "l2_l1", "l2_ssim")


@dataclass(frozen=True)
class TrainConfig:
    loss_kind: str = "l2_ssim"
    lambda_l1: float = 0.1
    lambda_ssim: float = 0.5
    learning_rate: float = 1e-4
    batch_size: int = 16
    epochs: int = 20
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ParameterError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.learning_rate < 0:
            raise ParameterError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ParameterError("batch_size and epochs must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)
