"""Model assembly: the self-guided enhancer, its task-adaptive variant,
the Wasserstein critic, and the style classifier.

The enhancer processes a shuffled image pyramid top-down: the most-shuffled
branch runs first (with a global feature gate), its features are
inverse-shuffled and concatenated into the next branch down, and the base
branch emits a 3-channel correction added to the input.

Default widths use a doubling channel ladder halved above the base level
with a doubled base width. With two blocks per level this lands at ~340k
learnable scalars; dropping instance norm and then the global gate steps
the count down the ablation ladder.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .layers import (
    Conv2d,
    GlobalFeatureGate,
    Linear,
    Module,
    ModuleList,
    NormSite,
    ResidualBlock,
    leaky_relu,
    shuffle,
    unshuffle,
)


@dataclass
class ModelConfig:
    """Architecture knobs; the defaults are the full-size enhancer.

    Channel widths: base level uses `base_channels`; level l >= 1 uses
    base_channels * level_channel_factor * 2**(l-1), i.e. a doubling ladder
    that starts at half the base width by default.

    blocks_per_level[0] counts residual blocks at the base; entries for
    higher levels count plain conv blocks.
    """

    levels: int = 2
    base_channels: int = 64
    level_channel_factor: float = 0.5
    blocks_per_level: tuple = (2, 2, 2)
    use_global_features: bool = True
    norm_mode: str = "instance"        # none | instance | adaptive
    task_count: int = 0
    latent_w_dim: int = 128
    mapping_depth: int = 3
    global_residual: bool = True
    gate_reduction: int = 1
    zero_init_output: bool = False

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.norm_mode not in ("none", "instance", "adaptive"):
            raise ValueError(f"unknown norm_mode {self.norm_mode!r}")
        if self.norm_mode == "adaptive" and self.task_count < 1:
            raise ValueError("adaptive norm requires task_count >= 1")
        if len(self.blocks_per_level) != self.levels + 1:
            raise ValueError("blocks_per_level must have levels+1 entries")
        if any(c < 1 for c in self.level_channels()):
            raise ValueError("all channel widths must be positive")

    def level_channels(self) -> list:
        ch = [self.base_channels]
        for l in range(1, self.levels + 1):
            ch.append(int(round(self.base_channels * self.level_channel_factor
                                * 2 ** (l - 1))))
        return ch

    def to_dict(self) -> dict:
        d = asdict(self)
        d["blocks_per_level"] = list(self.blocks_per_level)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["blocks_per_level"] = tuple(d["blocks_per_level"])
        return cls(**d)


def default_config(**overrides) -> ModelConfig:
    return ModelConfig(**overrides)


def desk_config(**overrides) -> ModelConfig:
    """Small preset for 64x64 synthetic experiments and tests."""
    base = dict(base_channels=16, blocks_per_level=(1, 1, 1),
                latent_w_dim=64)
    base.update(overrides)
    return ModelConfig(**base)


def sgn2_config(**overrides) -> ModelConfig:
    """Two-level ancestor network without gate or norm.

    Approximates the original channel ladder (32/64/128, deeper blocks);
    the exact historical channel table is not recoverable, so the count is
    a target, not a match.
    """
    base = dict(base_channels=32, level_channel_factor=2.0,
                blocks_per_level=(4, 3, 3), use_global_features=False,
                norm_mode="none")
    base.update(overrides)
    return ModelConfig(**base)


class _ConvBlock(Module):
    def __init__(self, channels: int, norm_mode: str,
                 rng: np.random.Generator):
        self.conv = Conv2d(channels, channels, rng)
        self.norm = NormSite(channels, norm_mode)

    def norm_sites(self):
        return [self.norm]

    def __call__(self, x, cond=None):
        return self.norm(leaky_relu(self.conv(x)), cond)


class _Level(Module):
    """One resolution branch. The top branch has no merge conv."""

    def __init__(self, level: int, channels: int, guide_channels: int,
                 blocks: int, cfg: ModelConfig, rng: np.random.Generator):
        in_ch = 3 * 4 ** level
        self.conv_in = Conv2d(in_ch, channels, rng)
        self.norm_in = NormSite(channels, cfg.norm_mode)
        self.is_top = guide_channels == 0
        if not self.is_top:
            self.merge = Conv2d(channels + guide_channels, channels, rng)
            self.norm_merge = NormSite(channels, cfg.norm_mode)
        self.blocks = ModuleList(
            _ConvBlock(channels, cfg.norm_mode, rng) for _ in range(blocks))
        if self.is_top and cfg.use_global_features:
            self.gate = GlobalFeatureGate(channels, rng, cfg.gate_reduction)

    def norm_sites(self):
        sites = [self.norm_in]
        if not self.is_top:
            sites.append(self.norm_merge)
        for b in self.blocks:
            sites.extend(b.norm_sites())
        return sites

    def __call__(self, x, guide, cond):
        t = self.norm_in(leaky_relu(self.conv_in(x)), cond(self.norm_in))
        if not self.is_top:
            t = ad.concat([t, guide], axis=1)
            t = self.norm_merge(leaky_relu(self.merge(t)),
                                cond(self.norm_merge))
        for b in self.blocks:
            t = b(t, cond(b.norm))
        if self.is_top and hasattr(self, "gate"):
            t = self.gate(t)
        return t


class MappingNetwork(Module):
    """Task latent z -> intermediate latent w: stacked FC + leaky ReLU."""

    def __init__(self, task_count: int, w_dim: int, depth: int,
                 rng: np.random.Generator):
        dims = [task_count] + [w_dim] * depth
        self.layers = ModuleList(
            Linear(dims[i], dims[i + 1], rng) for i in range(depth))

    def __call__(self, z: Tensor) -> Tensor:
        t = z
        for layer in self.layers:
            t = leaky_relu(layer(t))
        return t


class GSGN(Module):
    """Self-guided multi-scale enhancer.

    In adaptive mode the forward pass needs a style vector z of shape
    (N, task_count); the mapping network produces w and one head per norm
    site emits that site's (scale, shift), with scale parameterized as
    1 + delta so zero heads reproduce the unconditioned network exactly.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        ch = cfg.level_channels()
        self.levels = ModuleList()
        for l in range(cfg.levels, -1, -1):
            guide = 0 if l == cfg.levels else ch[l + 1] // 4
            if l < cfg.levels and ch[l + 1] % 4:
                raise ShapeError(f"level {l + 1} width {ch[l + 1]} not "
                                 "divisible by 4 (needed for unshuffle)")
            blocks = cfg.blocks_per_level[l] if l > 0 else 0
            self.levels.append(_Level(l, ch[l], guide, blocks, cfg, rng))
        self.base_blocks = ModuleList(
            ResidualBlock(ch[0], cfg.norm_mode, rng)
            for _ in range(cfg.blocks_per_level[0]))
        self.conv_out = Conv2d(ch[0], 3, rng, zero_init=cfg.zero_init_output)
        if cfg.norm_mode == "adaptive":
            self.mapping = MappingNetwork(cfg.task_count, cfg.latent_w_dim,
                                          cfg.mapping_depth, rng)
            self.heads = ModuleList(
                Linear(cfg.latent_w_dim, 2 * site.channels, rng,
                       zero_init=True)
                for site in self.norm_sites())

    def norm_sites(self):
        sites = []
        for level in self.levels:
            sites.extend(level.norm_sites())
        for b in self.base_blocks:
            sites.extend(b.norm_sites())
        return sites

    def adain_conditions(self, z: Tensor) -> dict:
        """Map z through the mapping network and all heads.

        Returns {id(site): (scale, shift)} with per-sample (N, C) values.
        """
        w = self.mapping(z)
        conds = {}
        for site, head in zip(self.norm_sites(), self.heads):
            sb = head(w)
            c = site.channels
            scale = ad.add(ad.narrow(sb, 1, 0, c), 1.0)
            shift = ad.narrow(sb, 1, c, c)
            conds[id(site)] = (scale, shift)
        return conds

    def __call__(self, x: Tensor, z: Optional[Tensor] = None,
                 clamp_output: bool = False) -> Tensor:
        cfg = self.cfg
        n, c, h, w = x.shape
        divisor = 2 ** cfg.levels
        if h % divisor or w % divisor:
            raise ShapeError(f"input {h}x{w} not divisible by {divisor}")
        if cfg.norm_mode == "adaptive":
            if z is None:
                raise ValueError("adaptive model needs a style vector z")
            if z.shape != (n, cfg.task_count):
                raise ShapeError(f"z shape {z.shape} != "
                                 f"({n}, {cfg.task_count})")
            conds = self.adain_conditions(z)
            cond = lambda site: conds[id(site)]
        else:
            cond = lambda site: None

        pyramid = [x]
        for _ in range(cfg.levels):
            pyramid.append(shuffle(pyramid[-1]))

        guide = None
        for i, level in enumerate(self.levels):
            l = cfg.levels - i
            t = level(pyramid[l], guide, cond)
            if l > 0:
                guide = unshuffle(t)
        for rb in self.base_blocks:
            t = rb(t, (cond(rb.norm1), cond(rb.norm2)))
        correction = self.conv_out(t)
        out = ad.add(x, correction) if cfg.global_residual else correction
        if clamp_output:
            out = ad.clamp(out, 0.0, 1.0)
        return out


class Critic(Module):
    """Unbounded per-sample score: strided conv trunk, pooled scalar head.

    No normalization anywhere, so the gradient penalty stays a per-sample
    quantity.
    """

    def __init__(self, rng: np.random.Generator, width: int = 32,
                 stages: int = 4, in_ch: int = 3):
        widths = [min(width * 2 ** i, width * 4) for i in range(stages)]
        convs = []
        prev = in_ch
        for wd in widths:
            convs.append(Conv2d(prev, wd, rng, stride=2))
            prev = wd
        self.convs = ModuleList(convs)
        self.head = Linear(prev, 1, rng)

    def __call__(self, x: Tensor) -> Tensor:
        t = x
        for conv in self.convs:
            t = leaky_relu(conv(t))
        pooled = ad.mean_(t, (2, 3))            # (N, C)
        return ad.reshape(self.head(pooled), (x.shape[0],))


class StyleClassifier(Module):
    """Per-task confidences in (0,1); independent sigmoids, clamped."""

    CLAMP = 1e-7

    def __init__(self, task_count: int, rng: np.random.Generator,
                 width: int = 16, stages: int = 3, in_ch: int = 3):
        convs = []
        prev = in_ch
        for i in range(stages):
            wd = min(width * 2 ** i, width * 4)
            convs.append(Conv2d(prev, wd, rng, stride=2))
            prev = wd
        self.convs = ModuleList(convs)
        self.head = Linear(prev, task_count, rng)

    def __call__(self, x: Tensor) -> Tensor:
        t = x
        for conv in self.convs:
            t = leaky_relu(conv(t))
        probs = ad.sigmoid(self.head(ad.mean_(t, (2, 3))))
        return ad.clamp(probs, self.CLAMP, 1.0 - self.CLAMP)


def build_generator(cfg: ModelConfig, seed: int = 0) -> GSGN:
    return GSGN(cfg, np.random.default_rng(seed))


def count_parameters(cfg: ModelConfig) -> int:
    """Exact number of learnable scalars for a model built from cfg."""
    return build_generator(cfg).parameter_count()
