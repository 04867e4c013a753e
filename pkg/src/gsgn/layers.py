"""Neural building blocks: shuffle, convolution, normalization, gating.

Everything is built from `autodiff` primitives, so analytic gradients come
from the graph and are certified against finite differences in the tests.
Modules hold named Parameters; weight init is seeded through an explicit
numpy Generator so model construction is reproducible.
"""

from __future__ import annotations

import math
from typing import Iterator, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

LEAKY_SLOPE = 0.2
NORM_EPS = 1e-5


# -- module system -----------------------------------------------------------

class Parameter(Tensor):
    def __init__(self, data):
        super().__init__(np.asarray(data, dtype=np.float32),
                         requires_grad=True)


class Module:
    """Container of Parameters and sub-Modules, discovered by attribute."""

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, val in vars(self).items():
            if isinstance(val, Parameter):
                yield prefix + name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        mine = dict(self.named_parameters())
        missing = set(mine) - set(state)
        extra = set(state) - set(mine)
        if missing or extra:
            raise KeyError(f"state dict mismatch: missing={sorted(missing)} "
                           f"unexpected={sorted(extra)}")
        for name, p in mine.items():
            arr = np.asarray(state[name], dtype=np.float32)
            if arr.shape != p.data.shape:
                raise ShapeError(f"parameter {name}: checkpoint shape "
                                 f"{arr.shape} != model shape {p.data.shape}")
            p.data = arr.copy()


class ModuleList(Module):
    def __init__(self, items=()):
        self._items = list(items)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]

    def append(self, m):
        self._items.append(m)

    def named_parameters(self, prefix: str = ""):
        for i, m in enumerate(self._items):
            yield from m.named_parameters(f"{prefix}{i}.")


def cast_module(module: Module, dtype) -> Module:
    """Convert all parameters in place (float64 for gradient certification)."""
    for p in module.parameters():
        p.data = p.data.astype(dtype)
    return module


def _kaiming_uniform(rng: np.random.Generator, shape, fan_in: int,
                     slope: float = LEAKY_SLOPE) -> np.ndarray:
    gain = math.sqrt(2.0 / (1.0 + slope ** 2))
    bound = gain * math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


# -- shuffle -----------------------------------------------------------------

def shuffle(x: Tensor) -> Tensor:
    """Fold each 2x2 spatial block into 4 channels.

    (N,C,H,W) -> (N,4C,H/2,W/2); spatial offset (dy,dx) of channel c lands
    on output channel c*4 + 2*dy + dx.
    """
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"shuffle needs even H,W, got {h}x{w}")
    t = ad.reshape(x, (n, c, h // 2, 2, w // 2, 2))
    t = ad.transpose(t, (0, 1, 3, 5, 2, 4))
    return ad.reshape(t, (n, c * 4, h // 2, w // 2))


def unshuffle(x: Tensor) -> Tensor:
    """Exact inverse of `shuffle`: (N,4C,H,W) -> (N,C,2H,2W)."""
    n, c4, h, w = x.shape
    if c4 % 4:
        raise ShapeError(f"unshuffle needs channels divisible by 4, got {c4}")
    c = c4 // 4
    t = ad.reshape(x, (n, c, 2, 2, h, w))
    t = ad.transpose(t, (0, 1, 4, 2, 5, 3))
    return ad.reshape(t, (n, c, h * 2, w * 2))


# -- convolution and affine layers -------------------------------------------

def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor],
           stride: int = 1) -> Tensor:
    """Same-padded cross-correlation: weight is (out, in, kh, kw)."""
    out_ch, in_ch, kh, kw = weight.shape
    if x.shape[1] != in_ch:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels, "
                         f"weight expects {in_ch}")
    n = x.shape[0]
    pad = (kh - 1) // 2
    oh, ow = ad._conv_geometry(x.shape[2], x.shape[3], kh, kw, stride, pad)
    cols = ad.im2col(x, kh, kw, stride, pad)
    wmat = ad.transpose(ad.reshape(weight, (out_ch, in_ch * kh * kw)), (1, 0))
    y = ad.matmul(cols, wmat)
    if bias is not None:
        y = ad.add(y, bias)
    y = ad.reshape(y, (n, oh, ow, out_ch))
    return ad.transpose(y, (0, 3, 1, 2))


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator,
                 kernel: int = 3, stride: int = 1, zero_init: bool = False):
        if kernel % 2 == 0 or kernel < 1:
            raise ShapeError(f"kernel must be odd and positive, got {kernel}")
        self.stride = stride
        fan_in = in_ch * kernel * kernel
        if zero_init:
            w = np.zeros((out_ch, in_ch, kernel, kernel), dtype=np.float32)
        else:
            w = _kaiming_uniform(rng, (out_ch, in_ch, kernel, kernel), fan_in)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_ch, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride)


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map per row: x is (N, in), weight (in, out), bias (out,)."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"fully_connected: input dim {x.shape[-1]} != "
                         f"weight dim {weight.shape[0]}")
    return ad.add(ad.matmul(x, weight), bias)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 zero_init: bool = False):
        if zero_init:
            w = np.zeros((in_dim, out_dim), dtype=np.float32)
        else:
            w = _kaiming_uniform(rng, (in_dim, out_dim), in_dim)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_dim, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return fully_connected(x, self.weight, self.bias)


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    return ad.leaky_relu(x, slope)


# -- normalization -----------------------------------------------------------

def _standardize(x: Tensor, eps: float) -> Tensor:
    # per (sample, channel) spatial standardization, population variance
    mu = ad.mean_(x, (2, 3), keepdims=True)
    centered = ad.sub(x, mu)
    var = ad.mean_(ad.mul(centered, centered), (2, 3), keepdims=True)
    return ad.div(centered, ad.sqrt(ad.add(var, eps)))


def adaptive_instance_norm(x: Tensor, scale: Tensor, shift: Tensor,
                           eps: float = NORM_EPS) -> Tensor:
    """Standardize each (sample, channel) plane, then apply scale/shift.

    scale/shift are (C,) for shared conditioning or (N, C) for per-sample
    conditioning from a style head.
    """
    n, c = x.shape[0], x.shape[1]
    for name, t in (("scale", scale), ("shift", shift)):
        if t.shape not in ((c,), (n, c)):
            raise ShapeError(f"adaptive_instance_norm: {name} shape "
                             f"{t.shape} incompatible with {c} channels")
    normed = _standardize(x, eps)
    s = ad.reshape(scale, (1, c, 1, 1) if scale.shape == (c,) else (n, c, 1, 1))
    b = ad.reshape(shift, (1, c, 1, 1) if shift.shape == (c,) else (n, c, 1, 1))
    return ad.add(ad.mul(normed, s), b)


class InstanceNorm2d(Module):
    """Instance norm with learned per-channel scale/shift, init (1, 0)."""

    def __init__(self, channels: int, eps: float = NORM_EPS):
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, dtype=np.float32))
        self.beta = Parameter(np.zeros(channels, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return adaptive_instance_norm(x, self.gamma, self.beta, self.eps)


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor,
                  eps: float = NORM_EPS) -> Tensor:
    return adaptive_instance_norm(x, gamma, beta, eps)


class NormSite(Module):
    """One normalization point in the trunk.

    mode "none": identity. mode "instance": learned affine. mode
    "adaptive": scale/shift are supplied per forward pass by the
    conditioning heads; the site only knows its channel count.
    """

    def __init__(self, channels: int, mode: str, eps: float = NORM_EPS):
        if mode not in ("none", "instance", "adaptive"):
            raise ValueError(f"unknown norm mode {mode!r}")
        self.channels = channels
        self.mode = mode
        self.eps = eps
        if mode == "instance":
            self.affine = InstanceNorm2d(channels, eps)

    def __call__(self, x: Tensor, cond=None) -> Tensor:
        if self.mode == "none":
            return x
        if self.mode == "instance":
            return self.affine(x)
        if cond is None:
            raise ValueError("adaptive norm site called without conditioning")
        scale, shift = cond
        return adaptive_instance_norm(x, scale, shift, self.eps)


# -- composite blocks --------------------------------------------------------

class GlobalFeatureGate(Module):
    """Channel gate from globally pooled features.

    g = sigmoid(fc2(lrelu(fc1(mean over space)))); the input is scaled
    channel-wise by g. Pooling removes the spatial dimensions, so the gate
    works at any resolution.
    """

    def __init__(self, channels: int, rng: np.random.Generator,
                 reduction: int = 1):
        hidden = max(1, channels // reduction)
        self.fc1 = Linear(channels, hidden, rng)
        self.fc2 = Linear(hidden, channels, rng)

    def gate_values(self, x: Tensor) -> Tensor:
        pooled = ad.mean_(x, (2, 3))                     # (N, C)
        return ad.sigmoid(self.fc2(leaky_relu(self.fc1(pooled))))

    def __call__(self, x: Tensor) -> Tensor:
        n, c = x.shape[0], x.shape[1]
        g = self.gate_values(x)
        return ad.mul(x, ad.reshape(g, (n, c, 1, 1)))


class ResidualBlock(Module):
    """x + F(x) with F = conv -> lrelu -> norm -> conv -> norm."""

    def __init__(self, channels: int, norm_mode: str,
                 rng: np.random.Generator):
        self.conv1 = Conv2d(channels, channels, rng)
        self.norm1 = NormSite(channels, norm_mode)
        self.conv2 = Conv2d(channels, channels, rng)
        self.norm2 = NormSite(channels, norm_mode)

    def norm_sites(self):
        return [self.norm1, self.norm2]

    def __call__(self, x: Tensor, conds=None) -> Tensor:
        c1, c2 = conds if conds is not None else (None, None)
        t = self.norm1(leaky_relu(self.conv1(x)), c1)
        t = self.norm2(self.conv2(t), c2)
        return ad.add(x, t)
