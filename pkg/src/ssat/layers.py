"""Encoders, feature-fusion convs, SPADE decoder and patch discriminators.

Layer geometry follows the published architecture tables; every channel
count is derived from :class:`NetWidths` so the same code builds the
full-size network (``base=64``) and the desk-scale one (``base=16``).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .tensor import (
    Parameter,
    ShapeError,
    Tensor,
    avg_pool,
    concat,
    conv2d,
    conv2d_upsampled,
    instance_norm,
    leaky_relu,
    relu,
    split,
    tanh,
    upsample_nearest,
)

INIT_STD = 0.02
SLOPE = 0.2
EPS = 1e-5


@dataclass(frozen=True)
class NetWidths:
    """Channel bookkeeping for one network instance.

    ``base`` is the first content/makeup encoder width (64 in the full
    model) and ``semantic`` the first semantic encoder width (32).
    """

    base: int = 16
    semantic: int = 8
    n_classes: int = 8
    spade_hidden: int | None = None
    disc_scales: int = 2

    def __post_init__(self):
        for name in ("base", "semantic", "n_classes", "disc_scales"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")

    @classmethod
    def paper(cls) -> NetWidths:
        return cls(base=64, semantic=32, n_classes=18)

    @classmethod
    def desk(cls) -> NetWidths:
        return cls(base=16, semantic=8, n_classes=8)

    @property
    def encoder(self) -> tuple[int, int, int]:
        b = self.base
        return (b, 2 * b, 4 * b)

    @property
    def semantic_encoder(self) -> tuple[int, int, int]:
        s = self.semantic
        return (s, 2 * s, 4 * s)

    @property
    def ff_in(self) -> int:
        return self.encoder[2] + self.semantic_encoder[2]

    @property
    def ff(self) -> tuple[int, int]:
        return (8 * self.base, 8 * self.base)

    @property
    def fused(self) -> int:
        return sum(self.encoder) + self.semantic_encoder[2] + sum(self.ff)

    @property
    def decoder(self) -> tuple[int, int, int, int]:
        b = self.base
        return (4 * b, 2 * b, b, b)

    @property
    def hidden(self) -> int:
        return self.spade_hidden or self.base

    @property
    def disc(self) -> tuple[int, int, int, int]:
        b = self.base
        return (b, 2 * b, 4 * b, 4 * b)

    def to_dict(self) -> dict:
        return asdict(self)


class Module:
    """Container whose trainable tensors are discovered from attributes."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                out[name] = val
            elif isinstance(val, Module):
                out.update(val.named_parameters(name + "."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{name}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag


def _param(rng: np.random.Generator, shape, std: float = INIT_STD) -> Parameter:
    data = np.zeros(shape, np.float32) if std == 0 else rng.normal(0.0, std, size=shape).astype(np.float32)
    return Parameter(data)


class Conv(Module):
    def __init__(self, cin, cout, kernel, padding, stride, rng, bias=True):
        self.cin, self.cout = cin, cout
        self.kernel, self.padding, self.stride = kernel, padding, stride
        self.weight = _param(rng, (cout, cin, kernel, kernel))
        self.bias = _param(rng, (cout,), std=0) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, padding=self.padding, stride=self.stride)


class ConvBlock(Module):
    """Conv, optional instance norm, optional leaky ReLU."""

    def __init__(self, cin, cout, kernel, padding, stride, rng, norm=True, slope: float | None = SLOPE):
        self.conv = Conv(cin, cout, kernel, padding, stride, rng, bias=not norm)
        self.norm = norm
        self.slope = slope

    def __call__(self, x: Tensor) -> Tensor:
        x = self.conv(x)
        if self.norm:
            x = instance_norm(x, EPS)
        if self.slope is not None:
            x = leaky_relu(x, self.slope)
        return x


# (kernel, padding, stride) of the three encoder rows
ENCODER_GEOMETRY = ((7, 3, 1), (3, 1, 2), (3, 1, 2))


class EncoderStack(Module):
    """Three conv blocks at strides 1, 2, 2; output is 1/4 resolution."""

    def __init__(self, cin: int, widths, role: str, rng):
        if role not in ("content", "makeup", "semantic"):
            raise ValueError(f"unknown encoder role {role!r}")
        self.role = role
        self.cin = cin
        chans = (cin, *widths)
        self.blocks = [
            ConvBlock(chans[i], chans[i + 1], k, p, s, rng) for i, (k, p, s) in enumerate(ENCODER_GEOMETRY)
        ]

    def __call__(self, x: Tensor) -> tuple[Tensor, list[Tensor]]:
        if x.ndim != 3 or x.shape[0] != self.cin:
            raise ShapeError(f"{self.role} encoder expects [{self.cin},H,W], got {x.shape}")
        if x.shape[1] % 4 or x.shape[2] % 4:
            raise ShapeError(f"spatial size {x.shape[1:]} must be divisible by 4")
        pyramid = []
        for block in self.blocks:
            x = block(x)
            pyramid.append(x)
        return x, pyramid


def encode_content_or_makeup(image: Tensor, stack: EncoderStack) -> tuple[Tensor, list[Tensor]]:
    return stack(image)


def check_one_hot(parsing: np.ndarray, n_classes: int | None = None) -> None:
    if parsing.ndim != 3:
        raise ShapeError(f"parsing must be [L,H,W], got {parsing.shape}")
    if n_classes is not None and parsing.shape[0] != n_classes:
        raise ShapeError(f"parsing has {parsing.shape[0]} classes, expected {n_classes}")
    if not (np.isin(parsing, (0.0, 1.0)).all() and np.all(parsing.sum(axis=0) == 1)):
        raise ValueError("parsing map is not one-hot per pixel")


def encode_semantic(parsing: Tensor, stack: EncoderStack) -> Tensor:
    check_one_hot(parsing.data, stack.cin)
    return stack(parsing)[0]


class Spade(Module):
    """Instance norm followed by per-pixel ``(1 + gamma, beta)`` predicted from a map.

    The modulation branch is one shared 3x3 conv with ReLU, then a single
    3x3 conv whose output channels are split into gamma and beta.
    """

    def __init__(self, channels: int, mod_channels: int, hidden: int, rng):
        self.channels = channels
        self.shared = Conv(mod_channels, hidden, 3, 1, 1, rng)
        self.gamma_beta = Conv(hidden, 2 * channels, 3, 1, 1, rng)

    def hidden(self, mod: Tensor) -> Tensor:
        return relu(self.shared(mod))

    def modulate(self, x: Tensor, hidden: Tensor) -> Tensor:
        if hidden.shape[1:] != x.shape[1:]:
            raise ShapeError(f"modulation map {hidden.shape} does not match activations {x.shape}")
        gamma, beta = split(self.gamma_beta(hidden), [self.channels, self.channels])
        return instance_norm(x, EPS) * (1.0 + gamma) + beta

    def __call__(self, x: Tensor, mod: Tensor) -> Tensor:
        return self.modulate(x, self.hidden(mod))


def shared_hidden(spades: list[Spade], mod: Tensor, factor: int = 1) -> list[Tensor]:
    """Evaluate several SPADE shared convs reading the same map as one conv.

    Equal to ``spade.hidden(upsample_nearest(mod, factor))`` for each spade;
    batching the output channels shares one pass over the input, and the
    upsampling is folded into the conv.
    """
    if len(spades) == 1 and factor == 1:
        return [spades[0].hidden(mod)]
    weight = concat([sp.shared.weight for sp in spades], axis=0) if len(spades) > 1 else spades[0].shared.weight
    bias = concat([sp.shared.bias for sp in spades], axis=0) if len(spades) > 1 else spades[0].shared.bias
    h = relu(conv2d_upsampled(mod, weight, bias, factor))
    return split(h, [sp.shared.cout for sp in spades]) if len(spades) > 1 else [h]


class SpadeResBlock(Module):
    """Two SPADE-modulated 3x3 convs plus a (1x1 conv when widths differ) skip."""

    def __init__(self, fin: int, fout: int, mod_channels: int, hidden: int, rng):
        fmid = min(fin, fout)
        self.fin, self.fout = fin, fout
        self.norm0 = Spade(fin, mod_channels, hidden, rng)
        self.conv0 = Conv(fin, fmid, 3, 1, 1, rng)
        self.norm1 = Spade(fmid, mod_channels, hidden, rng)
        self.conv1 = Conv(fmid, fout, 3, 1, 1, rng)
        self.skip = Conv(fin, fout, 1, 0, 1, rng, bias=False) if fin != fout else None

    @property
    def spades(self) -> list[Spade]:
        return [self.norm0, self.norm1]

    def forward_hidden(self, x: Tensor, h0: Tensor, h1: Tensor) -> Tensor:
        dx = self.conv0(leaky_relu(self.norm0.modulate(x, h0), SLOPE))
        dx = self.conv1(leaky_relu(self.norm1.modulate(dx, h1), SLOPE))
        shortcut = self.skip(x) if self.skip is not None else x
        return shortcut + dx

    def __call__(self, x: Tensor, mod: Tensor) -> Tensor:
        return self.forward_hidden(x, *shared_hidden(self.spades, mod))


class Decoder(Module):
    """Two upsampling SPADE residual stages, one full-resolution stage, RGB head.

    The makeup map arrives at 1/4 resolution and is nearest-upsampled to
    the resolution of each stage.
    """

    def __init__(self, widths: NetWidths, rng):
        c0, c1, c2, c3 = widths.decoder
        mod = widths.encoder[2]
        self.content_channels = c0
        self.blocks = [
            SpadeResBlock(c0, c1, mod, widths.hidden, rng),
            SpadeResBlock(c1, c2, mod, widths.hidden, rng),
            SpadeResBlock(c2, c3, mod, widths.hidden, rng),
        ]
        self.head = Conv(c3, 3, 7, 3, 1, rng)

    def __call__(self, content: Tensor, makeup: Tensor) -> Tensor:
        return self.stages(content, makeup)[-1]

    def stages(self, content: Tensor, makeup: Tensor) -> list[Tensor]:
        """Outputs of the three residual stages and the RGB head, in order."""
        if content.shape != makeup.shape:
            raise ShapeError(f"content {content.shape} and makeup {makeup.shape} must agree")
        if content.shape[0] != self.content_channels:
            raise ShapeError(f"decoder expects {self.content_channels} channels, got {content.shape[0]}")
        b0, b1, b2 = self.blocks
        h_half = shared_hidden(b0.spades, makeup, 2)
        h_full = shared_hidden(b1.spades + b2.spades, makeup, 4)
        x0 = b0.forward_hidden(upsample_nearest(content, 2), *h_half)
        x1 = b1.forward_hidden(upsample_nearest(x0, 2), *h_full[:2])
        x2 = b2.forward_hidden(x1, *h_full[2:])
        return [x0, x1, x2, tanh(self.head(x2))]


def decode(content: Tensor, warped_makeup: Tensor, decoder: Decoder) -> Tensor:
    return decoder(content, warped_makeup)


class Discriminator(Module):
    """Multi-scale patch discriminator emitting raw (pre-sigmoid) logit maps."""

    def __init__(self, widths: NetWidths, rng):
        self.n_scales = widths.disc_scales
        self.scales = []
        for _ in range(self.n_scales):
            chans = (3, *widths.disc)
            blocks = [
                ConvBlock(chans[i], chans[i + 1], 3, 1, 2, rng, norm=i > 0) for i in range(len(widths.disc))
            ]
            blocks.append(ConvBlock(chans[-1], 1, 3, 1, 1, rng, norm=False, slope=None))
            self.scales.append(_Stack(blocks))

    def __call__(self, image: Tensor) -> list[Tensor]:
        maps = []
        x = image
        for i, stack in enumerate(self.scales):
            if i:
                x = avg_pool(x, 2)
            maps.append(stack(x))
        return maps


class _Stack(Module):
    def __init__(self, blocks):
        self.blocks = blocks

    def __call__(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x


def discriminate(image: Tensor, d: Discriminator) -> list[Tensor]:
    return d(image)
