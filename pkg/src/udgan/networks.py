"""Encoders, feature-swap generator and patch discriminator."""
from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig, TrainConfig
from .errors import ConfigError


class Backbone(nn.Module):
    """Pluggable re-identification trunk.

    Subclasses provide ``trunk`` (shared early blocks, image -> feature map)
    and ``tail`` (the last two blocks, feature map -> feature map), and set
    ``out_channels`` to the channel count of ``tail``'s output. The identity
    head pools ``tail``; the content head pools a copy of it.
    """

    trunk: nn.Module
    tail: nn.Module
    out_channels: int


def _conv_stage(c_in, c_out, pool=True):
    layers = [
        nn.Conv2d(c_in, c_out, 3, padding=1, bias=False),
        nn.BatchNorm2d(c_out),
        nn.ReLU(inplace=True),
        nn.Conv2d(c_out, c_out, 3, padding=1, bias=False),
        nn.BatchNorm2d(c_out),
        nn.ReLU(inplace=True),
    ]
    if pool:
        layers.append(nn.MaxPool2d(2))
    return nn.Sequential(*layers)


class TinyTrunk(Backbone):
    """Three small conv stages; the first is shared, the last two form the tail."""

    def __init__(self, channels: Sequence[int] = (32, 64, 128)):
        super().__init__()
        c1, c2, c3 = channels
        self.trunk = _conv_stage(3, c1)
        self.tail = nn.Sequential(_conv_stage(c1, c2), _conv_stage(c2, c3, pool=False))
        self.out_channels = c3


BACKBONES: Dict[str, Callable[[ModelConfig], Backbone]] = {
    "tiny": lambda cfg: TinyTrunk(cfg.trunk_channels),
}


def register_backbone(name: str, factory: Callable[[ModelConfig], Backbone]):
    BACKBONES[name] = factory


class IdentityHead(nn.Module):
    def __init__(self, tail: nn.Module, in_channels: int, dim: int):
        super().__init__()
        self.tail = tail
        self.fc = nn.Linear(in_channels, dim, bias=False)
        self.bn = nn.BatchNorm1d(dim)

    def forward(self, fmap):
        h = F.adaptive_avg_pool2d(self.tail(fmap), 1).flatten(1)
        return self.bn(self.fc(h))


class ContentHead(nn.Module):
    """Duplicated tail + pooling + two linear maps to (mu, logvar)."""

    def __init__(self, tail: nn.Module, in_channels: int, dim: int):
        super().__init__()
        self.tail = tail
        self.fc_mu = nn.Linear(in_channels, dim)
        self.fc_logvar = nn.Linear(in_channels, dim)

    def forward(self, fmap):
        h = F.adaptive_avg_pool2d(self.tail(fmap), 1).flatten(1)
        return self.fc_mu(h), self.fc_logvar(h)


class Generator(nn.Module):
    """Projects ``[v_id, v_c]`` to a small map and upsamples it ``blocks`` times."""

    def __init__(self, image_size, dim=512, blocks=6, base_channels=512, dropout=0.5,
                 slope=0.2, mean=(0.5, 0.5, 0.5), std=(0.5, 0.5, 0.5)):
        super().__init__()
        h, w = image_size
        f = 2 ** blocks
        if blocks < 1 or h % f or w % f:
            raise ConfigError(f"image size {h}x{w} is not divisible by 2**{blocks}={f}")
        self.image_size = (h, w)
        self.dim = dim
        self.init_shape = (base_channels, h // f, w // f)
        self.fuse = nn.Linear(2 * dim, base_channels * (h // f) * (w // f))
        layers = []
        c = base_channels
        for _ in range(blocks):
            c_out = max(c // 2, 32)
            layers += [
                nn.ConvTranspose2d(c, c_out, 4, stride=2, padding=1, bias=False),
                nn.BatchNorm2d(c_out),
                nn.LeakyReLU(slope, inplace=True),
                nn.Dropout(dropout),
            ]
            c = c_out
        self.blocks = nn.Sequential(*layers)
        self.to_rgb = nn.Conv2d(c, 3, 3, padding=1)
        m = torch.tensor(mean).view(1, 3, 1, 1)
        s = torch.tensor(std).view(1, 3, 1, 1)
        # tanh in [-1, 1] -> pixel in [0, 1] -> normalized
        self.register_buffer("out_scale", 0.5 / s)
        self.register_buffer("out_shift", (0.5 - m) / s)

    def forward(self, v_id, v_c):
        if v_id.shape != v_c.shape or v_id.dim() != 2 or v_id.shape[1] != self.dim:
            raise ValueError(f"expected two [N, {self.dim}] codes, got "
                             f"{tuple(v_id.shape)} and {tuple(v_c.shape)}")
        x = self.fuse(torch.cat([v_id, v_c], dim=1)).view(-1, *self.init_shape)
        x = torch.tanh(self.to_rgb(self.blocks(x)))
        return x * self.out_scale + self.out_shift


class Discriminator(nn.Module):
    """Strided conv blocks with instance norm, then a 1-channel patch-logit map."""

    def __init__(self, image_size, blocks=7, base_channels=64, slope=0.2):
        super().__init__()
        h, w = image_size
        layers = []
        c_in, c = 3, base_channels
        for i in range(blocks):
            h, w = h // 2, w // 2
            if h * w <= 1:
                raise ConfigError(
                    f"{blocks} discriminator blocks reduce {image_size[0]}x{image_size[1]} "
                    f"to {h}x{w}; the patch map needs more than one location")
            layers += [
                nn.Conv2d(c_in, c, 4, stride=2, padding=1),
                nn.InstanceNorm2d(c, affine=True),
                nn.LeakyReLU(slope, inplace=True),
            ]
            c_in, c = c, min(c * 2, 512)
        self.blocks = nn.Sequential(*layers)
        self.head = nn.Conv2d(c_in, 1, 3, padding=1)
        self.patch_shape = (h, w)

    def forward(self, x):
        return self.head(self.blocks(x))


@dataclass
class GeneratedQuad:
    """``x[i][j]`` carries the identity of input i and the content of input j."""
    x11: torch.Tensor
    x12: torch.Tensor
    x21: torch.Tensor
    x22: torch.Tensor

    def __getitem__(self, ij):
        i, j = ij
        return getattr(self, f"x{i}{j}")

    def items(self):
        for i in (1, 2):
            for j in (1, 2):
                yield (i, j), self[i, j]

    def stack(self):
        return torch.cat([self.x11, self.x12, self.x21, self.x22], dim=0)


class UDGANNet(nn.Module):
    """All trainable parts: shared trunk, identity/content heads, classifier, G and D."""

    def __init__(self, config: TrainConfig, num_classes: int = 0,
                 backbone: Optional[Backbone] = None):
        super().__init__()
        mc = config.model
        if backbone is None:
            if mc.backbone not in BACKBONES:
                raise ConfigError(f"unknown backbone {mc.backbone!r}; known: {sorted(BACKBONES)}")
            backbone = BACKBONES[mc.backbone](mc)
        self.image_size = tuple(config.image_size)
        self.dim = mc.latent_dim
        self.trunk = backbone.trunk
        self.identity_head = IdentityHead(backbone.tail, backbone.out_channels, mc.latent_dim)
        self.content_head = ContentHead(copy.deepcopy(backbone.tail), backbone.out_channels,
                                        mc.latent_dim)
        self.classifier = nn.Linear(mc.latent_dim, num_classes) if num_classes else None
        self.generator = Generator(config.image_size, mc.latent_dim, mc.gen_blocks,
                                   mc.gen_base_channels, mc.gen_dropout, mc.leaky_slope,
                                   config.norm_mean, config.norm_std)
        self.discriminator = Discriminator(config.image_size, mc.disc_blocks,
                                           mc.disc_base_channels, mc.leaky_slope)

    @property
    def num_classes(self):
        return 0 if self.classifier is None else self.classifier.out_features

    def set_classifier(self, num_classes: int):
        self.classifier = nn.Linear(self.dim, num_classes)

    def identity_modules(self):
        mods = [self.trunk, self.identity_head]
        if self.classifier is not None:
            mods.append(self.classifier)
        return mods

    def duplicate_tail(self):
        """Re-initialise the content tail from the (trained) identity tail."""
        self.content_head.tail.load_state_dict(self.identity_head.tail.state_dict())

    def check_images(self, images):
        if images.dim() != 4 or images.shape[1] != 3 or tuple(images.shape[2:]) != self.image_size:
            raise ValueError(f"expected images of shape [N, 3, {self.image_size[0]}, "
                             f"{self.image_size[1]}], got {tuple(images.shape)}")


def encode_identity(net: UDGANNet, images: torch.Tensor) -> torch.Tensor:
    net.check_images(images)
    return net.identity_head(net.trunk(images))


def reparameterize(mu, logvar, noise):
    return mu + torch.exp(0.5 * logvar) * noise


def encode_content(net: UDGANNet, images: torch.Tensor, noise: Optional[torch.Tensor] = None):
    """Return ``(mu, logvar, v_c)``; fresh standard-normal noise when ``noise`` is None."""
    net.check_images(images)
    mu, logvar = net.content_head(net.trunk(images))
    if noise is None:
        noise = torch.randn_like(mu)
    elif noise.shape != mu.shape:
        raise ValueError(f"noise shape {tuple(noise.shape)} != {tuple(mu.shape)}")
    return mu, logvar, reparameterize(mu, logvar, noise)


def encode(net: UDGANNet, images: torch.Tensor, noise=None, identity_grad=True):
    """Identity code and content posterior from one shared-trunk pass."""
    net.check_images(images)
    fmap = net.trunk(images)
    if identity_grad:
        v_id = net.identity_head(fmap)
    else:
        with torch.no_grad():
            v_id = net.identity_head(fmap)
    mu, logvar = net.content_head(fmap)
    if noise is None:
        noise = torch.randn_like(mu)
    return v_id, mu, logvar, reparameterize(mu, logvar, noise)


def generate(net: UDGANNet, v_id, v_c) -> torch.Tensor:
    return net.generator(v_id, v_c)


NoiseSpec = Union[None, torch.Tensor, Tuple[torch.Tensor, torch.Tensor]]


@dataclass
class SwapResult:
    quad: GeneratedQuad
    v_id: Tuple[torch.Tensor, torch.Tensor]
    mu: Tuple[torch.Tensor, torch.Tensor]
    logvar: Tuple[torch.Tensor, torch.Tensor]


def swap_forward(net: UDGANNet, x1, x2, noise: NoiseSpec = None, identity_grad=True) -> SwapResult:
    """Encode both images in one batch and decode all four identity/content swaps.

    ``noise`` may be None (independent fresh draws), one ``[N, d]`` tensor
    shared by both inputs, or a pair of tensors.
    """
    if x1.shape != x2.shape:
        raise ValueError(f"pair images differ in shape: {tuple(x1.shape)} vs {tuple(x2.shape)}")
    n = x1.shape[0]
    if noise is None:
        eps = None
    elif isinstance(noise, torch.Tensor):
        eps = torch.cat([noise, noise], dim=0)
    else:
        eps = torch.cat(list(noise), dim=0)
    v_id, mu, logvar, v_c = encode(net, torch.cat([x1, x2], dim=0), eps, identity_grad)
    id1, id2 = v_id[:n], v_id[n:]
    c1, c2 = v_c[:n], v_c[n:]
    out = net.generator(torch.cat([id1, id1, id2, id2]), torch.cat([c1, c2, c1, c2]))
    quad = GeneratedQuad(*out.split(n, dim=0))
    return SwapResult(quad, (id1, id2), (mu[:n], mu[n:]), (logvar[:n], logvar[n:]))


def swap_generate(net: UDGANNet, x1, x2, noise: NoiseSpec = None) -> GeneratedQuad:
    return swap_forward(net, x1, x2, noise).quad


def discriminate(net: UDGANNet, images: torch.Tensor):
    """Patch logits ``[N, 1, h', w']`` and their per-image spatial mean ``[N]``."""
    net.check_images(images)
    patches = net.discriminator(images)
    return patches, patches.mean(dim=(1, 2, 3))
