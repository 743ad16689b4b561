"""Image <-> latent codecs.

``IdentityCodec`` is exact (latent == image) and exists so pipeline identities
can be checked bit-for-bit. ``ToyCodec`` is an untrained strided-conv encoder
and transposed-conv decoder with seeded weights that reproduces LDM latent
shapes (factor 8, 4 channels by default); it makes no claim about fidelity.
"""
import math

import torch
from torch import nn
import torch.nn.functional as F

from .errors import ConfigError, ShapeError


def _check_image(x, factor):
    x = torch.as_tensor(x)
    if x.dim() != 3 or x.shape[0] != 3:
        raise ShapeError(f"expected a (3, H, W) image, got shape {tuple(x.shape)}")
    if x.shape[1] % factor or x.shape[2] % factor:
        raise ShapeError(f"image size {tuple(x.shape[1:])} not divisible by factor {factor}")
    return x


class IdentityCodec:
    factor = 1
    latent_channels = 3

    def encode(self, x):
        return _check_image(x, 1).clone()

    def decode(self, z):
        z = torch.as_tensor(z)
        if z.dim() != 3 or z.shape[0] != 3:
            raise ShapeError(f"identity codec expects a (3, H, W) latent, got {tuple(z.shape)}")
        return z.clone()

    def state_dict(self):
        return {}


class ToyCodec(nn.Module):
    def __init__(self, factor=8, latent_channels=4, hidden=16, seed=0, weight_std=0.02):
        super().__init__()
        n = int(round(math.log2(factor))) if factor >= 1 else -1
        if factor < 1 or 2 ** n != factor:
            raise ConfigError(f"codec factor must be a power of two, got {factor}")
        if latent_channels < 1 or hidden < 1:
            raise ConfigError("codec channel counts must be positive")
        self.factor = factor
        self.latent_channels = latent_channels

        enc = [3] + [hidden] * max(n - 1, 0) + [latent_channels]
        dec = [latent_channels] + [hidden] * max(n - 1, 0) + [3]
        if n == 0:
            self.enc = nn.ModuleList([nn.Conv2d(3, latent_channels, 3, padding=1)])
            self.dec = nn.ModuleList([nn.Conv2d(latent_channels, 3, 3, padding=1)])
        else:
            self.enc = nn.ModuleList(
                nn.Conv2d(a, b, 4, stride=2, padding=1) for a, b in zip(enc, enc[1:]))
            self.dec = nn.ModuleList(
                nn.ConvTranspose2d(a, b, 4, stride=2, padding=1) for a, b in zip(dec, dec[1:]))
        self.to(torch.float64)
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for p in self.parameters():
                p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * weight_std)
        self.requires_grad_(False)

    @torch.no_grad()
    def encode(self, x):
        h = _check_image(x, self.factor).to(torch.float64)[None] * 2.0 - 1.0
        for i, conv in enumerate(self.enc):
            h = conv(h)
            if i < len(self.enc) - 1:
                h = F.silu(h)
        return h[0]

    @torch.no_grad()
    def decode(self, z):
        z = torch.as_tensor(z, dtype=torch.float64)
        if z.dim() != 3 or z.shape[0] != self.latent_channels:
            raise ShapeError(
                f"expected a ({self.latent_channels}, h, w) latent, got {tuple(z.shape)}")
        h = z[None]
        for i, conv in enumerate(self.dec):
            h = conv(h)
            if i < len(self.dec) - 1:
                h = F.silu(h)
        return (h[0] * 0.5 + 0.5).clamp(0.0, 1.0)


def make_codec(kind="identity", **kwargs):
    if kind == "identity":
        return IdentityCodec()
    if kind == "toy":
        return ToyCodec(**kwargs)
    raise ConfigError(f"unknown codec {kind!r} (expected identity or toy)")
