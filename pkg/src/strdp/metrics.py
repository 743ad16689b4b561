"""Evaluation metrics: Gram style loss, feature content loss, PSNR, SSIM.

The feature extractor is a fixed, seeded, *untrained* conv stack standing in
for VGG, so loss magnitudes are only comparable within this package.
"""
import math
from typing import List, Sequence

import torch
from torch import nn
import torch.nn.functional as F

from .errors import ConfigError, ShapeError

PSNR_CAP = 100.0


class FeatureExtractor(nn.Module):
    """Conv + ReLU stack; every stage is a tap, each later stage at half resolution."""

    def __init__(self, channels: Sequence[int] = (8, 16, 32), content_tap: int = 1,
                 seed: int = 0, weight_std: float = 0.1, in_channels: int = 3):
        super().__init__()
        if not channels:
            raise ConfigError("extractor needs at least one tap")
        if not 0 <= content_tap < len(channels):
            raise ConfigError(f"content_tap {content_tap} out of range")
        self.content_tap = content_tap
        chans = [in_channels, *channels]
        self.convs = nn.ModuleList(
            nn.Conv2d(a, b, 3, stride=1 if i == 0 else 2, padding=1)
            for i, (a, b) in enumerate(zip(chans, chans[1:])))
        self.to(torch.float64)
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for p in self.parameters():
                p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * weight_std)
        self.requires_grad_(False)

    @torch.no_grad()
    def features(self, x) -> List[torch.Tensor]:
        h = torch.as_tensor(x, dtype=torch.float64)[None]
        taps = []
        for conv in self.convs:
            h = F.relu(conv(h))
            taps.append(h[0])
        return taps


def _check_pair(x, y):
    x = torch.as_tensor(x, dtype=torch.float64)
    y = torch.as_tensor(y, dtype=torch.float64)
    if x.shape != y.shape:
        raise ShapeError(f"size mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    return x, y


def gram(f: torch.Tensor) -> torch.Tensor:
    flat = f.reshape(f.shape[0], -1)
    return flat @ flat.T / flat.shape[1]


def gram_style_loss(x, y, fe: FeatureExtractor) -> float:
    x, y = _check_pair(x, y)
    losses = [((gram(a) - gram(b)) ** 2).sum() for a, b in zip(fe.features(x), fe.features(y))]
    return float(torch.stack(losses).mean())


def content_loss(x, y, fe: FeatureExtractor) -> float:
    x, y = _check_pair(x, y)
    a = fe.features(x)[fe.content_tap]
    b = fe.features(y)[fe.content_tap]
    return float(((a - b) ** 2).mean())


def psnr(x, y, max_val: float = 1.0) -> float:
    x, y = _check_pair(x, y)
    mse = float(((x - y) ** 2).mean())
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(max_val ** 2 / mse))


def ssim(x, y, data_range: float = 1.0, window: int = 8) -> float:
    """Mean SSIM over non-overlapping ``window`` x ``window`` tiles of the channel-mean image."""
    x, y = _check_pair(x, y)
    if x.dim() == 3:
        x, y = x.mean(dim=0), y.mean(dim=0)
    if x.shape[0] < window or x.shape[1] < window:
        raise ShapeError(f"image smaller than the {window}x{window} SSIM window")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    # tiles of shape (n_tiles, window*window); a partial trailing border is dropped
    tx = x.unfold(0, window, window).unfold(1, window, window).reshape(-1, window * window)
    ty = y.unfold(0, window, window).unfold(1, window, window).reshape(-1, window * window)
    mx, my = tx.mean(dim=1), ty.mean(dim=1)
    vx = ((tx - mx[:, None]) ** 2).mean(dim=1)
    vy = ((ty - my[:, None]) ** 2).mean(dim=1)
    cov = ((tx - mx[:, None]) * (ty - my[:, None])).mean(dim=1)
    s = ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2))
    return float(s.mean())
