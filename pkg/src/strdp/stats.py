"""Channel statistics and the two statistic-transfer functions (AdaIN, WCT).

Feature maps are rank-3 tensors laid out as (channels, height, width).
Statistics always use the population (divide-by-N) convention and are
computed in at least float32, whatever the storage dtype.
"""
from typing import NamedTuple

import torch

from .errors import InvalidInputError, ShapeError

EPS_STD = 1e-5
EPS_EIG = 1e-5


class ChannelStats(NamedTuple):
    mean: torch.Tensor
    std: torch.Tensor


def _as_feature_map(x) -> torch.Tensor:
    x = torch.as_tensor(x)
    if x.dim() != 3:
        raise ShapeError(f"expected a (C, H, W) feature map, got shape {tuple(x.shape)}")
    if x.shape[0] < 1 or x.shape[1] * x.shape[2] < 1:
        raise ShapeError(f"empty feature map of shape {tuple(x.shape)}")
    if not x.is_floating_point() or x.dtype in (torch.float16, torch.bfloat16):
        x = x.to(torch.float32)
    return x


def _check_channels(x, y):
    if x.shape[0] != y.shape[0]:
        raise ShapeError(f"channel mismatch: {x.shape[0]} vs {y.shape[0]}")


def _stats(x):
    var, mean = torch.var_mean(x.reshape(x.shape[0], -1), dim=1, unbiased=False)
    return mean, var.sqrt()


def channel_stats(x) -> ChannelStats:
    """Per-channel mean and population standard deviation of a (C, H, W) map."""
    x = _as_feature_map(x)
    mean, std = _stats(x)
    if not (torch.isfinite(mean).all() and torch.isfinite(std).all()):
        raise InvalidInputError("feature map contains non-finite values")
    return ChannelStats(mean, std)


def adain_with_stats(x, style: ChannelStats, eps: float = EPS_STD) -> torch.Tensor:
    """AdaIN against precomputed style statistics."""
    x = _as_feature_map(x)
    if style.mean.shape[0] != x.shape[0]:
        raise ShapeError(f"channel mismatch: {x.shape[0]} vs {style.mean.shape[0]}")
    mu, sigma = _stats(x)
    scale = style.std.to(x.dtype) / sigma.clamp_min(eps)
    shift = style.mean.to(x.dtype) - mu * scale
    return torch.addcmul(shift[:, None, None], x, scale[:, None, None])


def adain(x, y, eps: float = EPS_STD) -> torch.Tensor:
    """Replace the channel-wise mean/std of ``x`` with those of ``y``.

    The output keeps the spatial size of ``x``; ``y`` may be any spatial size.
    Content channels whose std is below ``eps`` are divided by ``eps`` instead,
    so a constant channel maps onto the style mean.
    """
    x = _as_feature_map(x)
    y = _as_feature_map(y)
    _check_channels(x, y)
    return adain_with_stats(x, channel_stats(y), eps)


def _covariance(flat, mean):
    centered = flat - mean[:, None]
    return centered, centered @ centered.T / flat.shape[1]


def wct(x, y, eps: float = EPS_EIG) -> torch.Tensor:
    """Whitening-coloring transform of ``x`` onto the channel covariance of ``y``.

    Eigenvalues of the content covariance are clamped at ``eps`` before the
    inverse square root; the style covariance is used as-is (negative round-off
    eigenvalues are floored at zero).
    """
    x = _as_feature_map(x)
    y = _as_feature_map(y)
    _check_channels(x, y)
    dtype = x.dtype
    xf = x.reshape(x.shape[0], -1).to(torch.float64)
    yf = y.reshape(y.shape[0], -1).to(torch.float64)
    mu_x, mu_y = xf.mean(dim=1), yf.mean(dim=1)

    xc, cov_x = _covariance(xf, mu_x)
    _, cov_y = _covariance(yf, mu_y)

    evals_x, evecs_x = torch.linalg.eigh(cov_x)
    whiten = evecs_x @ torch.diag(evals_x.clamp_min(eps).rsqrt()) @ evecs_x.T
    evals_y, evecs_y = torch.linalg.eigh(cov_y)
    color = evecs_y @ torch.diag(evals_y.clamp_min(0.0).sqrt()) @ evecs_y.T

    out = color @ (whiten @ xc) + mu_y[:, None]
    return out.reshape(x.shape).to(dtype)
