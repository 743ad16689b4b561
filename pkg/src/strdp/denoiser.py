"""Toy noise-prediction U-Net with per-convolution statistic hooks.

Every spatial convolution output is a *hook site*. A hook is a callable
``hook(site_id, activation) -> activation`` invoked on the (C, H, W)
convolution output before anything downstream consumes it. The style pass
installs a passive capturing hook; the content pass installs an AdaIN (or
WCT) hook, so transferred activations feed the following layers and the
transfer cascades through the whole network.

Hook state lives in per-call closures, never on the module, so one
``Denoiser`` can serve concurrent passes.
"""
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional

import torch
from torch import nn
import torch.nn.functional as F

from .errors import BundleMismatchError, ConfigError, ShapeError
from .stats import ChannelStats, adain_with_stats, channel_stats, wct

Hook = Callable[[str, torch.Tensor], torch.Tensor]


@dataclass(frozen=True)
class DenoiserConfig:
    latent_channels: int = 4
    base_channels: int = 16
    levels: int = 2
    groups: int = 4
    temb_dim: int = 64
    weight_std: float = 0.02

    def level_channels(self):
        return [self.base_channels * 2 ** i for i in range(self.levels)]

    def validate(self):
        for name in ("latent_channels", "base_channels", "levels", "groups", "temb_dim"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"denoiser {name} must be >= 1")
        if self.temb_dim % 2:
            raise ConfigError("temb_dim must be even")
        for ch in self.level_channels():
            if ch % self.groups:
                raise ConfigError(f"{ch} channels not divisible by groups={self.groups}")
        if self.weight_std <= 0:
            raise ConfigError("weight_std must be positive")


class HookSite(NamedTuple):
    site_id: str
    channels: int
    position: int


@dataclass
class StatsBundle:
    """Captured statistics keyed by hook site, in execution order.

    ``features`` additionally keeps the raw activations (needed by WCT).
    """
    stats: Dict[str, ChannelStats] = field(default_factory=dict)
    features: Optional[Dict[str, torch.Tensor]] = None

    def __getitem__(self, site_id):
        return self.stats[site_id]

    def __len__(self):
        return len(self.stats)

    def keys(self):
        return self.stats.keys()


def timestep_embedding(t, dim):
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    args = float(t) * freqs
    return torch.cat([torch.sin(args), torch.cos(args)])[None]


class ResBlock(nn.Module):
    def __init__(self, c_in, c_out, temb_dim, groups):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.temb_proj = nn.Linear(temb_dim, c_out)
        self.norm2 = nn.GroupNorm(groups, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else None

    def forward(self, x, temb, name, site):
        h = site(f"{name}.conv1", self.conv1(F.silu(self.norm1(x))))
        h = h + self.temb_proj(F.silu(temb))[:, :, None, None]
        h = site(f"{name}.conv2", self.conv2(F.silu(self.norm2(h))))
        skip = x if self.skip is None else site(f"{name}.skip", self.skip(x))
        return skip + h


class Denoiser(nn.Module):
    """epsilon_theta: maps (latent, timestep) to predicted noise of the same shape."""

    def __init__(self, config: DenoiserConfig = DenoiserConfig(), seed: int = 0):
        super().__init__()
        config.validate()
        self.config = config
        self.seed = seed
        chs = config.level_channels()
        self.temb = nn.Sequential(
            nn.Linear(config.temb_dim, config.temb_dim), nn.SiLU(),
            nn.Linear(config.temb_dim, config.temb_dim))
        self.conv_in = nn.Conv2d(config.latent_channels, chs[0], 3, padding=1)

        self.down = nn.ModuleList()
        self.downsample = nn.ModuleList()
        prev = chs[0]
        for i, ch in enumerate(chs):
            self.down.append(ResBlock(prev, ch, config.temb_dim, config.groups))
            if i < config.levels - 1:
                self.downsample.append(nn.Conv2d(ch, ch, 3, stride=2, padding=1))
            prev = ch
        self.mid = ResBlock(prev, prev, config.temb_dim, config.groups)

        self.up = nn.ModuleList()
        self.upsample = nn.ModuleList()
        for i, ch in enumerate(chs):
            below = chs[i + 1] if i < config.levels - 1 else ch
            self.up.append(ResBlock(below + ch, ch, config.temb_dim, config.groups))
            if i < config.levels - 1:
                self.upsample.append(nn.Conv2d(below, below, 3, padding=1))

        self.norm_out = nn.GroupNorm(config.groups, chs[0])
        self.conv_out = nn.Conv2d(chs[0], config.latent_channels, 3, padding=1)

        self.to(torch.float64)
        self._init_weights(seed)
        self.requires_grad_(False)
        self.eval()
        self.hook_sites = self._trace_sites()

    def _init_weights(self, seed):
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if ".norm" in name or name.startswith("norm"):
                    continue  # GroupNorm keeps its identity affine
                p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * self.config.weight_std)

    def _trace_sites(self):
        sites = []

        def record(site_id, h):
            sites.append(HookSite(site_id, h.shape[0], len(sites)))
            return h

        side = 2 ** self.config.levels
        self.run(torch.zeros(self.config.latent_channels, side, side, dtype=torch.float64), 0, record)
        return tuple(sites)

    @property
    def site_ids(self) -> List[str]:
        return [s.site_id for s in self.hook_sites]

    def _check_latent(self, z):
        z = torch.as_tensor(z, dtype=torch.float64)
        div = 2 ** (self.config.levels - 1)
        if z.dim() != 3 or z.shape[0] != self.config.latent_channels:
            raise ShapeError(
                f"expected ({self.config.latent_channels}, H, W) latent, got {tuple(z.shape)}")
        if z.shape[1] % div or z.shape[2] % div:
            raise ShapeError(f"latent size {tuple(z.shape[1:])} not divisible by {div}")
        return z

    @torch.no_grad()
    def run(self, z, t, hook: Optional[Hook] = None) -> torch.Tensor:
        """Single forward pass; ``hook`` sees (and may replace) every conv output."""
        z = self._check_latent(z)

        def site(site_id, h):
            if hook is None:
                return h
            return hook(site_id, h[0])[None]

        temb = self.temb(timestep_embedding(t, self.config.temb_dim))
        h = site("conv_in", self.conv_in(z[None]))
        skips = []
        for i, block in enumerate(self.down):
            h = block(h, temb, f"down{i}", site)
            skips.append(h)
            if i < len(self.downsample):
                h = site(f"down{i}.downsample", self.downsample[i](h))
        h = self.mid(h, temb, "mid", site)
        for i in reversed(range(len(self.up))):
            if i < len(self.upsample):
                h = F.interpolate(h, scale_factor=2, mode="nearest")
                h = site(f"up{i}.upsample", self.upsample[i](h))
            h = self.up[i](torch.cat([h, skips[i]], dim=1), temb, f"up{i}", site)
        h = site("conv_out", self.conv_out(F.silu(self.norm_out(h))))
        return h[0]

    def forward(self, z, t):
        return self.run(z, t)

    def forward_plain(self, z, t) -> torch.Tensor:
        return self.run(z, t)

    def forward_capture(self, z_s, t, keep_features: bool = False):
        """Plain pass that records per-site channel statistics (and optionally activations)."""
        bundle = StatsBundle(features={} if keep_features else None)

        def capture(site_id, h):
            bundle.stats[site_id] = channel_stats(h)
            if keep_features:
                bundle.features[site_id] = h.clone()
            return h

        eps = self.run(z_s, t, capture)
        return eps, bundle

    def _require_sites(self, keys):
        expected = self.site_ids
        if list(keys) != expected:
            missing = [s for s in expected if s not in keys]
            extra = [s for s in keys if s not in expected]
            raise BundleMismatchError(
                f"bundle does not match hook sites (missing={missing}, extra={extra})")

    def forward_transfer(self, z_c, t, bundle: StatsBundle, observe=None) -> torch.Tensor:
        """AdaIN-embedded pass: every conv output takes the style statistics of its site.

        ``observe(site_id, before, after)`` is called per site for instrumentation.
        """
        self._require_sites(bundle.keys())

        def transfer(site_id, h):
            out = adain_with_stats(h, bundle.stats[site_id])
            if observe is not None:
                observe(site_id, h, out)
            return out

        return self.run(z_c, t, transfer)

    def forward_transfer_wct(self, z_c, t, bundle: StatsBundle, observe=None) -> torch.Tensor:
        if bundle.features is None:
            raise BundleMismatchError("WCT transfer needs a bundle captured with keep_features=True")
        self._require_sites(bundle.features.keys())

        def transfer(site_id, h):
            out = wct(h, bundle.features[site_id])
            if observe is not None:
                observe(site_id, h, out)
            return out

        return self.run(z_c, t, transfer)


def build_toy_denoiser(config: Optional[DenoiserConfig] = None, seed: int = 0) -> Denoiser:
    return Denoiser(config or DenoiserConfig(), seed)
