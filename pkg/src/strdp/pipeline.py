"""Style-tracking reverse diffusion: encode, noise with history, denoise with AdaIN, decode."""
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import torch

from .codec import IdentityCodec, make_codec
from .color import histogram_match
from .denoiser import Denoiser, DenoiserConfig
from .errors import ConfigError, PipelineError, RangeError, ShapeError
from .schedule import DiffusionSchedule, build_schedule, strength_to_steps
from .stats import adain

MODES = ("strdp", "adain_on_noise", "adain_on_latent", "wct_features", "plain_reconstruct")
ABLATION_LETTERS = {"a": "strdp", "b": "adain_on_noise", "c": "adain_on_latent", "d": "wct_features"}
TRAJECTORY_MODES = ("iterative", "direct")
_ROLES = {"style": 1, "content": 2}


def canonical_mode(mode: str) -> str:
    mode = ABLATION_LETTERS.get(mode, mode)
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES} or a-d")
    return mode


class NoiseStream:
    """Reproducible standard-normal draws derived from (seed, role).

    Style and content get independent streams, so swapping the style image
    never changes how the content latent is noised.
    """

    def __init__(self, seed: int, role: str = "content"):
        if role not in _ROLES:
            raise ConfigError(f"unknown noise role {role!r}")
        self.seed = seed
        self.role = role
        self._rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_ROLES[role],)))

    def draw(self, shape) -> torch.Tensor:
        return torch.from_numpy(self._rng.standard_normal(tuple(shape)))


@dataclass
class StyleTrajectory:
    latents: List[torch.Tensor]
    mode: str = "iterative"
    seed: Optional[int] = None

    @property
    def T_prime(self) -> int:
        return len(self.latents) - 1

    def __getitem__(self, t):
        return self.latents[t]

    def __len__(self):
        return len(self.latents)


def forward_diffuse_with_history(z0, T_prime: int, schedule: DiffusionSchedule,
                                 noise: NoiseStream, mode: str = "iterative") -> StyleTrajectory:
    """Noise ``z0`` for ``T_prime`` steps, keeping every intermediate latent.

    ``iterative`` chains single forward steps; ``direct`` jumps from ``z0`` to
    each level independently. Both draw one noise tensor per step.
    """
    if not 0 <= T_prime <= schedule.T:
        raise RangeError(f"T'={T_prime} outside [0, {schedule.T}]")
    if mode not in TRAJECTORY_MODES:
        raise ConfigError(f"unknown trajectory mode {mode!r}")
    z0 = torch.as_tensor(z0, dtype=torch.float64)
    latents = [z0]
    for t in range(1, T_prime + 1):
        eps = noise.draw(z0.shape)
        if mode == "iterative":
            latents.append(schedule.forward_step(latents[-1], t, eps))
        else:
            latents.append(schedule.direct_noise_to(z0, t, eps))
    return StyleTrajectory(latents, mode, noise.seed)


def run_ablation_step(mode: str, d: Denoiser, z_t, z_st, t) -> torch.Tensor:
    """Predicted noise for one reverse step under a given AdaIN placement.

    a / strdp           AdaIN at every conv of the denoiser
    b / adain_on_noise  AdaIN between the two predicted noises
    c / adain_on_latent AdaIN between the latents, then a plain pass
    d / wct_features    WCT at every conv of the denoiser
    """
    mode = canonical_mode(mode)
    if mode == "strdp":
        _, bundle = d.forward_capture(z_st, t)
        return d.forward_transfer(z_t, t, bundle)
    if mode == "adain_on_noise":
        return adain(d.forward_plain(z_t, t), d.forward_plain(z_st, t))
    if mode == "adain_on_latent":
        return d.forward_plain(adain(z_t, z_st), t)
    if mode == "wct_features":
        _, bundle = d.forward_capture(z_st, t, keep_features=True)
        return d.forward_transfer_wct(z_t, t, bundle)
    return d.forward_plain(z_t, t)


def strdp_reverse(z_cT, traj: StyleTrajectory, d: Denoiser, schedule: DiffusionSchedule,
                  mode: str = "strdp") -> torch.Tensor:
    """Denoise from level T' to 0; step t draws its style statistics from ``traj[t]``."""
    T_prime = traj.T_prime
    if T_prime > schedule.T:
        raise PipelineError(f"trajectory of length {len(traj)} exceeds schedule T={schedule.T}")
    z = torch.as_tensor(z_cT, dtype=torch.float64)
    for t in range(T_prime, 0, -1):
        eps_hat = run_ablation_step(mode, d, z, traj[t], t)
        z = schedule.reverse_step(z, eps_hat, t)
    return z


def ddim_reconstruct(z_T, T_prime: int, d: Denoiser, schedule: DiffusionSchedule) -> torch.Tensor:
    """Plain DDIM reverse loop from level ``T_prime`` without any style transfer."""
    z = torch.as_tensor(z_T, dtype=torch.float64)
    for t in range(T_prime, 0, -1):
        z = schedule.reverse_step(z, d.forward_plain(z, t), t)
    return z


@dataclass
class Engine:
    schedule: DiffusionSchedule = field(default_factory=build_schedule)
    codec: object = field(default_factory=IdentityCodec)
    denoiser: Optional[Denoiser] = None

    def __post_init__(self):
        if self.denoiser is None:
            self.denoiser = Denoiser(DenoiserConfig(latent_channels=self.codec.latent_channels))
        if self.denoiser.config.latent_channels != self.codec.latent_channels:
            raise ShapeError(
                f"codec produces {self.codec.latent_channels}-channel latents but the denoiser "
                f"expects {self.denoiser.config.latent_channels}")


@dataclass
class TransferJob:
    content: torch.Tensor
    style: torch.Tensor
    strength: float = 0.5
    seed: int = 0
    mode: str = "strdp"
    trajectory: str = "iterative"
    match_colors: bool = False

    def __post_init__(self):
        if not 0.0 <= self.strength <= 1.0:
            raise RangeError(f"strength S={self.strength} outside [0, 1]")
        self.mode = canonical_mode(self.mode)
        if self.trajectory not in TRAJECTORY_MODES:
            raise ConfigError(f"unknown trajectory mode {self.trajectory!r}")


def run_style_transfer(job: TransferJob, engine: Engine, keep_latents: bool = False):
    """Run one job end to end. Returns ``(image, report)``.

    With ``keep_latents`` the report gains a ``latents`` entry holding the
    style trajectory, the noised content latent and the final latent.
    """
    timings = {}
    clock = time.perf_counter()
    t0 = clock

    def lap(name):
        nonlocal clock
        now = time.perf_counter()
        timings[name] = now - clock
        clock = now

    z_c0 = engine.codec.encode(job.content)
    z_s0 = engine.codec.encode(job.style)
    if z_c0.shape != z_s0.shape:
        raise ShapeError(f"content latent {tuple(z_c0.shape)} and style latent "
                         f"{tuple(z_s0.shape)} differ; use equal image sizes")
    lap("encode")

    T_prime = strength_to_steps(job.strength, engine.schedule.T)
    traj = forward_diffuse_with_history(
        z_s0, T_prime, engine.schedule, NoiseStream(job.seed, "style"), job.trajectory)
    content_traj = forward_diffuse_with_history(
        z_c0, T_prime, engine.schedule, NoiseStream(job.seed, "content"), job.trajectory)
    z_cT = content_traj[T_prime]
    lap("forward")

    if job.mode == "plain_reconstruct":
        z_hat = ddim_reconstruct(z_cT, T_prime, engine.denoiser, engine.schedule)
    else:
        z_hat = strdp_reverse(z_cT, traj, engine.denoiser, engine.schedule, job.mode)
    lap("reverse")

    image = engine.codec.decode(z_hat).clamp(0.0, 1.0)
    if job.match_colors:
        image = histogram_match(image, job.style)
    lap("decode")
    timings["total"] = time.perf_counter() - t0

    report = {
        "strength": job.strength,
        "T": engine.schedule.T,
        "T_prime": T_prime,
        "mode": job.mode,
        "trajectory": job.trajectory,
        "seeds": {"job": job.seed, "denoiser": engine.denoiser.seed},
        "latent_shape": list(z_c0.shape),
        "hook_sites": len(engine.denoiser.hook_sites),
        "match_colors": job.match_colors,
        "timings": timings,
    }
    if keep_latents:
        report["latents"] = {
            "style_trajectory": traj.latents,
            "content_noised": z_cT,
            "result": z_hat,
        }
    return image, report
