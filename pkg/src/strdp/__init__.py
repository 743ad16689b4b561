"""Training-free style transfer by style-tracking reverse diffusion."""
from .codec import IdentityCodec, ToyCodec, make_codec
from .color import histogram_match
from .denoiser import Denoiser, DenoiserConfig, HookSite, StatsBundle, build_toy_denoiser
from .metrics import FeatureExtractor, content_loss, gram_style_loss, psnr, ssim
from .pipeline import (Engine, NoiseStream, StyleTrajectory, TransferJob, ddim_reconstruct,
                       forward_diffuse_with_history, run_ablation_step, run_style_transfer,
                       strdp_reverse)
from .schedule import DiffusionSchedule, build_schedule, strength_to_steps
from .stats import ChannelStats, adain, channel_stats, wct

__version__ = "0.1.0"
