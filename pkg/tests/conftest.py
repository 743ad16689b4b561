import numpy as np
import pytest
import torch
from PIL import Image

from strdp.denoiser import Denoiser, DenoiserConfig
from strdp.schedule import build_schedule


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def randn(rng, *shape):
    return torch.from_numpy(rng.standard_normal(shape))


@pytest.fixture(scope="session")
def schedule():
    return build_schedule(50)


@pytest.fixture(scope="session")
def small_denoiser():
    return Denoiser(DenoiserConfig(latent_channels=4), seed=0)


@pytest.fixture(scope="session")
def rgb_denoiser():
    return Denoiser(DenoiserConfig(latent_channels=3), seed=0)


def save_png(path, arr):
    Image.fromarray(np.asarray(arr, dtype=np.uint8)).save(path)
    return path


@pytest.fixture
def image_pair(tmp_path):
    r = np.random.default_rng(7)
    content = save_png(tmp_path / "content.png", r.integers(0, 256, (32, 32, 3)))
    x = np.linspace(0, 1, 32)
    stripes = np.sin(9 * x)[:, None] ** 2 * np.cos(4 * x)[None, :] ** 2
    style = np.stack([stripes, stripes[::-1], 1 - stripes], -1) * 255
    style = save_png(tmp_path / "style.png", style.round())
    return content, style
