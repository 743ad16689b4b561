import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
import torch

from strdp.denoiser import Denoiser, DenoiserConfig, StatsBundle, build_toy_denoiser
from strdp.errors import BundleMismatchError, ConfigError, ShapeError
from strdp.stats import EPS_STD, channel_stats

from conftest import randn
from test_stats import loop_cov, loop_stats


def expected_site_count(cfg):
    """Spatial convs implied by the architecture description, counted by hand."""
    chans = [cfg.base_channels * 2 ** i for i in range(cfg.levels)]
    n = 2  # conv_in, conv_out
    prev = chans[0]
    for ch in chans:  # encoder res blocks: two convs, plus a 1x1 skip when widths change
        n += 2 + (prev != ch)
        prev = ch
    n += cfg.levels - 1  # strided downsample convs
    n += 2  # middle block
    n += 3 * cfg.levels  # decoder blocks always change width after the skip concat
    n += cfg.levels - 1  # upsample convs
    return n


def test_default_shapes(small_denoiser, rng):
    z = randn(rng, 4, 16, 16)
    assert small_denoiser.forward_plain(z, 5).shape == z.shape


def test_same_seed_same_weights():
    a, b = build_toy_denoiser(seed=3), build_toy_denoiser(seed=3)
    for (ka, va), (kb, vb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert ka == kb and torch.equal(va, vb)
    c = build_toy_denoiser(seed=4)
    assert not torch.equal(a.conv_in.weight, c.conv_in.weight)


@pytest.mark.parametrize("cfg", [
    DenoiserConfig(),
    DenoiserConfig(levels=1),
    DenoiserConfig(levels=3, base_channels=8),
    DenoiserConfig(latent_channels=1, base_channels=1, levels=1, groups=1),
])
def test_hook_site_count_and_order(cfg):
    d = Denoiser(cfg)
    assert len(d.hook_sites) == expected_site_count(cfg)
    assert [s.position for s in d.hook_sites] == list(range(len(d.hook_sites)))
    assert len(set(d.site_ids)) == len(d.site_ids)
    n_conv = sum(isinstance(m, torch.nn.Conv2d) for m in d.modules())
    assert n_conv == len(d.hook_sites)


def test_temb_projections_are_not_sites(small_denoiser):
    assert not any("temb" in s for s in small_denoiser.site_ids)


def test_invalid_config():
    with pytest.raises(ConfigError):
        Denoiser(DenoiserConfig(base_channels=6, groups=4))
    with pytest.raises(ConfigError):
        Denoiser(DenoiserConfig(levels=0))


def test_shape_errors(small_denoiser):
    with pytest.raises(ShapeError):
        small_denoiser.forward_plain(torch.zeros(3, 8, 8), 1)
    with pytest.raises(ShapeError):
        small_denoiser.forward_plain(torch.zeros(4, 7, 8), 1)


def test_forward_plain_deterministic(small_denoiser, rng):
    z = randn(rng, 4, 16, 16)
    assert torch.equal(small_denoiser.forward_plain(z, 7), small_denoiser.forward_plain(z, 7))


def test_timestep_changes_output(small_denoiser, rng):
    z = randn(rng, 4, 16, 16)
    assert not torch.allclose(small_denoiser.forward_plain(z, 1), small_denoiser.forward_plain(z, 50))


def test_capture_is_passive(small_denoiser, rng):
    z = randn(rng, 4, 16, 16)
    eps, bundle = small_denoiser.forward_capture(z, 9)
    assert torch.equal(eps, small_denoiser.forward_plain(z, 9))
    assert list(bundle.keys()) == small_denoiser.site_ids


def test_capture_matches_activation_dump(small_denoiser, rng):
    z = randn(rng, 4, 16, 16)
    dump = {}

    def record(site_id, h):
        dump[site_id] = h.numpy().copy()
        return h

    small_denoiser.run(z, 12, record)
    _, bundle = small_denoiser.forward_capture(z, 12)
    for site_id in small_denoiser.site_ids:
        m_ref, s_ref = loop_stats(dump[site_id])
        np.testing.assert_allclose(bundle[site_id].mean, m_ref, atol=1e-9)
        np.testing.assert_allclose(bundle[site_id].std, s_ref, atol=1e-9)


def test_self_transfer_identity_every_site(small_denoiser, rng):
    z = randn(rng, 4, 16, 16)
    plain = {}

    def record(site_id, h):
        plain[site_id] = h.clone()
        return h

    small_denoiser.run(z, 20, record)
    _, bundle = small_denoiser.forward_capture(z, 20)
    after = {}
    out = small_denoiser.forward_transfer(z, 20, bundle,
                                          observe=lambda s, before, a: after.__setitem__(s, a))
    for site_id in small_denoiser.site_ids:
        torch.testing.assert_close(after[site_id], plain[site_id], atol=1e-5, rtol=0)
    torch.testing.assert_close(out, small_denoiser.forward_plain(z, 20), atol=1e-5, rtol=0)


def check_enforced(d, z_c, z_s, t):
    _, bundle = d.forward_capture(z_s, t)
    worst = 0.0

    def observe(site_id, before, after):
        nonlocal worst
        _, s_before = channel_stats(before)
        mean, std = channel_stats(after)
        ok = s_before > EPS_STD
        ref = bundle[site_id]
        worst = max(worst, float((mean - ref.mean)[ok].abs().max()),
                    float(((std - ref.std).abs() / (1 + ref.std))[ok].max()))

    d.forward_transfer(z_c, t, bundle, observe=observe)
    return worst


def test_transfer_enforces_style_statistics(small_denoiser, rng):
    assert check_enforced(small_denoiser, randn(rng, 4, 16, 16), randn(rng, 4, 16, 16) * 2, 30) <= 1e-5


def test_transfer_with_foreign_stats_changes_output(small_denoiser, rng):
    z_c, z_s = randn(rng, 4, 16, 16), randn(rng, 4, 16, 16) + 1
    _, bundle = small_denoiser.forward_capture(z_s, 3)
    out = small_denoiser.forward_transfer(z_c, 3, bundle)
    assert (out - small_denoiser.forward_plain(z_c, 3)).abs().max() > 1e-3


def test_missing_site_rejected(small_denoiser, rng):
    _, bundle = small_denoiser.forward_capture(randn(rng, 4, 8, 8), 1)
    del bundle.stats["mid.conv1"]
    with pytest.raises(BundleMismatchError):
        small_denoiser.forward_transfer(randn(rng, 4, 8, 8), 1, bundle)


def test_wct_needs_features(small_denoiser, rng):
    _, bundle = small_denoiser.forward_capture(randn(rng, 4, 8, 8), 1)
    with pytest.raises(BundleMismatchError):
        small_denoiser.forward_transfer_wct(randn(rng, 4, 8, 8), 1, bundle)


def test_wct_equals_adain_for_single_channel_sites(rng):
    # WCT floors the variance at 1e-5, AdaIN floors the std at 1e-5; a larger init keeps
    # every site variance above both floors so the two transforms coincide
    d = Denoiser(DenoiserConfig(latent_channels=1, base_channels=1, levels=1, groups=1,
                                weight_std=0.5), seed=2)
    assert all(s.channels == 1 for s in d.hook_sites)
    z_c, z_s = randn(rng, 1, 16, 16), randn(rng, 1, 16, 16) * 1.5 + 0.3
    _, bundle = d.forward_capture(z_s, 10, keep_features=True)
    torch.testing.assert_close(d.forward_transfer_wct(z_c, 10, bundle),
                               d.forward_transfer(z_c, 10, bundle), atol=1e-4, rtol=0)


def wct_covariance_error(d, z_c, z_s, t):
    _, bundle = d.forward_capture(z_s, t, keep_features=True)
    worst = 0.0

    def observe(site_id, before, after):
        nonlocal worst
        style = bundle.features[site_id]
        c = style.shape[0]
        cov_out = np.cov(after.reshape(c, -1).numpy(), bias=True).reshape(c, c)
        cov_style = np.cov(style.reshape(c, -1).numpy(), bias=True).reshape(c, c)
        worst = max(worst, float(np.abs(cov_out - cov_style).max()))

    d.forward_transfer_wct(z_c, t, bundle, observe=observe)
    return worst


def test_wct_per_site_covariance(small_denoiser, rng):
    err = wct_covariance_error(small_denoiser, randn(rng, 4, 32, 32), randn(rng, 4, 32, 32) * 2, 25)
    assert err <= 1e-4


def test_wct_covariance_oracle_small_site(rng):
    # brute-force loop covariance on a config small enough to loop over
    d = Denoiser(DenoiserConfig(latent_channels=2, base_channels=4, levels=1, groups=2), seed=1)
    _, bundle = d.forward_capture(randn(rng, 2, 6, 6), 4, keep_features=True)
    after = {}
    d.forward_transfer_wct(randn(rng, 2, 6, 6), 4, bundle,
                           observe=lambda s, b, a: after.__setitem__(s, a))
    for site_id in d.site_ids:
        np.testing.assert_allclose(loop_cov(after[site_id]), loop_cov(bundle.features[site_id]),
                                   atol=1e-4)


def test_wct_runtime_recorded(small_denoiser, rng):
    z_c, z_s = randn(rng, 4, 32, 32), randn(rng, 4, 32, 32)
    _, bundle = small_denoiser.forward_capture(z_s, 5, keep_features=True)
    t0 = time.perf_counter()
    small_denoiser.forward_transfer(z_c, 5, bundle)
    t1 = time.perf_counter()
    small_denoiser.forward_transfer_wct(z_c, 5, bundle)
    t2 = time.perf_counter()
    print(f"adain pass {t1 - t0:.4f}s, wct pass {t2 - t1:.4f}s")


def test_concurrent_passes_share_denoiser(small_denoiser, rng):
    latents = [(randn(rng, 4, 16, 16), randn(rng, 4, 16, 16)) for _ in range(6)]

    def job(pair):
        _, b = small_denoiser.forward_capture(pair[1], 8)
        return small_denoiser.forward_transfer(pair[0], 8, b)

    serial = [job(p) for p in latents]
    with ThreadPoolExecutor(3) as pool:
        parallel = list(pool.map(job, latents))
    for a, b in zip(serial, parallel):
        assert torch.equal(a, b)
