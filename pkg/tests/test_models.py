import numpy as np
import pytest

from hrtf_dunet import sh
from hrtf_dunet.errors import ConfigError
from hrtf_dunet.nn import models

from gradcheck import check_module

SMALL_UNET = models.DUNetConfig(order=1, channels=(3, 4), depth=2)
SMALL_GAN = models.AeGanConfig(low_order=0, high_order=1, latent=3, width=4, res_blocks=1,
                               reduction=2, mbd_features=4, mbd_kernels=2, mbd_dim=2)


def test_config_validation():
    with pytest.raises(ConfigError):
        models.DUNetConfig(channels=(8, 16), depth=3)
    with pytest.raises(ConfigError):
        models.DUNetConfig(kernel_size=4)
    with pytest.raises(ConfigError):
        models.AeGanConfig(low_order=3, high_order=3)
    with pytest.raises(ConfigError):
        models.AeGanConfig(width=18, reduction=4)
    assert models.DUNetConfig().io_channels == 72
    cfg = models.AeGanConfig(low_order=0, high_order=2)
    assert (cfg.in_channels, cfg.out_channels) == (2, 18)


def test_dunet_zero_at_init(rng):
    net = models.DUNet(models.DUNetConfig(order=2, channels=(4, 8, 8)), rng)
    assert np.all(net.forward(rng.normal(size=(3, 18, 129))) == 0)


@pytest.mark.parametrize("length", [5, 8, 11])
def test_dunet_output_shape(rng, length):
    net = models.DUNet(SMALL_UNET, rng)
    assert net.forward(rng.normal(size=(2, 8, length))).shape == (2, 8, length)
    with pytest.raises(ValueError):
        net.forward(rng.normal(size=(2, 6, length)))


def randomise_head(module, rng):
    for name, p in module.named_params():
        if np.all(p.value == 0) and p.value.ndim > 1:
            p.value[:] = rng.normal(0, 0.3, p.value.shape)


def test_dunet_gradients(rng):
    net = models.DUNet(SMALL_UNET, rng)
    randomise_head(net, rng)
    check_module(net, rng.normal(size=(2, 8, 7)))


def test_generator_rows(rng):
    cfg = models.AeGanConfig(low_order=0, high_order=2, width=8, latent=4)
    gen = models.AeGanGenerator(cfg, rng)
    assert gen.forward(rng.normal(size=(2, 2, 16))).shape == (2, 18, 16)
    assert gen.encode(rng.normal(size=(2, 2, 16))).shape == (2, 4, 16)


def test_generator_gradients(rng):
    gen = models.AeGanGenerator(SMALL_GAN, rng)
    randomise_head(gen, rng)
    check_module(gen, rng.normal(size=(3, 2, 6)))


def test_discriminator_gradients(rng):
    disc = models.Discriminator(SMALL_GAN, rng)
    check_module(disc, rng.normal(size=(3, 8, 6)))
    assert disc.forward(rng.normal(size=(4, 8, 6))).shape == (4,)


def test_embedding_places_low_order_slots():
    e = models.low_order_embedding(1, 2)
    assert e.shape == (18, 8)
    x = np.arange(8.0)
    y = e @ x
    np.testing.assert_array_equal(y[:4], x[:4])
    np.testing.assert_array_equal(y[9:13], x[4:])
    assert np.all(y[4:9] == 0) and np.all(y[13:] == 0)


def test_upsampler_reproduces_low_order_at_init(rng):
    cfg = models.AeGanConfig(low_order=1, high_order=3, width=8, latent=8)
    up = models.CoeffUpsampler(cfg, rng)
    x = rng.normal(size=(2, cfg.in_channels, 9))
    y = up.forward(x)
    k_lo, k_hi = sh.num_coeffs(1), sh.num_coeffs(3)
    for ear in range(2):
        np.testing.assert_array_equal(y[:, ear * k_hi:ear * k_hi + k_lo], x[:, ear * k_lo:(ear + 1) * k_lo])
        assert np.all(y[:, ear * k_hi + k_lo:(ear + 1) * k_hi] == 0)


def test_wrapper_normalisation(rng):
    den = models.CoeffDenoiser(SMALL_UNET, rng)
    noisy, clean = 3 + 2 * rng.normal(size=(6, 8, 5)), -1 + rng.normal(size=(6, 8, 5))
    den.fit_normalisation(noisy, clean)
    # the zero-initialised net maps everything to the clean mean
    np.testing.assert_allclose(den.forward(noisy), np.broadcast_to(clean.mean(axis=0), noisy.shape))


@pytest.mark.parametrize("kind", ["denoiser", "upsampler", "discriminator"])
def test_wrapper_gradients(rng, kind):
    if kind == "denoiser":
        m = models.CoeffDenoiser(SMALL_UNET, rng)
        x, y = rng.normal(size=(3, 8, 5)), rng.normal(size=(3, 8, 5))
        m.fit_normalisation(2 * x + 1, y)
    elif kind == "upsampler":
        m = models.CoeffUpsampler(SMALL_GAN, rng)
        x, y = rng.normal(size=(3, 2, 5)), rng.normal(size=(3, 8, 5))
        m.fit_normalisation(2 * x + 1, 3 * y)
    else:
        m = models.CoeffDiscriminator(SMALL_GAN, rng)
        x = rng.normal(size=(3, 8, 5))
        m.fit_normalisation(2 * x)
    randomise_head(m, rng)
    check_module(m, x)
