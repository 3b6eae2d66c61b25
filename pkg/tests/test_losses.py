import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hrtf_dunet.errors import DataError
from hrtf_dunet.nn import losses as F

from gradcheck import loss_cases, run_loss_case

CASES = loss_cases()


@pytest.mark.parametrize("name,fn,grad_fn", CASES, ids=[c[0] for c in CASES])
def test_loss_gradients(name, fn, grad_fn):
    run_loss_case(fn, grad_fn, seed=sum(map(ord, name)))


def test_l1_examples(rng):
    assert F.l1_loss([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert F.l1_loss([1.0, 2.0], [0.0, 0.0]) == 1.5
    d, t = rng.normal(size=37), rng.normal(size=37)
    acc = 0.0
    for a, b in zip(d, t):
        acc += abs(a - b)
    assert F.l1_loss(d, t) == pytest.approx(acc / 37, abs=1e-12)
    with pytest.raises(DataError):
        F.l1_loss([1.0], [1.0, 2.0])


def test_cosine_examples(rng):
    d = rng.normal(size=10)
    assert F.cosine_loss(d, d) == pytest.approx(0.0, abs=1e-15)
    assert F.cosine_loss([1.0, 0.0], [0.0, 3.0]) == pytest.approx(1.0, abs=1e-15)
    assert F.cosine_loss(d, -d) == pytest.approx(2.0, abs=1e-15)
    with pytest.raises(DataError):
        F.cosine_loss(np.zeros(3), np.ones(3))
    with pytest.raises(DataError):
        F.cosine_loss_grad(np.ones(3), np.zeros(3))


@given(seed=st.integers(0, 10_000), scale=st.floats(0.01, 100))
def test_cosine_range_and_scale_invariance(seed, scale):
    r = np.random.default_rng(seed)
    d, t = r.normal(size=12), r.normal(size=12)
    v = F.cosine_loss(d, t)
    assert 0.0 <= v <= 2.0
    assert F.cosine_loss(scale * d, t) == pytest.approx(v, abs=1e-12)


def test_reconstruction_without_cosine_is_l1(rng):
    p, t = rng.normal(size=(4, 3, 5)), rng.normal(size=(4, 3, 5))
    l1, _, g = F.reconstruction_grad(p, t, 0.0)
    assert l1 == F.l1_loss(p, t)
    np.testing.assert_array_equal(g, F.l1_loss_grad(p, t)[1])


def test_batch_cosine_is_mean_of_samples(rng):
    p, t = rng.normal(size=(5, 2, 3)), rng.normal(size=(5, 2, 3))
    v, _ = F.batch_cosine_grad(p, t)
    assert v == pytest.approx(np.mean([F.cosine_loss(p[i], t[i]) for i in range(5)]), abs=1e-15)


def test_adversarial_values():
    z = np.zeros(4)
    assert F.generator_adv_grad(z)[0] == pytest.approx(math.log(2))
    loss, dr, df = F.discriminator_grad(z, z)
    assert loss == pytest.approx(2 * math.log(2))
    np.testing.assert_allclose(dr, -0.125)
    np.testing.assert_allclose(df, 0.125)
    # confident, correct discriminator has near-zero loss
    assert F.discriminator_grad(np.full(3, 40.0), np.full(3, -40.0))[0] < 1e-15
    assert np.isfinite(F.softplus(np.array([1e3, -1e3]))).all()
