import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coordsynth.generator import (
    Denoiser, GeneratorError, NoiseSchedule, TrainConfig, forward_diffuse, gradcheck, load_checkpoint,
    predict_x0, sample, save_checkpoint, train_denoiser,
)
from coordsynth.motion import HIP, POS, ROT
from helpers import TOY_SHAPE, bimodal_corpus, constant_clip, constant_corpus, mode_of

SCHED = NoiseSchedule.linear(50)


def _toy_model(seed=0, hidden=(16, 16)):
    return Denoiser.init(TOY_SHAPE, SCHED, np.zeros(TOY_SHAPE[-2:]), np.ones(TOY_SHAPE[-2:]), 1,
                         seed=seed, hidden=hidden)


@pytest.fixture(scope="module")
def constant_model():
    model, _ = train_denoiser(constant_corpus(), SCHED,
                              TrainConfig(steps=2000, hidden=(128, 128, 128), context_frames=0))
    return model


def test_schedule_validation():
    with pytest.raises(ValueError):
        NoiseSchedule(np.array([0.1]))
    with pytest.raises(ValueError):
        NoiseSchedule(np.array([0.1, 1.0]))
    s = NoiseSchedule.linear(50)
    assert s.U == 50 and np.all(np.diff(s.alpha_bars) < 0)
    assert s.alpha_bar(0) == 1.0


def test_forward_diffuse_cases():
    x0 = np.random.default_rng(0).normal(size=(3, 4))
    np.testing.assert_array_equal(forward_diffuse(SCHED, x0, 7, np.zeros_like(x0)),
                                  np.sqrt(SCHED.alpha_bar(7)) * x0)
    # the alpha_bar = 1 limit
    s = NoiseSchedule(np.array([1e-300, 1e-300]))
    np.testing.assert_allclose(forward_diffuse(s, x0, 1, np.ones_like(x0)), x0, atol=1e-12)
    for bad in (0, 51):
        with pytest.raises(ValueError):
            forward_diffuse(SCHED, x0, bad, x0)
    with pytest.raises(ValueError):
        forward_diffuse(SCHED, x0, 1, np.zeros((3, 5)))


def test_forward_diffuse_mean():
    rng = np.random.default_rng(1)
    x0 = np.array([1.5, -0.5, 2.0])
    u = 20
    noise = rng.standard_normal((10_000, 3))
    xs = forward_diffuse(SCHED, np.broadcast_to(x0, noise.shape), u, noise)
    se = np.sqrt(1 - SCHED.alpha_bar(u)) / 100
    assert np.all(np.abs(xs.mean(axis=0) - np.sqrt(SCHED.alpha_bar(u)) * x0) < 4 * se)


def test_zero_network_outputs_bias():
    m = _toy_model()
    for W in m.net.weights:
        W[:] = 0.0
    m.net.biases[-1][:] = np.arange(m.dim) * 0.01
    x = np.random.default_rng(0).normal(size=TOY_SHAPE)
    np.testing.assert_array_equal(predict_x0(m, x, 5).ravel(), m.net.biases[-1])


def test_predict_deterministic_and_shape_checked():
    m = _toy_model()
    x = np.random.default_rng(0).normal(size=(3, *TOY_SHAPE))
    a, b = predict_x0(m, x, 9), predict_x0(m, x, 9)
    assert a.shape == x.shape and np.array_equal(a, b)
    with pytest.raises(GeneratorError):
        predict_x0(m, np.zeros((2, 8, 3, 10)), 1)


def test_constant_corpus_overfit(constant_model):
    c = constant_clip()
    rng = np.random.default_rng(5)
    for u in (1, 10, 25, 50):
        x_u = forward_diffuse(SCHED, c, u, rng.standard_normal(c.shape))
        assert np.abs(predict_x0(constant_model, x_u, u) - c).max() < 0.05
    for seed in range(5):
        out = sample(constant_model, None, np.zeros(c.shape), seed=seed)
        assert np.abs(out - c).max() < 0.1


def test_training_lowers_val_loss_and_is_deterministic():
    cfg = TrainConfig(steps=150, hidden=(32, 32), val_every=50, context_frames=0)
    m1, h1 = train_denoiser(bimodal_corpus(200), SCHED, cfg)
    m2, _ = train_denoiser(bimodal_corpus(200), SCHED, cfg)
    assert h1["val_loss"][-1] < h1["val_loss"][0]
    assert all(np.array_equal(p, q) for p, q in zip(m1.net.params, m2.net.params))


def test_training_needs_100_clips():
    with pytest.raises(GeneratorError):
        train_denoiser(bimodal_corpus(60), SCHED, TrainConfig(steps=1))


def test_gradcheck_passes_and_catches_corruption():
    m = _toy_model(seed=3, hidden=(24, 24))
    batch = np.random.default_rng(0).normal(size=(4, *TOY_SHAPE))
    assert gradcheck(m, batch) < 1e-4

    def broken(model, x0, x_u, u):
        _, grads = model.loss_and_grads(x0, x_u, u)
        grads[2] = grads[2] * 1.5 + 1e-3
        return grads

    assert gradcheck(m, batch, grad_fn=broken) > 1e-2


def test_gradcheck_zero_batch_is_finite():
    m = _toy_model(seed=4)
    assert np.isfinite(gradcheck(m, np.zeros((3, *TOY_SHAPE))))


def test_gradcheck_trained_model(tiny_generator, dance_corpus):
    assert gradcheck(tiny_generator, dance_corpus.normalize(dance_corpus.train[:4])) < 1e-4


def test_all_ones_mask_returns_observed(tiny_generator, dance_corpus):
    obs = dance_corpus.val[0]
    out = sample(tiny_generator, obs, np.ones(obs.shape), seed=2)
    assert np.array_equal(out, obs)


@settings(max_examples=15)
@given(st.integers(0, 10_000), st.floats(0.05, 0.95))
def test_inpainting_exact(seed, p):
    m = _toy_model(seed=seed % 7)
    rng = np.random.default_rng(seed)
    obs = rng.normal(size=TOY_SHAPE)
    mask = (rng.random(TOY_SHAPE) < p).astype(float)
    out = sample(m, obs, mask, seed=seed)
    assert np.array_equal(out[mask == 1], obs[mask == 1])


def test_empty_observation_needs_zero_mask():
    m = _toy_model()
    with pytest.raises(GeneratorError):
        sample(m, None, np.ones(TOY_SHAPE))
    with pytest.raises(GeneratorError):
        sample(m, np.zeros(TOY_SHAPE), np.full(TOY_SHAPE, 0.5))


def test_sampling_deterministic_and_unit_quaternions(tiny_generator):
    mask = np.zeros(tiny_generator.clip_shape)
    a = sample(tiny_generator, None, mask, seed=4)
    b = sample(tiny_generator, None, mask, seed=4)
    c = sample(tiny_generator, None, mask, seed=5)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    np.testing.assert_allclose(np.linalg.norm(a[..., ROT], axis=-1), 1.0, atol=1e-12)


def test_push_apart_guidance_increases_distance(tiny_generator):
    def push(clip):
        g = np.zeros_like(clip)
        g[0, :, :, 0] = -0.05
        g[1, :, :, 0] = 0.05
        return 0.0, g

    mask = np.zeros(tiny_generator.clip_shape)

    def spread(clip):
        return float(np.linalg.norm(clip[0, :, HIP, POS] - clip[1, :, HIP, POS], axis=-1).mean())

    for seed in range(3):
        plain = sample(tiny_generator, None, mask, seed=seed)
        pushed = sample(tiny_generator, None, mask, guidance=push, seed=seed)
        assert spread(pushed) > spread(plain)


def test_nonfinite_guidance_is_ignored(tiny_generator):
    mask = np.zeros(tiny_generator.clip_shape)
    info = {}
    bad = sample(tiny_generator, None, mask, guidance=lambda c: (0.0, np.full(c.shape, np.nan)), seed=1, info=info)
    assert info["guidance_warnings"] == tiny_generator.schedule.U
    assert np.array_equal(bad, sample(tiny_generator, None, mask, seed=1))


def test_two_mode_recovery():
    corpus = bimodal_corpus()
    model, _ = train_denoiser(corpus, SCHED, TrainConfig(steps=1500, hidden=(128, 128, 128), context_frames=0))
    modes = np.array([mode_of(sample(model, None, np.zeros(TOY_SHAPE), seed=k)) for k in range(200)])
    assert (modes == 1).mean() >= 0.2 and (modes == -1).mean() >= 0.2


def test_checkpoint_round_trip(tmp_path, tiny_generator):
    save_checkpoint(tmp_path / "g.npz", tiny_generator)
    back = load_checkpoint(tmp_path / "g.npz")
    x = np.random.default_rng(0).normal(size=tiny_generator.clip_shape)
    assert np.array_equal(predict_x0(back, x, 3), predict_x0(tiny_generator, x, 3))
    (tmp_path / "bad.npz").write_bytes(b"nope")
    with pytest.raises(GeneratorError):
        load_checkpoint(tmp_path / "bad.npz")
