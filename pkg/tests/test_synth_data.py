import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coordsynth.motion import HIP, POS, ROT, VEL
from coordsynth.synth_data import (
    Corpus, build_corpus, channel_stats, corpus_from_clips, generate_pair_episode, get_style, n_slices,
)


def _mean_partner_distance(style, seeds, T=4):
    out = []
    for s in seeds:
        hips = generate_pair_episode(style, s, T).timeline.continuous()[:, :, HIP, POS]
        out.append(np.linalg.norm(hips[0] - hips[1], axis=-1).mean())
    return float(np.mean(out))


def test_episode_deterministic():
    a = generate_pair_episode(get_style("dance"), 7, 3).timeline
    b = generate_pair_episode(get_style("dance"), 7, 3).timeline
    assert all(np.array_equal(x.data, y.data) for x, y in zip(a.steps, b.steps))
    c = generate_pair_episode(get_style("dance"), 8, 3).timeline
    assert not np.array_equal(a.steps[0].data, c.steps[0].data)


def test_style_distances():
    dance = _mean_partner_distance(get_style("dance"), range(100))
    boxing = _mean_partner_distance(get_style("boxing"), range(100))
    assert 0.5 <= dance <= 1.1
    assert boxing > dance


def test_unknown_style():
    with pytest.raises(ValueError):
        get_style("tango")


def test_clip_count_matches_slicing():
    c = build_corpus(get_style("dance"), 10, 0, T=4, stride=8)
    brute = 10 * len(range(0, 4 * 16 - 16 + 1, 8))
    assert len(c.train) + len(c.val) == brute == 10 * n_slices(64, 16, 8)
    assert c.clip_shape == (2, 16, 8, 10)


def test_zero_limb_amplitude_gives_constant_limb_rotations():
    style = get_style("dance", limb_amplitude=0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        c = build_corpus(style, 10, 1, T=2)
    limbs = c.train[..., 1:, ROT]
    assert np.all(limbs == limbs.reshape(-1, 4)[0])
    assert np.all(np.isfinite(c.std)) and np.all(c.std > 0)


def test_degenerate_std_clamped_with_warning():
    clips = np.zeros((12, 2, 8, 2, 10))
    clips[..., 3] = 1.0
    clips[..., 0] = np.random.default_rng(0).normal(size=clips.shape[:-1])
    with pytest.warns(RuntimeWarning, match="degenerate"):
        mean, std = channel_stats(clips)
    assert std.min() == 1e-8


def test_train_val_disjoint():
    c = build_corpus(get_style("dance"), 12, 3, T=3)
    train = {x.tobytes() for x in c.train}
    assert not any(x.tobytes() in train for x in c.val)


def test_velocity_channel():
    tl = generate_pair_episode(get_style("boxing"), 4, 3).timeline
    m = tl.continuous()
    np.testing.assert_allclose(m[:, :-1, :, VEL], 20 * np.diff(m[..., POS], axis=1), atol=1e-9)
    c = build_corpus(get_style("dance"), 10, 2, T=2)
    np.testing.assert_allclose(c.train[:, :, :-1, :, VEL], 20 * np.diff(c.train[..., POS], axis=2), atol=1e-9)


def test_clips_are_canonicalized():
    c = build_corpus(get_style("dance"), 10, 5, T=2)
    mid = c.train[:, :, 0, HIP, POS].mean(axis=1)
    np.testing.assert_allclose(mid[:, [0, 2]], 0.0, atol=1e-12)


@settings(max_examples=10)
@given(st.integers(0, 2**31 - 1))
def test_normalize_round_trip(seed):
    c = build_corpus(get_style("dance"), 10, 0, T=2)
    x = np.random.default_rng(seed).normal(size=c.clip_shape)
    np.testing.assert_allclose(c.denormalize(c.normalize(x)), x, atol=1e-9)


def test_corpus_save_load(tmp_path):
    c = build_corpus(get_style("dance"), 10, 0, T=2)
    c.save(tmp_path / "c.npz")
    d = Corpus.load(tmp_path / "c.npz")
    assert np.array_equal(c.train, d.train) and np.array_equal(c.std, d.std)
    assert d.meta["style"]["name"] == "dance" and d.fps == 20


def test_corpus_from_clips_split():
    clips = np.random.default_rng(0).normal(size=(20, 2, 8, 2, 10))
    c = corpus_from_clips(clips, 20)
    assert len(c.train) == 18 and len(c.val) == 2
