import numpy as np

from coordsynth.motion import CHANNELS, POS, ClipSet, SceneTimeline


def make_clip_data(hips, J=2, fps=20):
    """(N, F, 3) hip paths -> (N, F, J, 10) rigid bodies with identity rotations."""
    hips = np.asarray(hips, dtype=float)
    N, F, _ = hips.shape
    data = np.zeros((N, F, J, CHANNELS))
    data[..., 3] = 1.0
    data[..., POS] = hips[:, :, None, :]
    data[:, 1:, :, 7:] = fps * np.diff(hips, axis=1)[:, :, None, :]
    return data


def make_timeline(hips, w, J=2, fps=20, seed=0, virtual=None):
    data = make_clip_data(hips, J, fps)
    F = data.shape[1]
    assert F % w == 0
    flags = tuple(virtual) if virtual is not None else ()
    steps = [ClipSet(data[:, k:k + w].copy(), fps, flags) for k in range(0, F, w)]
    return SceneTimeline(steps, seed=seed)


def static_hips(points, F):
    return np.repeat(np.asarray(points, dtype=float)[:, None, :], F, axis=1)


TOY_SHAPE = (2, 8, 2, 10)


def _static_clip(hips):
    """(2, 3) hips -> (2, 8, 2, 10) motionless pair; joint 1 sits 0.5 m above the hip."""
    clip = np.zeros(TOY_SHAPE)
    clip[..., 3] = 1.0
    clip[:, :, 0, POS] = np.asarray(hips, dtype=float)[:, None, :]
    clip[:, :, 1, POS] = clip[:, :, 0, POS] + [0.0, 0.5, 0.0]
    return clip


def constant_clip():
    return _static_clip([[-0.4, 0.9, 0.1], [0.4, 0.9, -0.1]])


def constant_corpus(n=160):
    from coordsynth.synth_data import Corpus

    c = constant_clip()
    clips = np.repeat(c[None], n, axis=0)
    # unit statistics so the network has to learn the clip rather than the normalizer
    return Corpus(clips[:-16], clips[-16:], np.zeros(TOY_SHAPE[-2:]), np.ones(TOY_SHAPE[-2:]), 1, {"toy": "constant"})


MODE_OFFSET = 0.6


def bimodal_corpus(n=400, seed=0):
    """Pairs standing either side by side along x (+mode) or along z (-mode), with jitter."""
    from coordsynth.synth_data import corpus_from_clips

    rng = np.random.default_rng(seed)
    clips = []
    for k in range(n):
        h = np.array([[MODE_OFFSET, 0.9, 0.0], [-MODE_OFFSET, 0.9, 0.0]])
        if k % 2:
            h = h[:, [2, 1, 0]]
        clips.append(_static_clip(h + rng.normal(0, 0.03, size=h.shape) * [1, 0, 1]))
    return corpus_from_clips(np.stack(clips), fps=1, meta={"toy": "bimodal"})


def mode_of(clip):
    """+1 if the pair is split along x, -1 if along z."""
    d = clip[0, :, 0, POS].mean(axis=0) - clip[1, :, 0, POS].mean(axis=0)
    return 1 if abs(d[0]) > abs(d[2]) else -1
