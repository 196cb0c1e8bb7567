import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from coordsynth.coordination import (
    CoordinationError, GroupAssignment, SceneConfig, SpawnError, TransitionPlan, add_character, advance,
    apply_plan, form_quads, initial_grouping, initial_positions, matchings_of, pad_virtual, plan_step,
    run_scene, start_scene, synthesize_step,
)
from coordsynth.guidance import ConstraintSet
from coordsynth.motion import HIP, POS

NOGUIDE = ConstraintSet()


@pytest.mark.parametrize("n, padded, n_virtual", [(8, 8, 0), (5, 8, 3), (2, 4, 2), (16, 16, 0), (9, 12, 3)])
def test_pad_virtual(n, padded, n_virtual):
    size, flags = pad_virtual(n)
    assert size == padded and sum(flags) == n_virtual
    assert not any(flags[:n]) and all(flags[n:])


def test_pad_virtual_rejects_one():
    with pytest.raises(CoordinationError):
        pad_virtual(1)


def _line(xs):
    return np.array([[x, 0.0, 0.0] for x in xs])


def test_initial_grouping_examples():
    assert initial_grouping(_line([0, 1, 10, 11])).pairs == ((0, 1), (2, 3))
    assert initial_grouping(_line([0, 10, 1, 11])).pairs == ((0, 2), (1, 3))
    assert initial_grouping(_line([0, 3])).pairs == ((0, 1),)


def test_initial_grouping_matches_brute_force_here():
    hips = _line([0, 1, 10, 11])
    cost = {}
    for m in matchings_of((0, 1, 2, 3)):
        cost[m] = sum(np.linalg.norm(hips[a] - hips[b]) for a, b in m)
    assert initial_grouping(hips).pairs == min(cost, key=cost.get)


def test_grouping_tie_break_on_circle():
    ang = np.arange(6) * np.pi / 3
    hips = np.stack([np.cos(ang), np.zeros(6), np.sin(ang)], axis=1)
    first = initial_grouping(hips)
    assert first == initial_grouping(hips.copy())
    assert first.pairs == ((0, 1), (2, 3), (4, 5))


def test_form_quads_examples():
    hips = _line([0, 0, 1, 1, 10, 10, 11, 11])
    a = GroupAssignment(((0, 1), (2, 3), (4, 5), (6, 7)))
    assert form_quads(a, hips) == [((0, 1), (2, 3)), ((4, 5), (6, 7))]
    two = GroupAssignment(((0, 1), (2, 3)))
    assert form_quads(two, _line([0, 1, 5, 6])) == [((0, 1), (2, 3))]
    same = _line([0] * 8)
    assert form_quads(a, same) == [((0, 1), (2, 3)), ((4, 5), (6, 7))]
    with pytest.raises(CoordinationError):
        form_quads(GroupAssignment(((0, 1),)), _line([0, 1]))


def test_assignment_validation():
    with pytest.raises(CoordinationError):
        GroupAssignment(((0, 1), (1, 2)))
    with pytest.raises(CoordinationError):
        GroupAssignment(((0, 1), (3, 4)))
    assert GroupAssignment(((3, 2), (1, 0))).pairs == ((0, 1), (2, 3))


def test_matchings_are_the_three_perfect_matchings():
    quad = (3, 7, 1, 9)
    ms = matchings_of(quad)
    brute = set()
    for perm in itertools.permutations(quad):
        brute.add(tuple(sorted([tuple(sorted(perm[:2])), tuple(sorted(perm[2:]))])))
    assert set(ms) == brute and len(ms) == 3


def test_apply_plan():
    a = GroupAssignment(((0, 1), (2, 3), (4, 5), (6, 7)))
    assert apply_plan(a, [TransitionPlan((0, 1, 2, 3), ((0, 1), (2, 3)))]) == a
    swapped = apply_plan(a, [TransitionPlan((0, 1, 2, 3), ((0, 2), (1, 3)))])
    assert swapped.pairs == ((0, 2), (1, 3), (4, 5), (6, 7))
    with pytest.raises(CoordinationError):
        apply_plan(a, [TransitionPlan((0, 1, 2, 3), ((0, 2), (1, 3))),
                       TransitionPlan((2, 3, 4, 5), ((2, 4), (3, 5)))])
    with pytest.raises(CoordinationError):
        apply_plan(a, [TransitionPlan((1, 2, 4, 5), ((1, 2), (4, 5)))])
    with pytest.raises(CoordinationError):
        TransitionPlan((0, 1, 2, 3), ((0, 4), (1, 2)))


@given(st.permutations(range(8)), st.lists(st.integers(0, 2), min_size=2, max_size=2))
def test_apply_plan_keeps_perfect_matching(order, choice):
    a = GroupAssignment(tuple((order[2 * k], order[2 * k + 1]) for k in range(4)))
    quads = form_quads(a, np.zeros((8, 3)))
    plans = []
    for (p, q), c in zip(quads, choice):
        members = tuple(sorted(p + q))
        plans.append(TransitionPlan(members, matchings_of(members)[c]))
    b = apply_plan(a, plans)
    assert sorted(i for p in b.pairs for i in p) == list(range(8))


def test_initial_positions_grid():
    pos = initial_positions(8, 3.0, 0.8)
    assert pos.shape == (8, 3)
    np.testing.assert_allclose(np.linalg.norm(pos[0] - pos[1]), 0.8)
    centers = (pos[0::2] + pos[1::2]) / 2
    np.testing.assert_allclose(centers[:, [0, 2]], [[0, 0], [3, 0], [0, 3], [3, 3]])
    assert SceneConfig().grid_spacing == pytest.approx(1.0 + 0.8)
    assert SceneConfig(spacing=2.5).grid_spacing == 2.5


def _first_step(gen, n=4, seed=0, guidance=True, **kw):
    spawn = initial_positions(n, 2.0, 0.8)
    return synthesize_step(None, initial_grouping(spawn), gen, NOGUIDE, seed, spawn=spawn, guidance=guidance, **kw)


def test_single_group_sees_no_others(tiny_generator):
    seen = []
    _first_step(tiny_generator, n=2, on_guidance=lambda pair, others: seen.append((pair, len(others))))
    assert seen == [((0, 1), 0)]


def test_groups_generated_in_order(tiny_generator):
    seen = []
    out = _first_step(tiny_generator, n=6, on_guidance=lambda pair, others: seen.append((pair, others)))
    assert [p for p, _ in seen] == [(0, 1), (2, 3), (4, 5)]
    assert [len(o) for _, o in seen] == [0, 1, 2]
    assert np.array_equal(seen[2][1][0], out.data[[0, 1]])
    assert np.array_equal(seen[2][1][1], out.data[[2, 3]])


def test_first_step_places_pairs_at_spawn(tiny_generator):
    out = _first_step(tiny_generator, n=4, guidance=False)
    spawn = initial_positions(4, 2.0, 0.8)
    mid = out.data[:, 0, HIP, POS].reshape(2, 2, 3).mean(axis=1)
    want = spawn.reshape(2, 2, 3).mean(axis=1)
    # the generator learned pair-centered clips, so only approximately
    np.testing.assert_allclose(mid[:, [0, 2]], want[:, [0, 2]], atol=0.1)


def test_synthesize_step_deterministic_and_seam(tiny_generator):
    a = _first_step(tiny_generator, seed=3)
    assert np.array_equal(a.data, _first_step(tiny_generator, seed=3).data)
    assign = initial_grouping(initial_positions(4, 2.0, 0.8))
    b = synthesize_step(a, assign, tiny_generator, NOGUIDE, 9, k_overlap=4)
    c = synthesize_step(a, assign, tiny_generator, NOGUIDE, 9, k_overlap=4)
    assert np.array_equal(b.data, c.data)
    np.testing.assert_allclose(b.data[:, :4], a.data[:, -4:], atol=1e-12)


def test_synthesize_step_errors(tiny_generator):
    assign = GroupAssignment(((0, 1), (2, 3)))
    with pytest.raises(CoordinationError):
        synthesize_step(None, assign, tiny_generator, NOGUIDE, 0)
    first = _first_step(tiny_generator, n=4)
    with pytest.raises(CoordinationError):
        synthesize_step(first, GroupAssignment(((0, 1),)), tiny_generator, NOGUIDE, 0)


def test_static_policy_keeps_assignment(tiny_generator):
    cfg = SceneConfig(n_characters=4, T=3, seed=1)
    state = start_scene(cfg, tiny_generator)
    start = state.assignment
    rng = np.random.default_rng(0)
    while state.t < cfg.T:
        advance(state, tiny_generator, plan_step(state, "static", rng))
        assert state.assignment == start
    assert len(state.plans) == 2


def test_random_policy_reproducible(tiny_generator):
    cfg = SceneConfig(n_characters=8, T=4, seed=5)
    tl1, log1 = run_scene(cfg, tiny_generator, "random")
    tl2, log2 = run_scene(cfg, tiny_generator, "random")
    assert log1 == log2
    assert all(np.array_equal(a.data, b.data) for a, b in zip(tl1.steps, tl2.steps))


def test_unknown_policy(tiny_generator):
    with pytest.raises(CoordinationError):
        run_scene(SceneConfig(n_characters=4, T=2), tiny_generator, "greedy")


def test_odd_scene_is_padded(tiny_generator):
    tl, _ = run_scene(SceneConfig(n_characters=5, T=2, seed=2), tiny_generator, "random")
    assert tl.N == 8 and tl.virtual_flags == (False,) * 5 + (True,) * 3
    assert tl.overlap == 4


def test_add_character_pads_to_eight(tiny_generator):
    cfg = SceneConfig(n_characters=4, T=3, seed=0)
    state = start_scene(cfg, tiny_generator)
    add_character(state, np.array([10.0, 0.0, 10.0]))
    assert state.N == 8 and sum(state.flags) == 3 and state.flags[4] is False
    assert all(s.N == 8 for s in state.steps)
    np.testing.assert_allclose(state.hips()[4][[0, 2]], [10.0, 10.0])
    advance(state, tiny_generator, plan_step(state, "random", np.random.default_rng(0)))
    tl = state.timeline()
    assert tl.steps[0].virtual_flags[4] is True and tl.steps[-1].virtual_flags[4] is False


def test_add_character_reuses_virtual_slot(tiny_generator):
    state = start_scene(SceneConfig(n_characters=5, T=3, seed=0), tiny_generator)
    add_character(state, np.array([20.0, 0.0, 0.0]))
    assert state.N == 8 and sum(state.flags) == 2 and not state.flags[5]


def test_spawn_too_close(tiny_generator):
    state = start_scene(SceneConfig(n_characters=4, T=2, seed=0), tiny_generator)
    with pytest.raises(SpawnError, match="spawn too close"):
        add_character(state, state.hips()[2].copy())


def test_run_scene_with_event_is_deterministic(tiny_generator):
    cfg = SceneConfig(n_characters=4, T=3, seed=4)
    tl1, log1 = run_scene(cfg, tiny_generator, "random", events=[(1, 9.0, 9.0)])
    tl2, log2 = run_scene(cfg, tiny_generator, "random", events=[(1, 9.0, 9.0)])
    assert tl1.N == 8 and log1 == log2
    assert all(np.array_equal(a.data, b.data) for a, b in zip(tl1.steps, tl2.steps))
