import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from apr import raycam
from apr.episode import (EpisodeConfig, OraclePolicy, ScriptedPolicy, ViewCollector, collect_views,
                         compute_reach_reward, compute_sparse_reward, replay_episode, run_episode,
                         static_cameras)
from apr.raycam import project
from apr.scene import GraspOutcome, SceneObject, WorldConfig, WorldState, Gripper, spawn

FAST = EpisodeConfig(render_size=64, obs_size=16)


def lifted_at(d):
    return GraspOutcome(True, True, 1, (d, 0.0, 0.05))


# ---------------------------------------------------------------- rewards

@pytest.mark.parametrize("outcome,expected", [
    (lifted_at(0.05), 1.0),
    (lifted_at(0.12), 0.0),
    (GraspOutcome(True, False, None, (0.01, 0.0, 0.05)), 0.0),
    (GraspOutcome(False, False, None, None), 0.0),
    (lifted_at(0.10), 1.0),
])
def test_sparse_reward_table(outcome, expected):
    assert compute_sparse_reward(outcome, np.array([0.0, 0.0, 0.05])) == expected


def test_sparse_reward_target_gate():
    fix = np.array([0.0, 0.0, 0.05])
    assert compute_sparse_reward(lifted_at(0.0), fix, target=1) == 1.0
    assert compute_sparse_reward(lifted_at(0.0), fix, target=2) == 0.0


def test_reach_reward_examples():
    fix = np.array([0.0, 0.0, 0.0])
    assert compute_reach_reward([0.10, 0, 0], [0.15, 0, 0], fix) == pytest.approx(0.05)
    assert compute_reach_reward([0.10, 0, 0], [0.15, 0, 0], fix, alpha=2.0) == pytest.approx(0.10)
    assert compute_reach_reward([0.1, 0.2, 0], [0.1, 0.2, 0], fix) == 0.0
    assert compute_reach_reward([0.3, 0.4, 0], None, fix, mode="distance") == pytest.approx(-0.5)


def test_reach_reward_telescopes():
    r = np.random.default_rng(0)
    for _ in range(1000):
        alpha = r.uniform(0.1, 3.0)
        fix = r.uniform(-0.3, 0.3, 3)
        path = np.cumsum(r.uniform(-0.05, 0.05, (r.integers(1, 16) + 1, 3)), axis=0)
        total = sum(compute_reach_reward(b, a, fix, alpha) for a, b in zip(path[:-1], path[1:]))
        d0, dT = np.linalg.norm(path[0] - fix), np.linalg.norm(path[-1] - fix)
        assert abs(total - alpha * (d0 - dT)) < 1e-9


# ---------------------------------------------------------------- episodes

def one_object_world(pos):
    obj = SceneObject(1, "box", (0.02, 0.02, 0.02), tuple(pos), 0.0, 1)
    cfg = WorldConfig()
    return WorldState((obj,), Gripper(cfg.start_tooltip, opening=cfg.max_opening), cfg)


class GoTo:
    """Moves over ``goal`` then descends onto it; the fixation point is given separately."""

    def __init__(self, fixation, goal):
        self.point, self.goal = np.asarray(fixation), np.asarray(goal)

    def fixation(self, views, ctx):
        return self.point

    def grasp(self, views, ctx):
        tip = np.asarray(ctx.world.gripper.tooltip)
        if np.linalg.norm(tip[:2] - self.goal[:2]) > 1e-6:
            d = np.array([*(self.goal[:2] - tip[:2]), 0.0])
        else:
            d = self.goal - tip
        return np.concatenate([np.clip(d / 0.05, -1, 1), np.zeros(ctx.config.dof - 3)])


def test_never_descending_runs_full_length(rng):
    rec = run_episode(spawn(0, 3), ScriptedPolicy([0, 0, 0.05], []), FAST, rng)
    assert rec.length == 15
    assert not rec.outcome.initiated and rec.sparse_reward == 0.0
    assert rec.steps[-1].done and not any(s.done for s in rec.steps[:-1])


def test_descending_onto_fixated_object_rewarded(rng):
    goal = (0.1, -0.05, 0.02)
    rec = run_episode(one_object_world(goal), GoTo(goal, goal), FAST, rng)
    assert rec.outcome.lifted and rec.sparse_reward == 1.0
    assert rec.steps[-1].reward == pytest.approx(rec.steps[-1].reach_reward + 1.0)


def test_grasp_away_from_fixation_not_rewarded(rng):
    obj = (0.15, 0.0, 0.02)
    rec = run_episode(one_object_world(obj), GoTo((0.0, 0.0, 0.02), obj), FAST, rng)
    assert rec.outcome.lifted and rec.outcome.grasped_object == 1
    assert rec.sparse_reward == 0.0


def test_early_termination_at_first_initiation(rng):
    goal = (0.0, 0.0, 0.02)
    rec = run_episode(one_object_world(goal), GoTo(goal, goal), FAST, rng)
    zs = [s.tooltip_after[2] for s in rec.steps]
    first = next(i for i, z in enumerate(zs) if z < 0.07)
    assert rec.length == first + 1 <= 15
    assert rec.steps[-1].done


def test_every_view_fixation_aligned():
    cfg = EpisodeConfig(render_size=64, obs_size=16)
    r = np.random.default_rng(4)
    for seed in range(3):
        rec = run_episode(spawn(seed, 4), OraclePolicy(), cfg, r)
        assert not rec.failed
        for step in rec.steps:
            assert len(step.views) == 3
            for view in step.views:
                px, py, front = project(rec.fixation, view.camera.with_resolution(256))
                assert front and abs(px - 128) <= 0.5 and abs(py - 128) <= 0.5


def test_collect_views_centering_and_seed():
    w = spawn(1, 3)
    fix = np.array(w.objects[0].position)
    a = collect_views(w, fix, np.random.default_rng(8), FAST)
    b = collect_views(w, fix, np.random.default_rng(8), FAST)
    assert len(a) == 3
    for va, vb in zip(a, b):
        assert np.array_equal(va.image, vb.image) and np.array_equal(va.v, vb.v)
        px, py, _ = project(fix, va.camera.with_resolution(256))
        assert abs(px - 128) <= 0.5 and abs(py - 128) <= 0.5
        assert va.image.shape == (16, 16, 3) and va.image.dtype == np.uint8


def test_passive_mode_uses_static_cameras(rng):
    cfg = EpisodeConfig(mode="passive", render_size=64, obs_size=16)
    col = ViewCollector(cfg)
    views = col.collect(spawn(2, 3), np.zeros(3), rng)
    cams = static_cameras(cfg, WorldConfig())
    assert col.sampler.attempts == 0
    for v, c in zip(views, cams):
        assert np.array_equal(v.camera.position, c.position)
    for c in cams:
        assert np.linalg.norm(c.position - WorldConfig().tray_center) == pytest.approx(1.0)


def test_passive_and_active_share_reward_semantics():
    goal = (0.05, 0.05, 0.02)
    out = []
    for mode in ("active", "passive"):
        cfg = EpisodeConfig(mode=mode, render_size=32, obs_size=16)
        rec = run_episode(one_object_world(goal), GoTo(goal, goal), cfg, np.random.default_rng(0))
        out.append(([s.reward for s in rec.steps], rec.outcome, rec.sparse_reward))
    assert out[0] == out[1]


def test_fixation_transition_carries_sparse_reward_only(rng):
    goal = (0.1, 0.1, 0.02)
    rec = run_episode(one_object_world(goal), GoTo(goal, goal), FAST, rng)
    views, action, reward = rec.fixation_transition()
    assert reward == rec.sparse_reward == 1.0
    assert len(views) == 2
    assert np.all(np.abs(action) < 1)


def test_targeted_mask_and_fixation():
    cfg = EpisodeConfig(targeted=True, render_size=64, obs_size=32)
    w = spawn(6, 3)
    rec = run_episode(w, OraclePolicy(), cfg, np.random.default_rng(1))
    assert rec.target in {o.id for o in w.objects}
    np.testing.assert_allclose(rec.fixation, w.object(rec.target).position)
    img = rec.steps[0].views[0].image
    assert img.shape[-1] == 4 and set(np.unique(img[..., 3])) <= {0, 255}
    assert (img[..., 3] == 255).any()


def test_targeted_wrong_object_not_rewarded(rng):
    cfg = EpisodeConfig(targeted=True, render_size=32, obs_size=16)
    objs = (SceneObject(1, "box", (0.02,) * 3, (0.1, 0.0, 0.02), 0.0, 1),
            SceneObject(2, "box", (0.02,) * 3, (0.15, 0.0, 0.02), 0.0, 2))
    wc = WorldConfig()
    w = WorldState(objs, Gripper(wc.start_tooltip, opening=wc.max_opening), wc)
    for seed in range(6):
        r = np.random.default_rng(seed)
        tgt = int(w.objects[np.random.default_rng(seed).integers(2)].id)
        other = 2 if tgt == 1 else 1
        rec = run_episode(w, GoTo(None, w.object(other).position), cfg, r)
        assert rec.target == tgt and rec.outcome.grasped_object == other
        assert rec.sparse_reward == 0.0


def test_episode_deterministic():
    a = run_episode(spawn(3, 3), OraclePolicy(), FAST, np.random.default_rng(5))
    b = run_episode(spawn(3, 3), OraclePolicy(), FAST, np.random.default_rng(5))
    assert a.length == b.length and a.sparse_reward == b.sparse_reward
    for sa, sb in zip(a.steps, b.steps):
        for va, vb in zip(sa.views, sb.views):
            assert np.array_equal(va.image, vb.image)


def test_replay_file_reexecutes(rng, tmp_path):
    rec = run_episode(spawn(7, 5), OraclePolicy(), FAST, rng)
    path = tmp_path / "ep.json"
    path.write_text(json.dumps(rec.to_replay_dict()))
    outcome, reward = replay_episode(json.loads(path.read_text()), FAST)
    assert outcome == rec.outcome and reward == rec.sparse_reward


def test_unreachable_fixation_marks_failure(rng):
    class Far(ScriptedPolicy):
        pass
    cfg = EpisodeConfig(render_size=32, obs_size=16)
    col = ViewCollector(cfg)
    col.sampler.max_tries = 2
    wc = WorldConfig(tray_half=(3.0, 3.0))   # fixation workspace now reaches far outside the head's shell
    w = WorldState(spawn(0, 1).objects, Gripper(wc.start_tooltip), wc)
    rec = run_episode(w, Far([3.0, 3.0, 0.0], []), cfg, rng, col)
    assert rec.failed and "viewpoint" in rec.error
