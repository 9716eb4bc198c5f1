"""Rewards, schedules, supervised and PPO updates, samplers."""

from __future__ import annotations

import copy

import numpy as np
import pytest

from gridhouse import nn, tensor as T
from gridhouse import trainer as TR
from gridhouse.agents import HierarchicalAgent, ModelConfig
from gridhouse.classes import desk_registry
from gridhouse.episodes import run_expert_episode
from gridhouse.planner import ExpertStep
from gridhouse.scenes import builtin_templates
from gridhouse.skills import SceneSession, Skill, SubGoal, sample_skill_episode
from gridhouse.tasks import build_vocab, generate_task, remaining_fn, task_initial_state
from gridhouse.trainer import (EpisodeBatch, LossWeights, PPOConfig,
                               PretrainProgress, RewardConfig, ScheduleConfig,
                               compute_gae, compute_reward, epsilon_at,
                               multi_task_sample, ppo_update, pretrain,
                               run_skill_episode, teacher_forcing_update)
from gridhouse.world import InteractionMode, PrimitiveAction, randomize_scene

REG = desk_registry()
VOCAB = build_vocab(REG)
CFG = ModelConfig(num_classes=len(REG), vocab_size=len(VOCAB))
TEMPLATES = builtin_templates()


# --------------------------------------------------------------------------
# rewards and schedules


def _expert(action, point):
    return ExpertStep(SubGoal(Skill.Pickup, 13), action, point, 7)


def test_reward_all_correct_interactive_is_22_5():
    state = randomize_scene(TEMPLATES[0], 0)
    ex = _expert(PrimitiveAction.Pickup, (10.0, 20.0))
    r = compute_reward(state, PrimitiveAction.Pickup, (10.0, 20.0),
                       SubGoal(Skill.Pickup, 13), ex, success=True,
                       target_visible=True)
    assert r == 22.5


def test_reward_goto_contributes_no_point_term():
    state = randomize_scene(TEMPLATES[0], 0)
    ex = ExpertStep(SubGoal(Skill.GoTo, 13), PrimitiveAction.MoveAhead, None, 7)
    r = compute_reward(state, PrimitiveAction.MoveAhead, (1.0, 1.0),
                       SubGoal(Skill.GoTo, 13), ex, success=True,
                       target_visible=True)
    assert r == 22.0  # success + visible + act, no point share


def test_reward_all_zero():
    state = randomize_scene(TEMPLATES[0], 0)
    ex = _expert(PrimitiveAction.Pickup, None)
    r = compute_reward(state, PrimitiveAction.MoveAhead, None,
                       SubGoal(Skill.Pickup, 13), ex, success=False,
                       target_visible=False)
    assert r == 0.0


def test_reward_point_kernel_decays():
    state = randomize_scene(TEMPLATES[0], 0)
    ex = _expert(PrimitiveAction.Pickup, (10.0, 20.0))
    near = compute_reward(state, PrimitiveAction.Pickup, (10.5, 20.0),
                          SubGoal(Skill.Pickup, 13), ex, success=False,
                          target_visible=False)
    far = compute_reward(state, PrimitiveAction.Pickup, (20.0, 20.0),
                         SubGoal(Skill.Pickup, 13), ex, success=False,
                         target_visible=False)
    assert 0 < far < near < 0.5 + 1e-9


def test_epsilon_linear_exact():
    assert epsilon_at(0.0, 1.0, 0.0) == 1.0
    assert epsilon_at(0.5, 1.0, 0.0) == 0.5
    assert epsilon_at(1.0, 1.0, 0.0) == 0.0
    assert epsilon_at(1.0, 1.0, 0.6) == 0.6
    assert epsilon_at(0.25, 1.0, 0.6) == 1.0 + 0.25 * (0.6 - 1.0)


def test_gru_sequence_matches_step_composition():
    cell = nn.GRUCell(np.random.default_rng(0), 5, 4)
    xs = np.random.default_rng(1).normal(size=(6, 5))
    h = np.zeros(4)
    seq = nn.gru_sequence(cell, xs, h).data
    cur = T.Tensor(h)
    for t in range(6):
        cur = nn.gru_step(cell, xs[t], cur)
        np.testing.assert_allclose(seq[t], cur.data, atol=1e-12)


# --------------------------------------------------------------------------
# GAE and PPO invariants


def test_gae_matches_hand_reference():
    rewards = [1.0, 0.0, 2.0]
    values = [0.5, 0.4, 0.3]
    dones = [False, False, True]
    gamma, lam = 0.9, 0.8
    adv, ret = compute_gae(rewards, values, dones, gamma, lam)
    # hand rollout from the back
    d2 = 2.0 - 0.3
    a2 = d2
    d1 = 0.0 + gamma * 0.3 - 0.4
    a1 = d1 + gamma * lam * a2
    d0 = 1.0 + gamma * 0.4 - 0.5
    a0 = d0 + gamma * lam * a1
    np.testing.assert_allclose(adv, [a0, a1, a2], atol=1e-12)
    np.testing.assert_allclose(ret, np.array([a0, a1, a2]) + values, atol=1e-12)


def test_ppo_clip_formulas():
    adv = T.Tensor(np.array([2.0, -1.0]))
    ratio_big = T.Tensor(np.array([1.4, 1.4]))  # 1 + 2*clip at clip=0.2
    un = T.mul(ratio_big, adv)
    cl = T.mul(T.clip(ratio_big, 0.8, 1.2), adv)
    got = TR._elementwise_min(un, cl).data
    np.testing.assert_allclose(got, [1.2 * 2.0, 1.4 * -1.0])
    # ratio exactly 1: surrogate equals the advantage itself
    ratio_one = T.Tensor(np.ones(2))
    same = TR._elementwise_min(T.mul(ratio_one, adv), T.mul(ratio_one, adv)).data
    np.testing.assert_allclose(same, adv.data)
    # zero advantages: no policy gradient through the surrogate
    logits = T.Tensor(np.zeros((2, 3)), requires_grad=True)
    logp = nn.log_prob_rows(logits, [0, 1])
    surr = T.mean(T.mul(T.exp(logp - logp.data), np.zeros(2)))
    surr.backward()
    np.testing.assert_allclose(logits.grad, np.zeros((2, 3)))


def _collect_buffer(agent, n_steps=40, seed=0):
    rng = np.random.default_rng(seed)
    session = SceneSession(TEMPLATES[:2], seed)
    buffer = []
    while len(buffer) < n_steps:
        try:
            ep = sample_skill_episode(session.state, rng)
        except Exception:
            session.reset_scene()
            continue
        samples, _, _ = run_skill_episode(agent, ep, InteractionMode.HARD, rng,
                                          0.5, CFG, RewardConfig(),
                                          collect_ppo=True)
        if samples:
            with T.no_grad():
                logp, value, _ = TR._policy_logp_value(agent, samples, CFG)
            for k, s in enumerate(samples):
                s.logp = float(logp.data[k])
                s.value = float(value.data[k])
            buffer.extend(samples)
        session.reset_scene()
    return buffer[:n_steps]


def test_ppo_ratio_is_one_at_behavior_snapshot():
    agent = HierarchicalAgent(np.random.default_rng(0), CFG)
    buffer = _collect_buffer(agent, 24)
    with T.no_grad():
        logp, _, _ = TR._policy_logp_value(agent, buffer, CFG)
    old = np.array([s.logp for s in buffer])
    np.testing.assert_allclose(np.exp(logp.data - old), np.ones(len(buffer)),
                               atol=1e-12)


def test_ppo_update_runs_and_changes_params():
    agent = HierarchicalAgent(np.random.default_rng(0), CFG)
    buffer = _collect_buffer(agent, 32)
    before = agent.interact.action_head.w.data.copy()
    opt = nn.Adam(agent.parameters(), lr=1e-3)
    ppo_update(agent, buffer, opt, CFG, PPOConfig(epochs=1, minibatch=16),
               np.random.default_rng(0))
    assert not np.allclose(before, agent.interact.action_head.w.data)
    with pytest.raises(TR.EmptyBuffer):
        ppo_update(agent, [], opt, CFG, PPOConfig(), np.random.default_rng(0))


# --------------------------------------------------------------------------
# supervised updates


def _expert_batch(agent, n=24, seed=3):
    rng = np.random.default_rng(seed)
    session = SceneSession(TEMPLATES[:2], seed)
    batch = []
    while len(batch) < n:
        try:
            ep = sample_skill_episode(session.state, rng)
        except Exception:
            session.reset_scene()
            continue
        samples, _, _ = run_skill_episode(agent, ep, InteractionMode.HARD,
                                          rng, 1.0, CFG)
        batch.extend(samples)
        session.reset_scene()
    return batch[:n]


def test_tf_loss_finite_and_decreases_on_fixed_batch():
    agent = HierarchicalAgent(np.random.default_rng(1), CFG)
    batch = _expert_batch(agent)
    opt = nn.Adam(agent.parameters(), lr=1e-3)
    losses = [teacher_forcing_update(agent, batch, opt, CFG) for _ in range(100)]
    assert np.isfinite(losses).all()
    assert losses[-1] < losses[0]
    assert min(losses[-10:]) < min(losses[:10])


def test_tf_update_rejects_empty_batch():
    agent = HierarchicalAgent(np.random.default_rng(1), CFG)
    opt = nn.Adam(agent.parameters())
    with pytest.raises(TR.MissingLabels):
        teacher_forcing_update(agent, [], opt, CFG)


def test_recovery_label_stream_contains_reversal_before_resume():
    # inject one wrong reversible interaction into an expert task episode;
    # the sub-goal label stream must insert the reversal before resuming
    rng = np.random.default_rng(5)
    task = generate_task("EXIN", "pickup", 0, TEMPLATES[1], 77, rng)
    state = task_initial_state(task, TEMPLATES[1])
    from gridhouse.world import INTERACTIVE_ACTIONS, cached_render, resolve_target

    injected = {}

    def intervene(t, cur, geom, obs, ex):
        if injected or ex.action not in INTERACTIVE_ACTIONS:
            return None
        # pick any visible wrong target for a reversible wrong action
        for iid, cells in obs.visible_instance_cells().items():
            if iid == ex.target:
                continue
            o = cur.obj(iid)
            if cur.cls(o).pickupable and cur.agent.held is None:
                pt = (cells[0][0] + .5, cells[0][1] + .5)
                if resolve_target(cur, obs, pt, InteractionMode.HARD, geom) == iid:
                    injected["target"] = iid
                    return (PrimitiveAction.Pickup, pt)
        return None

    traj = run_expert_episode(state, remaining_fn(task), InteractionMode.HARD,
                              max_steps=task.max_steps, intervene=intervene)
    if not injected:
        pytest.skip("no injectable wrong pickup surfaced")
    subs = traj.subgoal_sequence
    put_idx = [i for i, s in enumerate(subs) if s.skill is Skill.Put]
    assert put_idx, subs
    from gridhouse.tasks import task_success
    assert task_success(task, traj)


def test_multi_task_sample_proportions_within_3_sigma():
    class Fake:
        def __init__(self, family):
            self.family = family

    counts = {"SHIF": 2739, "LHIF": 8763, "IQA": 19728, "EXIN": 2257}
    scale = 30
    episodes = []
    for fam, n in counts.items():
        episodes.extend(Fake(fam) for _ in range(max(1, round(n / scale))))
    rng = np.random.default_rng(123)
    draws = 100_000
    got = {f: 0 for f in counts}
    for _ in range(draws):
        got[multi_task_sample(episodes, rng).family] += 1
    total_paper = sum(counts.values())
    for fam, n in counts.items():
        p = n / total_paper
        sigma = np.sqrt(p * (1 - p) / draws)
        assert abs(got[fam] / draws - p) < 3 * sigma, fam


def test_single_family_config_restricts_sampling():
    class Fake:
        def __init__(self, family):
            self.family = family

    episodes = [Fake("IQA")] * 5
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert multi_task_sample(episodes, rng).family == "IQA"


# --------------------------------------------------------------------------
# pretrain driver


def test_pretrain_stage_order_and_zero_skip():
    agent = HierarchicalAgent(np.random.default_rng(0), CFG)
    sched = ScheduleConfig(tf_steps=40, sf_steps=0, ppo_steps=0)
    _, prog = pretrain(agent, TEMPLATES[:2], sched, CFG, seed=2, vocab=VOCAB,
                       qa_fraction=0.0)
    assert prog.stage == "done"
    assert prog.steps_done["tf"] >= 40
    assert prog.steps_done["sf"] == 0 and prog.steps_done["ppo"] == 0


def test_pretrain_mid_stage_resume_is_exact():
    sched_full = ScheduleConfig(tf_steps=120, sf_steps=0, ppo_steps=0,
                                update_every=32)

    def fresh():
        return HierarchicalAgent(np.random.default_rng(0), CFG)

    a1 = fresh()
    pretrain(a1, TEMPLATES[:2], sched_full, CFG, seed=4, vocab=VOCAB,
             qa_fraction=0.0)

    a2 = fresh()
    rng = np.random.default_rng(np.random.SeedSequence([4, 77]))
    session = SceneSession(TEMPLATES[:2], 4)
    opt = nn.Adam(a2.parameters(), lr=sched_full.lr, clip_norm=sched_full.grad_clip)
    prog = PretrainProgress()
    half = ScheduleConfig(tf_steps=60, sf_steps=0, ppo_steps=0, update_every=32)
    pretrain(a2, TEMPLATES[:2], half, CFG, seed=4, vocab=VOCAB, qa_fraction=0.0,
             progress=prog, opt=opt, rng=rng, session=session)
    prog.stage = "tf"  # resume inside the same stage
    pretrain(a2, TEMPLATES[:2], sched_full, CFG, seed=4, vocab=VOCAB,
             qa_fraction=0.0, progress=prog, opt=opt, rng=rng, session=session)

    for (n1, p1), (n2, p2) in zip(a1.named_parameters(), a2.named_parameters()):
        assert n1 == n2
        np.testing.assert_array_equal(p1.data, p2.data), n1
