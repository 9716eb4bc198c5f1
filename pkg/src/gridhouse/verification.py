"""Finite-difference verification of every differentiable op and of both
policy networks, on tiny random configurations."""

from __future__ import annotations

import numpy as np

from . import nn, tensor as T
from .agents import FlatAgent, HierarchicalAgent, ModelConfig
from .skills import Skill
from .world import NO_INSTANCE, Observation


def grad_check_sampled(fn, inputs, rng, n_coords=24, h=1e-5, rel_floor=1e-3):
    """Central differences on a random coordinate subset of the inputs."""
    inputs = [T.as_tensor(x) for x in inputs]
    for x in inputs:
        x.requires_grad = True
        x.grad = None
    out = fn(*inputs)
    out.backward()
    sizes = np.array([x.data.size for x in inputs])
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(n_coords, total), replace=False)
    bounds = np.cumsum(sizes)
    worst = 0.0
    for flat_idx in picks:
        which = int(np.searchsorted(bounds, flat_idx, side="right"))
        local = int(flat_idx - (bounds[which - 1] if which else 0))
        x = inputs[which]
        flat = x.data.reshape(-1)
        orig = flat[local]
        flat[local] = orig + h
        hi = fn(*inputs).item()
        flat[local] = orig - h
        lo = fn(*inputs).item()
        flat[local] = orig
        fd = (hi - lo) / (2 * h)
        ad = (x.grad.reshape(-1)[local] if x.grad is not None else 0.0)
        err = abs(ad - fd) / max(abs(ad) + abs(fd), rel_floor)
        worst = max(worst, float(err))
    return worst


# --------------------------------------------------------------------------
# op-level checks


def _op_cases(rng):
    def r(*shape, lo=-1.5, hi=1.5):
        return rng.uniform(lo, hi, size=shape)

    heat_tgt = nn.gaussian_kernel_targets(
        [(int(rng.integers(2)), (float(rng.uniform(0, 4)), float(rng.uniform(0, 4))),
          float(rng.uniform(0.5, 3)))
         for _ in range(3)], (2, 4, 4))
    idx = rng.integers(0, 4, size=5)
    cell = nn.GRUCell(np.random.default_rng(int(rng.integers(1 << 30))), 3, 4)
    xg, hg = r(3), r(4)
    # constants captured once: the checked function must not change between
    # finite-difference evaluations
    ls_w = r(3, 4)
    ce_target = int(rng.integers(5))
    l1_target = r(3, 2)
    gll_delta = r(2)

    return {
        "add_mul_div": (lambda a, b: T.sum_(T.div(T.mul(a + b, a), b)),
                        [r(3, 4), r(3, 4, lo=0.5, hi=2.0)]),
        "exp_log": (lambda a: T.sum_(T.log(T.exp(a) + 1.0)), [r(4, 2)]),
        "tanh_sigmoid": (lambda a: T.sum_(T.tanh(T.sigmoid(a))), [r(5)]),
        "relu_softplus": (lambda a: T.sum_(T.relu(a) + T.softplus(a)), [r(6)]),
        "abs_square": (lambda a: T.sum_(T.abs_(a) + T.square(a)),
                       [r(4) + np.sign(r(4)) * 0.2]),
        "clip": (lambda a: T.sum_(T.square(T.clip(a, -0.8, 0.8))), [r(5)]),
        "matmul": (lambda a, b: T.sum_(T.tanh(T.matmul(a, b))), [r(3, 4), r(4, 2)]),
        "conv2d": (lambda x, w, b: T.sum_(T.tanh(T.conv2d(x, w, b, stride=2, pad=1))),
                   [r(1, 2, 5, 5), r(3, 2, 3, 3), r(3)]),
        "permute_reshape": (lambda a: T.sum_(T.square(
            T.reshape(T.permute(a, (0, 2, 1)), (6, 2)))), [r(2, 2, 3)]),
        "gather": (lambda a: T.sum_(T.square(a[idx])), [r(4, 3)]),
        "concat_stack": (lambda a, b: T.sum_(T.tanh(T.concat([a, b], axis=1))),
                         [r(2, 3), r(2, 2)]),
        "log_softmax": (lambda a: T.sum_(T.mul(T.log_softmax(a, axis=-1), ls_w)),
                        [r(3, 4)]),
        "sum_mean": (lambda a: T.square(T.mean(a, axis=0)).sum() +
                     T.square(T.sum_(a, axis=1)).sum(), [r(3, 4)]),
        "cross_entropy": (lambda a: nn.cross_entropy(a, ce_target), [r(5)]),
        "cross_entropy_rows": (lambda a: nn.cross_entropy_rows(a, idx[:3]), [r(3, 4)]),
        "focal_heatmap_loss": (lambda p: nn.focal_heatmap_loss(
            T.clip(T.sigmoid(p), 0.02, 0.98), heat_tgt), [r(2, 4, 4)]),
        "offset_l1_loss": (lambda m: nn.offset_l1_loss(m, l1_target),
                           [l1_target + r(3, 2) + 0.1]),
        "gaussian_log_likelihood": (
            lambda mu, raw: nn.gaussian_log_likelihood(gll_delta, mu,
                                                       T.softplus(raw) + 1e-4),
            [r(2), r(2)]),
        "gru_step": (lambda wz, bz, wr, br, wh, bh: T.square(
            _gru_with(cell, wz, bz, wr, br, wh, bh, xg, hg)).sum(),
            [cell.w_z.data.copy(), cell.b_z.data.copy(), cell.w_r.data.copy(),
             cell.b_r.data.copy(), cell.w_h.data.copy(), cell.b_h.data.copy()]),
        "entropy_rows": (lambda a: nn.entropy_rows(a), [r(3, 4)]),
        "log_prob_rows": (lambda a: T.sum_(nn.log_prob_rows(a, idx[:3])), [r(3, 4)]),
    }


def _gru_with(cell, wz, bz, wr, br, wh, bh, x, h):
    c = nn.GRUCell.__new__(nn.GRUCell)
    nn.Module.__init__(c)
    c.in_dim, c.hidden_dim = cell.in_dim, cell.hidden_dim
    c.w_z, c.b_z, c.w_r, c.b_r, c.w_h, c.b_h = wz, bz, wr, br, wh, bh
    return nn.gru_step(c, x, h)


def micro_model_config(num_classes=3, vocab=7):
    return ModelConfig(num_classes=num_classes, vocab_size=vocab, obs_size=8,
                       d=4, grid=2, hidden=6, task_dim=4, token_dim=3,
                       ctx_dim=2, cond_dim=4, trunk_dim=8, point_dim=4,
                       enc_mid=3)


def random_observation(rng, cfg):
    n = cfg.obs_size
    class_map = rng.integers(0, cfg.num_classes + 3, size=(n, n)).astype(np.int16)
    inst = rng.integers(-1, 4, size=(n, n)).astype(np.int32)
    depth = rng.uniform(0, 8, size=(n, n)).astype(np.float32)
    bits = rng.integers(0, 2, size=(4, n, n)).astype(np.uint8)
    visible = frozenset(int(i) for i in np.unique(inst[inst != NO_INSTANCE]))
    return Observation(n, n, class_map, inst, depth, bits, visible)


def _hier_loss(agent, cfg, rng):
    """Scalar exercising every head: the multi-task episode loss on a
    synthetic two-step episode."""
    from .trainer import EpisodeBatch, StepSample, multitask_episode_loss

    steps = []
    for t in range(2):
        obs = random_observation(rng, cfg)
        fam = ("nav", "interact")[t % 2]
        s = StepSample(
            obs=obs, family=fam, skill=int(rng.integers(8)),
            obj=int(rng.integers(cfg.num_classes)),
            last_action=int(rng.integers(13)),
            expert_action=int(rng.integers(6 if fam == "nav" else 13)),
            hl_skill_label=int(rng.integers(10)),
            hl_obj_label=int(rng.integers(cfg.num_classes)),
            hl_last_action=int(rng.integers(13)),
            hl_last_skill=int(rng.integers(10)),
            hl_last_obj=int(rng.integers(cfg.num_classes)))
        if fam == "interact":
            s.expert_interactive = True
            s.expert_cell = int(rng.integers(cfg.grid * cfg.grid))
            s.expert_delta = (float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1)))
            s.centers = [(int(rng.integers(cfg.num_classes)),
                          (float(rng.uniform(0, cfg.grid)), float(rng.uniform(0, cfg.grid))),
                          0.7)]
        steps.append(s)
    qa = StepSample(obs=random_observation(rng, cfg), family="qa",
                    skill=int(Skill.Answer), obj=cfg.num_classes,
                    last_action=13, expert_action=0,
                    answer_tokens=[1, 2, 3], answer_label=int(rng.integers(6)),
                    hl_skill_label=int(Skill.Answer), hl_obj_label=-1,
                    hl_last_action=13, hl_last_skill=10, hl_last_obj=-1)
    steps.append(qa)
    episode = EpisodeBatch(task_tokens=[1, 4, 2], steps=steps)
    return multitask_episode_loss(agent, episode, cfg, _loss_weights())


def _loss_weights():
    from .trainer import LossWeights
    return LossWeights()


def _flat_loss(agent, cfg, rng):
    from .agents import obs_planes

    obs = [random_observation(rng, cfg) for _ in range(2)]
    cmap, planes = obs_planes(obs, cfg.num_classes)
    z_img = agent.sub_encoder(cmap, planes)
    z_task = agent.task_enc([[1, 2], [3, 1]])
    cond = agent.policy.conditioning([3, 5], z_task=z_task)
    logits, value, (grid_logits, mu, nu, heat) = agent.policy.forward(cond, z_img)
    loss = nn.cross_entropy_rows(logits, rng.integers(0, 13, size=2))
    loss = loss + nn.cross_entropy_rows(grid_logits, rng.integers(0, 4, size=2))
    cells = np.array([0, 3])
    mu_sel = T.gather(mu, (np.arange(2), slice(None), cells))
    nu_sel = T.gather(nu, (np.arange(2), slice(None), cells))
    loss = loss + T.mul(nn.gaussian_log_likelihood(rng.uniform(-1, 1, size=(2, 2)),
                                                   mu_sel, nu_sel), -0.1)
    ans = agent.answer_logits(cond, z_img)
    loss = loss + nn.cross_entropy_rows(ans, rng.integers(0, 6, size=2))
    return loss + T.mul(T.sum_(T.square(value)), 0.5)


def _network_check(kind, rng, n_coords, h=1e-5, rel_floor=1e-3):
    """FD check of a whole policy network's parameters on one random
    configuration: perturbations hit the live parameter arrays, labels are
    redrawn identically from a pinned seed."""
    cfg = micro_model_config()
    seed = int(rng.integers(1 << 30))
    if kind == "hier":
        agent = HierarchicalAgent(np.random.default_rng(seed), cfg)
        loss_fn = _hier_loss
    else:
        agent = FlatAgent(np.random.default_rng(seed), cfg)
        loss_fn = _flat_loss
    params = agent.parameters()
    draw = int(rng.integers(1 << 30))

    def evaluate(build_graph):
        for p in params:
            p.grad = None
        if build_graph:
            return loss_fn(agent, cfg, np.random.default_rng(draw))
        with T.no_grad():
            return loss_fn(agent, cfg, np.random.default_rng(draw))

    out = evaluate(True)
    out.backward()
    grads = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
             for p in params]
    sizes = np.array([p.data.size for p in params])
    bounds = np.cumsum(sizes)
    picks = rng.choice(int(sizes.sum()), size=n_coords, replace=False)
    worst = 0.0
    for flat_idx in picks:
        which = int(np.searchsorted(bounds, flat_idx, side="right"))
        local = int(flat_idx - (bounds[which - 1] if which else 0))
        flat = params[which].data.reshape(-1)
        orig = flat[local]
        flat[local] = orig + h
        hi = evaluate(False).item()
        flat[local] = orig - h
        lo = evaluate(False).item()
        flat[local] = orig
        fd = (hi - lo) / (2 * h)
        ad = grads[which].reshape(-1)[local]
        worst = max(worst, abs(ad - fd) / max(abs(ad) + abs(fd), rel_floor))
    return float(worst)


def gradient_suite(seed=0, op_configs=50, net_configs=5, net_coords=20):
    """Max guarded relative error per op and per policy network."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 424242]))
    report = {}
    for _ in range(op_configs):
        cases = _op_cases(rng)
        for name, (fn, inputs) in cases.items():
            err = grad_check_sampled(fn, inputs, rng, n_coords=6)
            report[name] = max(report.get(name, 0.0), err)
    for kind in ("hier", "flat"):
        worst = 0.0
        for _ in range(net_configs):
            worst = max(worst, _network_check(kind, rng, net_coords))
        report[f"policy_{kind}"] = worst
    return report
