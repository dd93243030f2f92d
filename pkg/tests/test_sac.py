import math

import numpy as np
import pytest
import torch
from scipy import integrate, stats

from apr import tensor as T
from apr.sac import LOG_STD_MAX, PolicyHead, QHead, ReplayBuffer, SACConfig, SACStack, squashed_log_prob
from gradcheck import check, check_against_64bit

REP = (4, 4, 4)


def stack(action_dim=3, seed=0, low=None, high=None, **kw):
    torch.manual_seed(seed)
    cfg = SACConfig(action_dim=action_dim, channels=(16, 8, 8), width_divisor=1, **kw)
    low = -np.ones(action_dim) if low is None else low
    high = np.ones(action_dim) if high is None else high
    return SACStack(REP, cfg, low, high, generator=T.torch_generator(seed))


def const_rep(n, value=0.5):
    return torch.full((n, *REP), value)


def _set_actor_output(s, mu, log_std):
    with torch.no_grad():
        s.actor.fc.weight.zero_()
        s.actor.fc.bias.copy_(torch.tensor([*mu, *log_std], dtype=torch.float32))


# ---------------------------------------------------------------- acting

def test_deterministic_zero_mean_is_box_center():
    low, high = np.array([-0.5, 0.0, 1.0]), np.array([0.5, 2.0, 3.0])
    s = stack(low=low, high=high)
    _set_actor_output(s, [0, 0, 0], [-10, -10, -10])
    scaled, norm, _ = s.act(const_rep(2), stochastic=False)
    np.testing.assert_allclose(scaled.numpy(), np.tile((low + high) / 2, (2, 1)), atol=1e-7)


def test_actions_strictly_inside_bounds():
    low, high = np.array([-0.05, -0.05, -0.25]), np.array([0.05, 0.05, 0.25])
    s = stack(low=low, high=high)
    _set_actor_output(s, [0, 3, -3], [LOG_STD_MAX] * 3)
    scaled, norm, logp = s.act(const_rep(100_000))
    assert torch.isfinite(logp).all()
    assert (norm.abs() < 1).all()
    lo, hi = torch.tensor(low, dtype=torch.float32), torch.tensor(high, dtype=torch.float32)
    assert ((scaled > lo) & (scaled < hi)).all()


@pytest.mark.parametrize("mu,sigma", [(0.0, 1.0), (0.7, 0.4), (-1.5, 2.0)])
def test_log_prob_matches_quadrature(mu, sigma):
    def density(a):
        u = torch.tensor([[math.atanh(a)]], dtype=torch.float64)
        lp = squashed_log_prob(u, torch.tensor([[mu]], dtype=torch.float64),
                               torch.tensor([[math.log(sigma)]], dtype=torch.float64))
        return math.exp(lp.item())

    edges = np.tanh(np.linspace(-3, 3, 9) * sigma + mu)
    for a1, a2 in zip(edges[:-1], edges[1:]):
        mass, _ = integrate.quad(density, a1, a2, epsabs=1e-10)
        ref = stats.norm.cdf(math.atanh(a2), mu, sigma) - stats.norm.cdf(math.atanh(a1), mu, sigma)
        assert abs(mass - ref) < 1e-3
    total, _ = integrate.quad(density, -1, 1, limit=200)
    assert total == pytest.approx(1.0, abs=1e-3)


@pytest.mark.parametrize("seed", range(3))
def test_policy_head_gradients_32bit(seed):
    torch.manual_seed(seed)
    actor = PolicyHead(4, 4, 6, (8, 4, 4))
    q = QHead(4, 4, 3, (8, 4, 4))
    x = torch.randn(3, 4, 4, 4, dtype=torch.float64)
    a = torch.rand(3, 3, dtype=torch.float64) * 2 - 1

    def actor_loss(m):
        dt = next(m.parameters()).dtype
        return (m(x.to(dt)).double() ** 2).sum()

    def q_loss(m):
        dt = next(m.parameters()).dtype
        return (m(x.to(dt), a.to(dt)).double() ** 2).sum()

    assert check_against_64bit(actor, actor_loss) < 1e-3
    assert check_against_64bit(q, q_loss) < 1e-3


def test_policy_head_gradients_64bit():
    torch.manual_seed(3)
    head = PolicyHead(4, 4, 6, (8, 4, 4)).double()
    x = torch.randn(3, 4, 4, 4, dtype=torch.float64)
    params = list(head.parameters())

    def f():
        return (head(x) ** 2).sum()

    assert check(f, params, h=1e-6) < 1e-6


# ---------------------------------------------------------------- updates

def test_tau_one_copies_and_tau_zero_freezes():
    s = stack()
    batch = {"r": const_rep(8), "action": torch.rand(8, 3) * 2 - 1, "reward": torch.ones(8),
             "done": torch.zeros(8), "r_next": const_rep(8)}
    before = [p.clone() for p in s.q1_target.parameters()]
    s.update(batch, tau=0.0)
    for p, q in zip(s.q1_target.parameters(), before):
        assert torch.equal(p, q)
    s.update(batch, tau=1.0)
    for net, tgt in ((s.q1, s.q1_target), (s.q2, s.q2_target)):
        for p, q in zip(net.parameters(), tgt.parameters()):
            assert torch.equal(p, q)


def test_identical_twins_min_is_noop():
    batch = {"r": const_rep(8), "action": torch.rand(8, 3, generator=T.torch_generator(0)) * 2 - 1,
             "reward": torch.ones(8), "done": torch.zeros(8), "r_next": const_rep(8, 0.3)}
    twin, single = stack(twin=True), stack(twin=False)
    with torch.no_grad():
        twin.q2.load_state_dict(twin.q1.state_dict())
        twin.q2_target.load_state_dict(twin.q1_target.state_dict())
    a = twin.losses(batch)
    b = single.losses(batch)
    assert a["actor"].item() == pytest.approx(b["actor"].item(), abs=1e-7)
    assert a["value"].item() == pytest.approx(b["value"].item(), abs=1e-7)
    assert a["critic"].item() == pytest.approx(2 * b["critic"].item(), rel=1e-6)


def test_temperature_rises_when_entropy_below_target():
    s = stack()
    _set_actor_output(s, [0, 0, 0], [-8, -8, -8])
    batch = {"r": const_rep(16), "action": torch.zeros(16, 3), "reward": torch.zeros(16), "done": torch.ones(16)}
    alpha0 = s.alpha.item()
    m = s.update(batch)
    assert m["entropy"] < s.cfg.entropy_target
    assert s.alpha.item() > alpha0


def test_nonfinite_loss_skipped():
    s = stack()
    batch = {"r": const_rep(4), "action": torch.zeros(4, 3), "reward": torch.tensor([0, float("nan"), 0, 0.0]),
             "done": torch.ones(4)}
    snap = [p.clone() for p in s.q1.parameters()]
    m = s.update(batch)
    assert m["skipped"] == 1 and s.skipped == 1
    for p, q in zip(s.q1.parameters(), snap):
        assert torch.equal(p, q)


def test_gamma_zero_two_state_mdp():
    # States are two constant representations; reward depends on the state only.
    s = stack(lr=3e-3)
    reps = torch.stack([const_rep(1, 0.0)[0], const_rep(1, 1.0)[0]])
    rewards = torch.tensor([1.0, -0.5])
    g = T.torch_generator(1)
    for step in range(1200):
        if step == 800:
            s.critic_opt.lr = 3e-4
        idx = torch.randint(0, 2, (32,), generator=g)
        act = torch.rand(32, 3, generator=g) * 2 - 1
        s.update({"r": reps[idx], "action": act, "reward": rewards[idx], "done": torch.zeros(32),
                  "r_next": reps[1 - idx]}, gamma=0.0)
    with torch.no_grad():
        for k in range(2):
            act = torch.rand(64, 3, generator=g) * 2 - 1
            q = s.q1(reps[k:k + 1].expand(64, *REP), act)
            assert (q - rewards[k]).abs().max() < 1e-2


# ---------------------------------------------------------------- fixation bandit

def _bandit(reward_fn, steps, seed=0, batch=64):
    s = stack(seed=seed, lr=1e-3)
    buf = ReplayBuffer(10_000, seed)
    r = const_rep(1)
    for _ in range(steps):
        _, a, _ = s.act(r.expand(8, *REP))
        for ai in a:
            buf.push((ai, reward_fn(ai)))
        items = buf.sample(batch)
        s.bandit_update({"r": r.expand(batch, *REP), "action": torch.stack([x[0] for x in items]),
                         "reward": torch.tensor([x[1] for x in items])})
    return s


def test_bandit_zero_reward_q_converges_to_zero():
    s = _bandit(lambda a: 0.0, 300)
    with torch.no_grad():
        a = torch.rand(256, 3) * 2 - 1
        assert s.q1(const_rep(256), a).abs().max() < 1e-2


def test_bandit_concentrates_on_paying_region():
    in_a = lambda a: float(a[0] > 0.3)
    s = _bandit(in_a, 600)
    _, a, _ = s.act(const_rep(2000))
    frac = float((a[:, 0] > 0.3).float().mean())
    assert frac >= 0.9, frac


def test_bandit_constant_reward_keeps_entropy_high():
    s = _bandit(lambda a: 1.0, 300)
    _, _, logp = s.act(const_rep(4000))
    entropy = float(-logp.mean())
    assert entropy > 3 * math.log(2) - 0.5, entropy


# ---------------------------------------------------------------- replay

def test_replay_fifo_eviction():
    buf = ReplayBuffer(3)
    for i in range(4):
        buf.push(i)
    assert len(buf) == 3 and sorted(buf.items) == [1, 2, 3]


def test_replay_seeded():
    a, b = ReplayBuffer(100, seed=5), ReplayBuffer(100, seed=5)
    a.extend(range(100)); b.extend(range(100))
    assert a.sample(50) == b.sample(50)


def test_replay_empty_errors():
    with pytest.raises(IndexError):
        ReplayBuffer(4).sample(1)


def test_replay_uniform_chi_square():
    buf = ReplayBuffer(100, seed=0)
    buf.extend(range(100))
    idx = buf.sample_indices(100_000)
    counts = np.bincount(idx, minlength=100)
    assert stats.chisquare(counts).pvalue > 0.01
