import itertools

import numpy as np
import pytest
import torch

from apr import tensor as T
from apr.gqn import GQN, G_DIM, V_DIM, GQNConfig, Views, aggregate, gaussian_normalizer
from gradcheck import check_subset

SMALL = GQNConfig(image_size=16, width_divisor=16, steps=3, lstm_kernel=3)


def views(cfg, n=2, seed=0, dtype=torch.float32):
    g = T.torch_generator(seed)
    s, c = cfg.image_size, cfg.image_channels
    return Views(torch.rand(n, c, s, s, generator=g, dtype=dtype),
                 torch.rand(n, V_DIM, generator=g, dtype=dtype) * 2 - 1,
                 torch.rand(n, G_DIM, generator=g, dtype=dtype) * 2 - 1)


def model(cfg, seed=0, dtype=torch.float32):
    torch.manual_seed(seed)
    return GQN(cfg).to(dtype)


def test_full_width_representation_shape():
    cfg = GQNConfig(image_size=64, width_divisor=1)
    with torch.no_grad():
        r = model(cfg).encode(views(cfg, n=1))
    assert r.shape == (1, 256, 16, 16)


def test_scaled_representation_shape():
    cfg = GQNConfig()
    assert (cfg.r_channels, cfg.rep_size) == (64, 16)


def test_encode_deterministic():
    m = model(SMALL)
    x = views(SMALL)
    assert torch.equal(m.encode(x), m.encode(x))


def test_encode_sensitive_to_g():
    m = model(SMALL)
    x = views(SMALL, n=1)
    y = Views(x.images, x.v, x.g + 0.5)
    assert torch.norm(m.encode(x) - m.encode(y)) > 0


def test_encode_rejects_bad_shapes():
    m = model(SMALL)
    x = views(SMALL)
    with pytest.raises(ValueError, match="encoder expects"):
        m.encoder(x.images[:, :, :8], x.v, x.g)
    with pytest.raises(ValueError, match="proprioception"):
        m.encoder(x.images, x.v[:, :5], x.g)


def test_aggregate_identities():
    r1, r2 = torch.randn(2, 4, 4, 4).unbind(0)
    assert torch.equal(aggregate([r1]).r, r1)
    assert torch.equal(aggregate([r1, r2]).r, aggregate([r2, r1]).r)
    assert torch.equal(aggregate([r1, torch.zeros_like(r1)]).r, r1)
    assert aggregate([r1, r2]).n_views == 2


def test_aggregate_errors():
    with pytest.raises(ValueError):
        aggregate([])
    with pytest.raises(ValueError):
        aggregate([torch.zeros(2, 2), torch.zeros(3, 2)])


def test_aggregate_permutation_invariance_bitwise():
    reps = list(torch.randn(5, 3, 4, 4, dtype=torch.float32).unbind(0))
    ref = aggregate(reps, ids=list(range(5))).r
    for perm in itertools.permutations(range(5)):
        got = aggregate([reps[i] for i in perm], ids=list(perm)).r
        assert torch.equal(got, ref)


def test_generate_shape_bounds_determinism():
    m = model(SMALL)
    x = views(SMALL)
    with torch.no_grad():
        r = m.encode(x)
        a = m.generate(r, x.v, x.g, mode="mean")
        b = m.generate(r, x.v, x.g, mode="mean")
        s = m.generate(r, x.v, x.g, mode="sample", generator=T.torch_generator(1))
    assert a.shape == x.images.shape
    assert torch.equal(a, b)
    for img in (a, s):
        assert torch.isfinite(img).all() and img.min() >= 0 and img.max() <= 1


def test_generate_rejects_nonfinite_r():
    m = model(SMALL)
    x = views(SMALL, n=1)
    r = m.encode(x).detach()
    r[0, 0, 0, 0] = float("nan")
    with pytest.raises(ValueError):
        m.generate(r, x.v, x.g)


def test_kl_zero_when_posterior_equals_prior():
    m = model(SMALL)
    with torch.no_grad():
        for head in (m.generator.prior_head, m.generator.posterior_head):
            head.weight.zero_()
            head.bias.zero_()
    ctx, q = views(SMALL, seed=1), views(SMALL, seed=2)
    terms = m.elbo_terms([ctx], q, sigma=1.0, generator=T.torch_generator(0))
    assert terms["kl"].item() == 0.0


def test_perfect_canvas_reconstruction_is_normalizer(monkeypatch):
    m = model(SMALL)
    q = views(SMALL, seed=2)
    monkeypatch.setattr(m.generator, "run", lambda r, v, g, target=None, **kw: (target, torch.zeros(len(v))))
    sigma = 0.7
    terms = m.elbo_terms([views(SMALL, seed=1)], q, sigma=sigma)
    n_pix = SMALL.image_channels * SMALL.image_size ** 2
    assert terms["nll"].item() == pytest.approx(gaussian_normalizer(n_pix, sigma), rel=1e-6)
    assert terms["kl"].item() == 0.0


def test_elbo_rejects_empty_context():
    m = model(SMALL)
    with pytest.raises(ValueError):
        m.elbo_terms([], views(SMALL), 1.0)


def test_elbo_nonfinite_raises():
    m = model(SMALL)
    q = views(SMALL)
    q.images[0, 0, 0, 0] = float("inf")
    with pytest.raises(FloatingPointError):
        m.elbo_terms([views(SMALL, seed=3)], q, 1.0)


def test_elbo_gradient_check_64bit():
    cfg = GQNConfig(image_size=8, width_divisor=64, steps=2, lstm_kernel=3, z_channels=1)
    m = model(cfg, dtype=torch.float64)
    ctx = [views(cfg, n=2, seed=4, dtype=torch.float64), views(cfg, n=2, seed=5, dtype=torch.float64)]
    q = views(cfg, n=2, seed=6, dtype=torch.float64)
    params = list(m.parameters())

    def f():
        return m.elbo_loss(ctx, q, sigma=1.3, generator=T.torch_generator(9))

    assert check_subset(f, params, h=1e-6, per_param=12) < 1e-5


def test_sigma_annealing():
    cfg = GQNConfig(sigma_anneal_steps=100)
    assert cfg.sigma(0) == 2.0
    assert cfg.sigma(50) == pytest.approx(1.35)
    assert cfg.sigma(100) == pytest.approx(0.7) and cfg.sigma(10_000) == pytest.approx(0.7)


# ---------------------------------------------------------------- mask channel

MASKED = GQNConfig(image_size=16, image_channels=4, width_divisor=16, steps=3, lstm_kernel=3)


def test_zero_mask_scored_like_any_black_channel():
    m = model(MASKED)
    q = views(MASKED, seed=2)
    q.images[:, 3] = 0.0
    sigma = 0.9
    terms = m.elbo_terms([views(MASKED, seed=1)], q, sigma, generator=T.torch_generator(3))
    mean = terms["mean"]
    ref = -T.gaussian_log_likelihood(torch.zeros_like(mean[:, 3]), mean[:, 3], sigma).sum(dim=(1, 2)).mean()
    assert terms["nll_mask"].item() == pytest.approx(ref.item(), rel=1e-6)
    assert m.reconstruct_mask([views(MASKED, seed=1)], q, sigma, generator=T.torch_generator(3)).item() \
        == pytest.approx(ref.item(), rel=1e-6)


def test_unmasked_model_has_no_mask_term():
    m = model(SMALL)
    q = views(SMALL, seed=2)
    terms = m.elbo_terms([views(SMALL, seed=1)], q, 1.0, generator=T.torch_generator(3))
    assert terms["nll_mask"].item() == 0.0
    assert terms["loss"].item() == pytest.approx((terms["kl"] + terms["nll"]).item())
    with pytest.raises(ValueError, match="4-channel"):
        m.reconstruct_mask([views(SMALL, seed=1)], q, 1.0)


def test_masked_representation_distinguishes_targets():
    cfg = MASKED
    m = model(cfg)
    opt = T.Adam(list(m.parameters()), lr=1e-3)
    scene = views(cfg, n=1, seed=7)
    a = Views(scene.images.clone(), scene.v, scene.g)
    b = Views(scene.images.clone(), scene.v, scene.g)
    a.images[:, 3] = 0.0
    a.images[:, 3, 2:6, 2:6] = 1.0    # target id 1
    b.images[:, 3] = 0.0
    b.images[:, 3, 9:13, 9:13] = 1.0  # target id 2, same RGB
    for step in range(10):
        for x in (a, b):
            loss = m.elbo_loss([x], x, 1.0, generator=T.torch_generator(step))
            opt.step(T.backward(loss, opt.params))
    with torch.no_grad():
        assert torch.norm(m.encode(a) - m.encode(b)) > 0
