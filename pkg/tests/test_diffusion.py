import numpy as np
import pytest

from purifyattack import adcore as ad
from purifyattack.diffusion import (NoiseSchedule, Purifier, PurifierConfig, ddpm_forward_step, ddpm_loss,
                                    ddpm_reverse_step, ddpm_weights, diffuse_closed_form, linear_schedule, purify,
                                    score_matching_loss, sde_forward_step, sde_reverse_step)
from purifyattack.models import init_eps_model
from purifyattack.rng import Streams


def test_linear_schedule_examples():
    assert np.array_equal(linear_schedule(1, 0.01, 0.02).betas, [0.01])
    s = linear_schedule(2, 0.1, 0.1)
    assert np.allclose(s.alpha_bars[1:], [0.9, 0.81], rtol=0, atol=1e-15)
    assert linear_schedule(50, 1e-3, 5e-2).sigmas[1] == 0.0
    for bad in [(0, 0.1, 0.2), (5, 0.0, 0.1), (5, 0.2, 0.1), (5, 0.1, 1.0)]:
        with pytest.raises(ValueError):
            linear_schedule(*bad)


def test_schedule_identities():
    s = linear_schedule(50, 1e-3, 5e-2)
    t = np.arange(1, 51)
    assert np.allclose(s.alphas, 1 - s.betas, rtol=0, atol=1e-15)
    assert np.allclose(s.alpha_bars[t], s.alpha_bars[t - 1] * s.alphas, rtol=0, atol=1e-15)
    assert np.all(np.diff(s.alpha_bars) < 0) and s.alpha_bars[0] == 1.0
    ref = np.sqrt(s.betas * (1 - s.alpha_bars[:-1]) / (1 - s.alpha_bars[1:]))
    assert np.allclose(s.sigmas[1:], ref, rtol=0, atol=1e-15)


def test_diffuse_closed_form_examples():
    s = NoiseSchedule(np.array([0.75]))
    assert abs(float(diffuse_closed_form(np.array(1.0), 1, np.array(0.5), s)) - 0.9330127) < 1e-7
    s2 = linear_schedule(10, 1e-3, 1e-2)
    x0 = np.array([0.3, -0.2])
    assert np.allclose(diffuse_closed_form(x0, 4, np.zeros(2), s2), np.sqrt(s2.alpha_bar(4)) * x0)
    tiny = NoiseSchedule(np.array([1e-12]))
    assert np.allclose(diffuse_closed_form(x0, 1, np.ones(2), tiny), x0, atol=1e-5)
    with pytest.raises(ValueError):
        diffuse_closed_form(x0, 11, np.zeros(2), s2)


def test_closed_form_matches_sequential_steps_in_distribution():
    s = linear_schedule(10, 1e-2, 0.1)
    n, t = 100_000, 6
    x = np.full((n, 1), 0.7)
    st = Streams(0)
    for k in range(1, t + 1):
        x = ddpm_forward_step(x, k, s, st.normal(f"z{k}", (n, 1)))
    mean, var = np.sqrt(s.alpha_bar(t)) * 0.7, 1 - s.alpha_bar(t)
    assert abs(x.mean() - mean) < 3 * np.sqrt(var / n)
    assert abs(x.var() - var) < 3 * var * np.sqrt(2.0 / n)


def test_ddpm_reverse_step_examples():
    zero = init_eps_model(1, (4,), 4, zero=True)
    s = NoiseSchedule(np.array([0.1, 0.1]))
    x = np.array([[1.0]])
    assert np.allclose(ddpm_reverse_step(x, 2, zero, np.zeros((1, 1)), s), 1 / np.sqrt(0.9))
    assert np.array_equal(ddpm_reverse_step(x, 1, zero, np.ones((1, 1)) * 5, s),
                          ddpm_reverse_step(x, 1, zero, None, s))
    out = float(ddpm_reverse_step(x, 2, zero, np.ones((1, 1)), s)[0, 0])
    assert abs(out - 1.283509) < 1e-6
    with pytest.raises(ValueError):
        ddpm_reverse_step(x, 3, zero, None, s)


class _Oracle:
    """Stands in for a network that returns the drawn noise exactly."""


def test_ddpm_loss_examples(monkeypatch):
    s = linear_schedule(20, 1e-3, 5e-2)
    zero = init_eps_model(2, (4,), 4, zero=True)
    batch = Streams(0).uniform("b", (16, 2))
    st = Streams(1)
    loss = float(ddpm_loss(zero, batch, s, st, "l"))
    t = st.integers("l/t", 2, 21, 16)
    eps = st.normal("l/eps", (16, 2))
    assert loss > 0
    assert np.isclose(loss, np.mean(ddpm_weights(s)[t] * np.sum(eps ** 2, axis=1)), rtol=1e-12)
    assert np.isnan(ddpm_weights(s)[1])
    with pytest.raises(ValueError):
        ddpm_loss(zero, np.zeros((0, 2)), s, st)

    import purifyattack.diffusion as diff
    monkeypatch.setattr(diff, "eps_theta", lambda p, x, tt: eps)
    assert float(ddpm_loss(zero, batch, s, st, "l")) == 0.0


def test_score_loss_identity_with_unweighted_ddpm():
    s = linear_schedule(20, 1e-3, 5e-2)
    p = init_eps_model(2, (8,), 4, Streams(3))
    batch = Streams(0).uniform("b", (32, 2))
    st = Streams(4)
    t = st.integers("d/t", 2, 21, 32)
    eps = st.normal("d/eps", (32, 2))
    a = float(score_matching_loss(p, batch, s, st, draws=(t, eps)))
    b = float(ddpm_loss(p, batch, s, st, draws=(t, eps), weighted=False))
    assert a >= 0
    assert abs(a - b) <= 1e-12 * max(1.0, abs(b))


def test_score_loss_zero_for_oracle(monkeypatch):
    import purifyattack.diffusion as diff
    s = linear_schedule(20, 1e-3, 5e-2)
    batch = Streams(0).uniform("b", (8, 2))
    st = Streams(4)
    t = st.integers("d/t", 1, 21, 8)
    eps = st.normal("d/eps", (8, 2))
    monkeypatch.setattr(diff, "eps_theta", lambda p, x, tt: eps)
    assert float(score_matching_loss(None, batch, s, st, draws=(t, eps))) < 1e-24


def test_sde_steps():
    s = linear_schedule(10, 1e-3, 5e-2)
    x = np.array([[1.0, 2.0]])
    assert np.array_equal(sde_forward_step(x, 0.5, 1e-300, s), x)
    s2 = NoiseSchedule(np.full(10, 0.02))  # beta(u) = 10 * 0.02 = 0.2
    assert abs(float(sde_forward_step(np.array(1.0), 0.3, 0.1, s2)) - 0.99) < 1e-15
    zero = init_eps_model(2, (4,), 4, zero=True)
    out = sde_reverse_step(x, 0.3, 0.1, zero, s2)
    assert np.allclose(out, x * (1 + 0.5 * 0.2 * 0.1))
    dw = np.array([[0.1, -0.1]])
    assert np.array_equal(sde_reverse_step(x, 0.3, 0.1, zero, s2, dw), sde_reverse_step(x, 0.3, 0.1, zero, s2, dw))
    with pytest.raises(ValueError):
        sde_forward_step(x, 0.1, 0.0, s)


def test_sde_forward_variance_matches_ou():
    s = NoiseSchedule(np.full(20, 0.01))
    n, steps = 10_000, 100
    dt = 1.0 / steps
    x = np.zeros((n, 1))
    st = Streams(0)
    for k in range(steps):
        x = sde_forward_step(x, k * dt, dt, s, np.sqrt(dt) * st.normal(f"w{k}", (n, 1)))
        if k in (24, 99):
            var = 1 - np.exp(-s.int_beta((k + 1) * dt))
            assert abs(x.var() - var) / var < 0.05


def test_sde_round_trip_keeps_gaussian_law(monkeypatch):
    # data ~ N(0, 1) has clean score -x at every time under the VP process
    import purifyattack.diffusion as diff
    s = NoiseSchedule(np.full(10, 0.02))
    monkeypatch.setattr(diff, "score_theta", lambda p, x, u, sched: ad.scale(x, -1.0))
    x0 = Streams(0).normal("x0", (20_000, 1))
    cfg = PurifierConfig("vpsde", 10, s, substeps=4)
    out, _ = purify(x0, cfg, None, Streams(1))
    assert abs(out.mean()) < 0.03 and abs(out.var() - 1.0) < 0.05


def test_purify_contract():
    s = linear_schedule(20, 1e-3, 5e-2)
    p = init_eps_model(2, (8,), 4, Streams(0))
    x = Streams(1).uniform("x", (6, 2))
    out, traj = purify(x, PurifierConfig("ddpm", 0, s), p, Streams(0))
    assert np.array_equal(out, x) and len(traj.forward) == 1 and len(traj.reverse) == 1
    for kind in ("ddpm", "vpsde"):
        cfg = PurifierConfig(kind, 7, s)
        a, ta = purify(x, cfg, p, Streams(2))
        b, _ = purify(x, cfg, p, Streams(2))
        c, _ = purify(x, cfg, p, Streams(3))
        assert np.array_equal(a, b) and not np.array_equal(a, c)
        assert len(ta.forward) == 8 and len(ta.reverse) == 8
        assert np.array_equal(ta.forward[0], x) and np.array_equal(ta.reverse[-1], a)
        # replaying any recorded step reproduces the stored sample
        rec = ta.record
        for i in (0, 6, 7, 13):
            assert np.array_equal(rec.steps[i].run(rec.samples[i], rec.streams), rec.samples[i + 1])
    with pytest.raises(ValueError):
        PurifierConfig("ddpm", 21, s)
    with pytest.raises(ValueError):
        PurifierConfig("ddim", 2, s)


def test_draws_are_independent_blocks():
    s = linear_schedule(20, 1e-3, 5e-2)
    p = init_eps_model(2, (8,), 4, Streams(0))
    x = Streams(1).uniform("x", (3, 2))
    pur = Purifier(PurifierConfig("ddpm", 5, s), p)
    both, _ = pur(x, Streams(2), draws=2)
    assert both.shape == (6, 2)
    assert not np.array_equal(both[:3], both[3:])
