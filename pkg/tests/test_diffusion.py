import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from cospeech.diffusion import (
    DdimPlan,
    cfg_combine,
    ddim_sample,
    ddim_step,
    make_cosine_schedule,
    make_ddim_plan,
    make_linear_schedule,
    make_schedule,
    q_sample,
    sdedit_empower,
    x0_to_eps,
)
from cospeech.errors import BadRange, KOutOfRange, StepOutOfRange


class TestSchedule:
    def test_linear_endpoints(self):
        s = make_linear_schedule(1000, 1e-4, 0.02)
        assert s.total_steps == 1000
        assert s.betas[0] == pytest.approx(1e-4)
        assert s.betas[-1] == pytest.approx(0.02)
        assert s.alpha_bar(0) == 1.0
        assert s.alpha_bar(1) == pytest.approx(1.0 - 1e-4)

    def test_alpha_bar_is_cumprod(self):
        s = make_linear_schedule(50)
        np.testing.assert_allclose(s.alpha_bars[1:], np.cumprod(1.0 - s.betas),
                                   rtol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 300))
    def test_alpha_bars_decreasing_in_unit_interval(self, total):
        s = make_linear_schedule(total)
        assert np.all(np.diff(s.alpha_bars) < 0)
        assert np.all(s.alpha_bars > 0)
        assert np.all(s.alpha_bars <= 1.0)

    def test_cosine_shape(self):
        s = make_cosine_schedule(100)
        assert s.total_steps == 100
        assert np.all(np.diff(s.alpha_bars) < 0)

    def test_factory_dispatch(self):
        assert make_schedule("linear", 10).total_steps == 10
        assert make_schedule("cosine", 10).total_steps == 10
        with pytest.raises(BadRange):
            make_schedule("sigmoid")

    def test_bad_ranges(self):
        with pytest.raises(BadRange):
            make_linear_schedule(0)
        with pytest.raises(BadRange):
            make_linear_schedule(10, 0.5, 0.1)

    def test_step_out_of_range(self):
        s = make_linear_schedule(10)
        with pytest.raises(StepOutOfRange):
            s.alpha_bar(11)
        with pytest.raises(StepOutOfRange):
            s.alpha_bar(-1)


class TestPlan:
    def test_uniform_plan_values(self):
        plan = make_ddim_plan(100, 1000)
        assert plan.timesteps[0] == 1000
        assert plan.timesteps[-1] == 10
        assert plan.n_steps == 100
        assert plan.timesteps == tuple(1000 * k // 100 for k in range(100, 0, -1))

    def test_twenty_step_plan(self):
        plan = make_ddim_plan(20, 1000)
        assert plan.timesteps[0] == 1000
        assert plan.timesteps[-1] == 50
        assert len(plan.timesteps) == 20

    def test_validation(self):
        with pytest.raises(BadRange):
            DdimPlan(timesteps=(10, 10))
        with pytest.raises(BadRange):
            DdimPlan(timesteps=(5, 0))
        with pytest.raises(BadRange):
            DdimPlan(timesteps=())
        with pytest.raises(BadRange):
            DdimPlan(timesteps=(10, 5), eta=1.5)
        with pytest.raises(BadRange):
            make_ddim_plan(0, 100)


class TestForwardProcess:
    def test_q_sample_formula(self):
        s = make_linear_schedule(100)
        x0 = torch.full((3,), 2.0)
        eps = torch.full((3,), -1.0)
        t = 40
        ab = s.alpha_bar(t)
        out = q_sample(x0, t, eps, s)
        np.testing.assert_allclose(out.numpy(), 2.0 * ab ** 0.5 - (1 - ab) ** 0.5,
                                   rtol=1e-6)

    def test_x0_to_eps_inverts_q_sample(self):
        s = make_linear_schedule(100)
        rng = torch.Generator().manual_seed(0)
        x0 = torch.randn((5, 4), generator=rng)
        eps = torch.randn((5, 4), generator=rng)
        for t in (1, 37, 100):
            x_t = q_sample(x0, t, eps, s)
            np.testing.assert_allclose(x0_to_eps(x_t, x0, t, s).numpy(), eps.numpy(),
                                       atol=1e-5)

    def test_x0_to_eps_needs_positive_t(self):
        s = make_linear_schedule(10)
        with pytest.raises(StepOutOfRange):
            x0_to_eps(torch.zeros(2), torch.zeros(2), 0, s)


class TestDdimStep:
    def test_final_step_returns_prediction_exactly(self):
        # with t_prev = 0 and eta = 0 the update collapses to x0_hat
        s = make_linear_schedule(100)
        rng = torch.Generator().manual_seed(1)
        x_t = torch.randn((4,), generator=rng)
        x0_hat = torch.randn((4,), generator=rng)
        out = ddim_step(x_t, x0_hat, 10, 0, s, eta=0.0)
        np.testing.assert_array_equal(out.numpy(), x0_hat.numpy())

    def test_deterministic_step_formula(self):
        s = make_linear_schedule(100)
        rng = torch.Generator().manual_seed(2)
        x_t = torch.randn((6,), generator=rng)
        x0_hat = torch.randn((6,), generator=rng)
        t, t_prev = 80, 40
        ab_t, ab_p = s.alpha_bar(t), s.alpha_bar(t_prev)
        eps_hat = (x_t - ab_t ** 0.5 * x0_hat) / (1 - ab_t) ** 0.5
        expected = ab_p ** 0.5 * x0_hat + (1 - ab_p) ** 0.5 * eps_hat
        np.testing.assert_allclose(ddim_step(x_t, x0_hat, t, t_prev, s).numpy(),
                                   expected.numpy(), atol=1e-6)

    def test_order_validation(self):
        s = make_linear_schedule(100)
        with pytest.raises(StepOutOfRange):
            ddim_step(torch.zeros(2), torch.zeros(2), 10, 10, s)

    def test_stochastic_step_needs_noise(self):
        s = make_linear_schedule(100)
        with pytest.raises(StepOutOfRange):
            ddim_step(torch.zeros(2), torch.zeros(2), 80, 40, s, eta=0.5)

    def test_eta_noise_scale(self):
        s = make_linear_schedule(100)
        t, t_prev = 80, 40
        ab_t, ab_p = s.alpha_bar(t), s.alpha_bar(t_prev)
        sigma = 1.0 * ((1 - ab_p) / (1 - ab_t)) ** 0.5 * (1 - ab_t / ab_p) ** 0.5
        x0_hat = torch.zeros(3)
        x_t = torch.zeros(3)
        noise = torch.ones(3)
        out = ddim_step(x_t, x0_hat, t, t_prev, s, eta=1.0, noise=noise)
        np.testing.assert_allclose(out.numpy(),
                                   (max(1 - ab_p - sigma ** 2, 0) ** 0.5) * 0 + sigma,
                                   atol=1e-6)


class TestGuidance:
    def test_combine_formula(self):
        c = torch.tensor([2.0])
        u = torch.tensor([1.0])
        assert float(cfg_combine(c, u, 1.0)) == 2.0
        assert float(cfg_combine(c, u, 0.0)) == 1.0
        assert float(cfg_combine(c, u, 2.5)) == pytest.approx(1.0 + 2.5)

    def test_w_equal_one_never_calls_unconditional(self):
        s = make_linear_schedule(100)
        calls = []

        def denoiser(x, t, condition, cond_enabled):
            calls.append(cond_enabled)
            return x * 0.5

        ddim_sample(denoiser, None, (1, 4), make_ddim_plan(5, 100), s, w=1.0,
                    rng=torch.Generator().manual_seed(0))
        assert calls == [True] * 5

    def test_w_not_one_calls_both_branches(self):
        s = make_linear_schedule(100)
        calls = []

        def denoiser(x, t, condition, cond_enabled):
            calls.append(cond_enabled)
            return x * 0.5

        ddim_sample(denoiser, None, (1, 4), make_ddim_plan(3, 100), s, w=2.0,
                    rng=torch.Generator().manual_seed(0))
        assert calls == [True, False] * 3


class TestSampler:
    def test_deterministic_given_generator(self):
        s = make_linear_schedule(200)

        def denoiser(x, t, condition, cond_enabled):
            return x * 0.9

        plan = make_ddim_plan(10, 200)
        a = ddim_sample(denoiser, None, (2, 3), plan, s,
                        rng=torch.Generator().manual_seed(5))
        b = ddim_sample(denoiser, None, (2, 3), plan, s,
                        rng=torch.Generator().manual_seed(5))
        np.testing.assert_array_equal(a.numpy(), b.numpy())

    def test_constrain_applied_at_every_level_and_zero(self):
        s = make_linear_schedule(100)
        seen = []

        def constrain(x, t):
            seen.append(t)
            return x

        ddim_sample(lambda x, t, c, e: x * 0.5, None, (1, 2),
                    make_ddim_plan(4, 100), s, constrain=constrain,
                    rng=torch.Generator().manual_seed(0))
        assert seen == [100, 75, 50, 25, 0]

    def test_perfect_denoiser_recovers_target(self):
        # a denoiser that always predicts the target lands on it exactly
        s = make_linear_schedule(1000)
        target = torch.tensor([[1.0, -2.0, 0.5]])
        out = ddim_sample(lambda x, t, c, e: target.expand_as(x), None, (1, 3),
                          make_ddim_plan(50, 1000), s,
                          rng=torch.Generator().manual_seed(0))
        np.testing.assert_allclose(out.numpy(), target.numpy(), atol=1e-5)


class TestSdedit:
    def test_k_zero_is_identity(self):
        s = make_linear_schedule(1000)
        x = torch.randn((1, 4), generator=torch.Generator().manual_seed(3))
        out = sdedit_empower(lambda x, t, c, e: x, x, None, 0, s)
        assert out is x

    def test_k_bounds(self):
        s = make_linear_schedule(1000)
        with pytest.raises(KOutOfRange):
            sdedit_empower(lambda x, t, c, e: x, torch.zeros(1, 2), None, 101, s,
                           n_steps=100)
        with pytest.raises(KOutOfRange):
            sdedit_empower(lambda x, t, c, e: x, torch.zeros(1, 2), None, -1, s)

    def test_noise_level_counted_from_low_end(self):
        # K steps of a uniform n-step plan start at timestep T*K/n
        s = make_linear_schedule(1000)
        seen = []

        def denoiser(x, t, c, e):
            seen.append(t)
            return x * 0.0

        sdedit_empower(denoiser, torch.zeros(1, 2), None, 20, s, n_steps=100,
                       rng=torch.Generator().manual_seed(0))
        assert seen[0] == 200
        assert seen[-1] == 10
        assert len(seen) == 20

    def test_small_k_stays_close_to_input(self):
        s = make_linear_schedule(1000)
        x = torch.full((1, 8), 3.0)
        out = sdedit_empower(lambda x, t, c, e: x, x, None, 5, s, n_steps=100,
                             rng=torch.Generator().manual_seed(0))
        # identity denoiser: the deviation comes only from the injected noise
        # surviving through sqrt(1-abar) terms at low t
        assert float((out - x).abs().mean()) < 1.0
