"""Latent parameter networks, hierarchical sampling and closed-form KLs."""

import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from cucvae.config import ModelConfig
from cucvae.vae import (
    GlobalPosteriorNetwork,
    LatentParams,
    LatentSample,
    PosteriorNetwork,
    PriorNetwork,
    inference_sample,
    kl_posterior_prior,
    kl_prior_standard,
    sample_posterior,
    sample_prior,
    segment_average,
)

finite = st.floats(min_value=-5.0, max_value=5.0,
                   allow_nan=False, allow_infinity=False)
logvars = st.floats(min_value=-4.0, max_value=4.0,
                    allow_nan=False, allow_infinity=False)


def params(mean, logvar) -> LatentParams:
    return LatentParams(
        mean=torch.tensor([[float(mean)]], dtype=torch.float64),
        logvar=torch.tensor([[float(logvar)]], dtype=torch.float64),
    )


def mc_kl(mean1, logvar1, mean2, logvar2, n=1_000_000, seed=0) -> float:
    """Monte-Carlo estimate of KL(N1 || N2) for scalar Gaussians."""
    g = torch.Generator().manual_seed(seed)
    s1 = math.exp(0.5 * logvar1)
    x = mean1 + s1 * torch.randn(n, dtype=torch.float64, generator=g)

    def logpdf(x, mean, logvar):
        return -0.5 * (logvar + math.log(2 * math.pi)
                       + (x - mean) ** 2 / math.exp(logvar))

    return float((logpdf(x, mean1, logvar1) - logpdf(x, mean2, logvar2)).mean())


class TestLatentParams:
    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            LatentParams(mean=torch.zeros(2, 2), logvar=torch.zeros(3, 2))

    def test_sigma_exponentiates_half_logvar(self):
        p = LatentParams(
            mean=torch.zeros(1, 1),
            logvar=torch.full((1, 1), 2 * math.log(3.0)),
        )
        assert torch.allclose(p.sigma, torch.full((1, 1), 3.0))
        assert torch.allclose(p.var, torch.full((1, 1), 9.0))

    def test_non_finite_logvar_rejected_at_sampling(self):
        p = LatentParams(mean=torch.zeros(1, 2),
                         logvar=torch.tensor([[0.0, float("inf")]]))
        with pytest.raises(ValueError, match="non-finite"):
            sample_prior(p, epsilon=torch.zeros(1, 2))


class TestSamplingChain:
    def test_zero_epsilon_returns_prior_mean(self):
        p = params(mean=0.7, logvar=1.3)
        out = sample_prior(p, epsilon=torch.zeros(1, 1, dtype=torch.float64))
        assert torch.equal(out.z, p.mean)

    def test_standard_prior_passes_epsilon_through(self):
        p = params(mean=0.0, logvar=0.0)
        eps = torch.tensor([[2.5]], dtype=torch.float64)
        assert torch.equal(sample_prior(p, epsilon=eps).z, eps)

    def test_prior_arithmetic(self):
        # mu_p=2, sigma_p=3, eps=1 -> z_p = 5
        p = params(mean=2.0, logvar=2 * math.log(3.0))
        out = sample_prior(p, epsilon=torch.ones(1, 1, dtype=torch.float64))
        assert torch.allclose(out.z, torch.tensor([[5.0]], dtype=torch.float64))

    def test_identity_posterior_returns_z_p(self):
        post = params(mean=0.0, logvar=0.0)
        z_p = LatentSample(z=torch.tensor([[1.7]], dtype=torch.float64),
                           epsilon=torch.zeros(1, 1, dtype=torch.float64))
        assert torch.equal(sample_posterior(post, z_p).z, z_p.z)

    def test_composed_arithmetic(self):
        # mu=1, sigma=2, mu_p=3, sigma_p=4, eps=0.5 -> z = 1 + 2*3 + 2*4*0.5 = 11
        prior = params(mean=3.0, logvar=2 * math.log(4.0))
        post = params(mean=1.0, logvar=2 * math.log(2.0))
        z_p = sample_prior(prior, epsilon=torch.full((1, 1), 0.5,
                                                     dtype=torch.float64))
        z = sample_posterior(post, z_p)
        assert torch.allclose(z.z, torch.tensor([[11.0]], dtype=torch.float64))

    def test_epsilon_is_retained_through_both_stages(self):
        g = torch.Generator().manual_seed(3)
        prior = params(mean=0.2, logvar=0.5)
        post = params(mean=-1.0, logvar=-0.5)
        z_p = sample_prior(prior, generator=g)
        z = sample_posterior(post, z_p)
        assert torch.equal(z.epsilon, z_p.epsilon)

    def test_same_seed_reproduces_the_draw(self):
        prior = params(mean=0.2, logvar=0.5)
        a = sample_prior(prior, generator=torch.Generator().manual_seed(11))
        b = sample_prior(prior, generator=torch.Generator().manual_seed(11))
        assert torch.equal(a.z, b.z)
        assert torch.equal(a.epsilon, b.epsilon)

    @settings(max_examples=60)
    @given(mu=finite, logvar=logvars, mu_p=finite, logvar_p=logvars, eps=finite)
    def test_two_stage_sampling_equals_closed_form(self, mu, logvar, mu_p,
                                                   logvar_p, eps):
        # the two reparameterisations compose to
        # z = mu + sigma*mu_p + sigma*sigma_p*eps
        prior = params(mu_p, logvar_p)
        post = params(mu, logvar)
        e = torch.tensor([[eps]], dtype=torch.float64)
        z = sample_posterior(post, sample_prior(prior, epsilon=e)).z
        sigma = math.exp(0.5 * logvar)
        sigma_p = math.exp(0.5 * logvar_p)
        expected = mu + sigma * mu_p + sigma * sigma_p * eps
        assert abs(float(z) - expected) <= 1e-12 * max(1.0, abs(expected))


class TestKLDivergences:
    def test_standard_kl_of_unit_shift_is_half(self):
        # KL(N(1,1) || N(0,1)) = 0.5 exactly
        kl = kl_prior_standard(params(mean=1.0, logvar=0.0))
        assert abs(float(kl) - 0.5) < 1e-9

    def test_standard_kl_zero_at_coincidence(self):
        kl = kl_prior_standard(params(mean=0.0, logvar=0.0))
        assert abs(float(kl)) < 1e-12

    def test_posterior_prior_kl_zero_when_marginal_matches_prior(self):
        # mu=0, sigma=1 makes the z marginal N(mu_p, sigma_p^2) == prior
        post = params(mean=0.0, logvar=0.0)
        prior = params(mean=0.4, logvar=-0.8)
        assert abs(float(kl_posterior_prior(post, prior))) < 1e-12

    def test_posterior_prior_kl_reduces_to_unit_shift_case(self):
        # mu=1, sigma=1 against a standard prior: KL(N(1,1) || N(0,1)) = 0.5
        post = params(mean=1.0, logvar=0.0)
        prior = params(mean=0.0, logvar=0.0)
        assert abs(float(kl_posterior_prior(post, prior)) - 0.5) < 1e-9

    @pytest.mark.parametrize("mu,logvar,mu_p,logvar_p", [
        (0.3, -0.4, -1.2, 0.6),
        (-2.0, 1.0, 0.5, -1.5),
        (1.1, 0.2, 1.1, 0.2),
    ])
    def test_posterior_prior_kl_matches_monte_carlo(self, mu, logvar,
                                                    mu_p, logvar_p):
        post = params(mu, logvar)
        prior = params(mu_p, logvar_p)
        closed = float(kl_posterior_prior(post, prior))
        sigma = math.exp(0.5 * logvar)
        eff_mean = mu + sigma * mu_p
        eff_logvar = logvar + logvar_p
        estimate = mc_kl(eff_mean, eff_logvar, mu_p, logvar_p)
        assert abs(closed - estimate) <= 0.01 * max(abs(closed), 0.05)

    @pytest.mark.parametrize("mu_p,logvar_p", [(0.8, -0.3), (-1.5, 0.9)])
    def test_standard_kl_matches_monte_carlo(self, mu_p, logvar_p):
        closed = float(kl_prior_standard(params(mu_p, logvar_p)))
        estimate = mc_kl(mu_p, logvar_p, 0.0, 0.0)
        assert abs(closed - estimate) <= 0.01 * abs(closed)

    @settings(max_examples=40)
    @given(mu=finite, logvar=logvars, mu_p=finite, logvar_p=logvars)
    def test_both_kls_are_non_negative(self, mu, logvar, mu_p, logvar_p):
        post = params(mu, logvar)
        prior = params(mu_p, logvar_p)
        assert float(kl_posterior_prior(post, prior)) >= -1e-12
        assert float(kl_prior_standard(prior)) >= -1e-12

    def test_kl_positive_under_perturbation(self):
        post = params(mean=0.0, logvar=0.0)
        assert float(kl_posterior_prior(params(0.01, 0.0),
                                        params(0.4, -0.8))) > 0
        assert float(kl_prior_standard(params(0.0, 0.1))) > 0
        _ = post

    def test_kl_sums_over_latent_dims_and_phonemes(self):
        mean = torch.ones(4, 2, dtype=torch.float64)
        logvar = torch.zeros(4, 2, dtype=torch.float64)
        kl = kl_prior_standard(LatentParams(mean=mean, logvar=logvar))
        assert kl.shape == (4,)
        assert torch.allclose(kl, torch.full((4,), 1.0, dtype=torch.float64))

    def test_gradients_match_central_differences(self):
        # float64 finite differences on every parameter of both KLs
        g = torch.Generator().manual_seed(5)

        def draw():
            return (torch.randn(3, 2, dtype=torch.float64, generator=g)
                    .requires_grad_(True))

        leaves = [draw() for _ in range(4)]

        def loss(mu, logvar, mu_p, logvar_p):
            post = LatentParams(mean=mu, logvar=logvar)
            prior = LatentParams(mean=mu_p, logvar=logvar_p)
            return (kl_posterior_prior(post, prior).sum()
                    + kl_prior_standard(prior).sum())

        value = loss(*leaves)
        value.backward()
        h = 1e-6
        for leaf in leaves:
            for idx in [(0, 0), (1, 1), (2, 0)]:
                with torch.no_grad():
                    orig = leaf[idx].item()
                    leaf[idx] = orig + h
                    up = loss(*leaves).item()
                    leaf[idx] = orig - h
                    down = loss(*leaves).item()
                    leaf[idx] = orig
                fd = (up - down) / (2 * h)
                grad = leaf.grad[idx].item()
                assert abs(grad - fd) <= 1e-4 * max(abs(fd), 1e-8)


class TestInferenceSampling:
    def setup_method(self):
        self.prior = LatentParams(
            mean=torch.tensor([[0.5, -1.0], [2.0, 0.0]]),
            logvar=torch.tensor([[0.0, -0.5], [0.3, 1.0]]),
        )

    def test_negative_temperature_rejected(self):
        with pytest.raises(ValueError, match="temperature"):
            inference_sample(self.prior, temperature=-0.1)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError, match="mode"):
            inference_sample(self.prior, mode="argmax")

    def test_mean_mode_returns_prior_mean(self):
        out = inference_sample(self.prior, mode="mean")
        assert torch.equal(out.z, self.prior.mean)

    def test_zero_temperature_collapses_to_mean(self):
        out = inference_sample(self.prior, mode="sample", temperature=0.0,
                               generator=torch.Generator().manual_seed(0))
        assert torch.allclose(out.z, self.prior.mean)

    def test_standard_gaussian_flag_ignores_learned_prior(self):
        eps = torch.randn(2, 2, generator=torch.Generator().manual_seed(1))
        out = inference_sample(self.prior, mode="sample", temperature=1.0,
                               standard_gaussian=True, epsilon=eps)
        assert torch.equal(out.z, eps)

    def test_standard_gaussian_mean_mode_is_zero(self):
        out = inference_sample(self.prior, mode="mean", standard_gaussian=True,
                               generator=torch.Generator().manual_seed(1))
        assert torch.equal(out.z, torch.zeros(2, 2))

    def test_temperature_scales_the_noise(self):
        eps = torch.ones(2, 2)
        half = inference_sample(self.prior, temperature=0.5, epsilon=eps)
        full = inference_sample(self.prior, temperature=1.0, epsilon=eps)
        spread_half = half.z - self.prior.mean
        spread_full = full.z - self.prior.mean
        assert torch.allclose(spread_half * 2, spread_full, atol=1e-6)

    def test_sample_mean_respects_standard_error_bound(self):
        # 20 unit-temperature draws: the per-dimension sample mean should
        # sit within 3 standard errors of mu_p
        g = torch.Generator().manual_seed(17)
        draws = torch.stack([
            inference_sample(self.prior, temperature=1.0, generator=g).z
            for _ in range(20)
        ])
        bound = 3.0 * self.prior.sigma / math.sqrt(20)
        assert ((draws.mean(dim=0) - self.prior.mean).abs() <= bound).all()


class TestSegmentAverage:
    def test_hand_computed_means(self):
        # durations [2, 3] over 5 frames: first two rows and last three
        frames = torch.tensor([[[0.0], [2.0], [3.0], [4.0], [5.0]]])
        out = segment_average(frames, torch.tensor([[2, 3]]))
        assert torch.allclose(out, torch.tensor([[[1.0], [4.0]]]))

    def test_constant_frames_give_identical_rows(self):
        frames = torch.full((1, 10, 3), 0.7)
        out = segment_average(frames, torch.tensor([[4, 6]]))
        assert torch.allclose(out[0, 0], out[0, 1])
        assert torch.allclose(out, torch.full((1, 2, 3), 0.7))

    def test_zero_duration_phoneme_gets_zero_vector(self):
        frames = torch.randn(1, 4, 2)
        out = segment_average(frames, torch.tensor([[2, 0, 2]]))
        assert torch.equal(out[0, 1], torch.zeros(2))

    def test_padding_frames_are_ignored(self):
        g = torch.Generator().manual_seed(2)
        frames = torch.randn(1, 8, 2, generator=g)
        padded = torch.cat([frames, torch.randn(1, 3, 2, generator=g)], dim=1)
        durations = torch.tensor([[5, 3]])
        assert torch.allclose(segment_average(frames, durations),
                              segment_average(padded, durations))

    def test_duration_overrun_rejected(self):
        with pytest.raises(ValueError, match="durations sum"):
            segment_average(torch.randn(1, 4, 2), torch.tensor([[3, 3]]))

    def test_float_durations_rejected(self):
        with pytest.raises(ValueError, match="integer"):
            segment_average(torch.randn(1, 4, 2), torch.tensor([[2.0, 2.0]]))

    @given(durs=st.lists(st.integers(min_value=0, max_value=6),
                         min_size=1, max_size=5))
    def test_total_mass_is_preserved(self, durs):
        # sum of (mean * duration) over phonemes == sum of covered frames
        total = sum(durs)
        frames = torch.randn(1, max(total, 1), 3,
                             generator=torch.Generator().manual_seed(7))
        d = torch.tensor([durs])
        out = segment_average(frames, d)
        weighted = (out[0] * d[0].unsqueeze(-1)).sum(dim=0)
        covered = frames[0, :total].sum(dim=0)
        assert torch.allclose(weighted, covered, atol=1e-5)


class TestParameterNetworks:
    CFG = ModelConfig(d_model=8, vae_layers=4, vae_channels=16, d_z=2)

    def test_prior_initial_params_are_standard_normal(self):
        # zero-initialised output layer: mu_p = 0, logvar_p = 0 (sigma_p = 1)
        net = PriorNetwork(self.CFG)
        h = torch.randn(2, 7, 8)
        p = net(h, torch.randn(2, 7))
        assert p.mean.shape == (2, 7, 2)
        assert torch.equal(p.mean, torch.zeros(2, 7, 2))
        assert torch.equal(p.logvar, torch.zeros(2, 7, 2))

    def test_prior_is_position_wise(self):
        net = PriorNetwork(self.CFG)
        with torch.no_grad():
            for conv in net.net.convs:
                conv.weight.normal_(generator=torch.Generator().manual_seed(1))
        h = torch.randn(1, 7, 8)
        d = torch.randn(1, 7)
        perm = torch.randperm(7, generator=torch.Generator().manual_seed(4))
        base = net(h, d)
        permuted = net(h[:, perm], d[:, perm])
        assert torch.allclose(permuted.mean, base.mean[:, perm], atol=1e-6)
        assert torch.allclose(permuted.logvar, base.logvar[:, perm], atol=1e-6)

    def test_posterior_initial_params_are_standard_normal(self):
        net = PosteriorNetwork(self.CFG, n_mels=4)
        mel = torch.randn(1, 6, 4)
        p = net(mel, torch.tensor([[2, 2, 2]]))
        assert p.mean.shape == (1, 3, 2)
        assert torch.equal(p.mean, torch.zeros(1, 3, 2))
        assert torch.equal(p.logvar, torch.zeros(1, 3, 2))

    def test_posterior_pools_before_the_network(self):
        net = PosteriorNetwork(self.CFG, n_mels=4)
        with torch.no_grad():
            for conv in net.net.convs:
                conv.weight.normal_(generator=torch.Generator().manual_seed(2))
        # two mels with equal segment means must give equal parameters
        mel_a = torch.tensor([[[1.0, 0.0, 0.0, 0.0], [3.0, 0.0, 0.0, 0.0]]])
        mel_b = torch.tensor([[[2.0, 0.0, 0.0, 0.0], [2.0, 0.0, 0.0, 0.0]]])
        d = torch.tensor([[2]])
        pa, pb = net(mel_a, d), net(mel_b, d)
        assert torch.allclose(pa.mean, pb.mean, atol=1e-6)

    def test_posterior_duration_mismatch_rejected(self):
        net = PosteriorNetwork(self.CFG, n_mels=4)
        with pytest.raises(ValueError):
            net(torch.randn(1, 3, 4), torch.tensor([[2, 2]]))

    def test_global_posterior_is_single_utterance_latent(self):
        net = GlobalPosteriorNetwork(self.CFG, n_mels=4)
        mel = torch.randn(3, 9, 4)
        mask = torch.ones(3, 9, dtype=torch.bool)
        p = net(mel, mask)
        assert p.mean.shape == (3, 1, 2)
        assert torch.equal(p.mean, torch.zeros(3, 1, 2))

    def test_global_posterior_ignores_masked_frames(self):
        net = GlobalPosteriorNetwork(self.CFG, n_mels=4)
        with torch.no_grad():
            for m in net.net:
                if isinstance(m, torch.nn.Linear):
                    m.weight.normal_(generator=torch.Generator().manual_seed(3))
        g = torch.Generator().manual_seed(6)
        mel = torch.randn(1, 5, 4, generator=g)
        padded = torch.cat([mel, 99.0 * torch.ones(1, 3, 4)], dim=1)
        mask_full = torch.ones(1, 5, dtype=torch.bool)
        mask_padded = torch.cat(
            [mask_full, torch.zeros(1, 3, dtype=torch.bool)], dim=1
        )
        pa = net(mel, mask_full)
        pb = net(padded, mask_padded)
        assert torch.allclose(pa.mean, pb.mean, atol=1e-6)
        assert torch.allclose(pa.logvar, pb.logvar, atol=1e-6)
