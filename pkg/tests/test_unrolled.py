"""Stage-I unrolled model: SME, regularizer, cascades, full reconstruction."""

import math

import pytest
import torch

from promptmr import (
    Cascade,
    CoilSensitivities,
    ConfigError,
    PhantomSpec,
    Stage1Model,
    UnrolledConfig,
    acs_ratio_maps,
    apply_mask,
    build_adjacent_stack,
    export_prompt_embeddings,
    fft2c,
    ifft2c,
    make_mask,
    reconstruct_stage1,
    reduce,
    regularizer_G,
    rss,
    simulate_case,
    ssim_loss,
    zero_regularizers,
)
from fd import fd_param_grad_check

torch.manual_seed(0)


def randc(*shape, seed=0, dtype=torch.complex128):
    gen = torch.Generator().manual_seed(seed)
    ft = torch.float64 if dtype == torch.complex128 else torch.float32
    return torch.complex(
        torch.randn(*shape, generator=gen, dtype=ft),
        torch.randn(*shape, generator=gen, dtype=ft),
    )


def random_sens(n_coils, ky, kx, seed=0, dtype=torch.complex128):
    return CoilSensitivities.from_raw(randc(n_coils, ky, kx, seed=seed, dtype=dtype))


def tiny_unrolled(family="promptmr", cascades=2, a=1, **kw):
    return UnrolledConfig(
        cascades=cascades,
        adjacency=a,
        model_family=family,
        denoiser_width=4,
        denoiser_cab_per_block=1,
        denoiser_reduction=2,
        sme_width=4,
        sme_cab_per_block=1,
        sme_reduction=2,
        **kw,
    )


class TestSME:
    def test_normalization_invariant(self):
        model = Stage1Model(tiny_unrolled())
        with torch.no_grad():  # random tail so the net actually perturbs the maps
            for p in model.sme.parameters():
                p.add_(0.1 * torch.randn_like(p))
        y = randc(3, 16, 16, seed=1, dtype=torch.complex64)
        mask = make_mask(16, 4, 6)
        sens = model.sme(y, mask)
        ssq = (sens.maps.abs() ** 2).sum(dim=0)
        assert torch.allclose(ssq, torch.ones_like(ssq), atol=1e-5)

    def test_single_coil_unit_magnitude(self):
        model = Stage1Model(tiny_unrolled())
        y = randc(1, 16, 16, seed=2, dtype=torch.complex64)
        mask = make_mask(16, 4, 6)
        mag = model.sme(y, mask).maps.abs()
        nz = mag > 0
        assert torch.allclose(mag[nz], torch.ones_like(mag[nz]), atol=1e-5)

    def test_untrained_matches_acs_ratio_oracle(self):
        case = simulate_case(PhantomSpec(grid=(64, 64), n_coils=4, n_frames=4, noise_std=0.0, seed=3))
        mask = make_mask(64, 4, 16)
        y = apply_mask(case.kspace.data, mask)
        model = Stage1Model(tiny_unrolled())  # zero-init SME tail => pure ACS ratio
        est = model.sme(y[2], mask)
        oracle = acs_ratio_maps(y[2], mask)
        assert torch.allclose(est.maps, oracle.maps, atol=1e-5)

        # and the oracle itself correlates with the true maps on the support
        support = case.target[2] > 0.1 * case.target[2].max()
        s_est = oracle.maps[:, support].flatten()
        s_true = case.sens_true.maps[:, support].flatten()
        cos = (s_est.conj() @ s_true).abs() / (s_est.norm() * s_true.norm())
        assert cos > 0.9

    def test_empty_acs_rejected(self):
        model = Stage1Model(tiny_unrolled())
        from promptmr.fourier import UndersampleMask

        bad = UndersampleMask(keep=torch.ones(16), acceleration=1, acs_lines=0)
        with pytest.raises(ConfigError):
            model.sme(randc(2, 16, 16, dtype=torch.complex64), bad)


class TestRegularizer:
    def test_identity_denoiser_is_projection(self):
        sens = random_sens(4, 16, 16, seed=4)
        k = randc(3, 4, 16, 16, seed=5)
        once = regularizer_G(k, sens, lambda x: x)
        twice = regularizer_G(once, sens, lambda x: x)
        err = (twice - once).abs().max() / once.abs().max()
        assert err < 1e-6

    def test_output_shape(self):
        sens = random_sens(3, 16, 16, seed=6)
        k = randc(5, 3, 16, 16, seed=7)
        assert regularizer_G(k, sens, lambda x: x).shape == k.shape

    def test_translation_equivariance_constant_maps(self):
        # spatially constant maps commute with translation; linear-phase
        # modulation in k-space == rolled image (shift theorem)
        c = torch.tensor([0.6 + 0.3j, -0.2 + 0.7j], dtype=torch.complex128)
        c = c / c.abs().pow(2).sum().sqrt()
        sens = CoilSensitivities(maps=c[:, None, None].expand(2, 16, 16).contiguous())
        k = randc(1, 2, 16, 16, seed=8)

        dy, dx = 3, 5
        n = 16
        idx = torch.arange(n, dtype=torch.float64) - n // 2
        phase = torch.exp(-2j * math.pi * (dy * idx[:, None] + dx * idx[None, :]) / n)
        k_mod = k * phase

        # shift-theorem oracle: modulated k-space is the rolled image
        rolled = torch.roll(ifft2c(k), shifts=(dy, dx), dims=(-2, -1))
        assert (ifft2c(k_mod) - rolled).abs().max() < 1e-10

        g = regularizer_G(k, sens, lambda x: x)
        g_mod = regularizer_G(k_mod, sens, lambda x: x)
        err = (g_mod - g * phase).abs().max() / g.abs().max()
        assert err < 1e-6


class TestCascade:
    def make(self, seed=0):
        torch.manual_seed(seed)
        model = Stage1Model(tiny_unrolled(cascades=1, a=1))
        zero_regularizers(model)
        return model.cascade_at(0).double()

    def test_full_mask_eta1_solves_dc(self):
        cascade = self.make()
        mask = make_mask(16, 1, 4)
        sens = random_sens(2, 16, 16, seed=9)
        k = randc(3, 2, 16, 16, seed=10)
        y = randc(3, 2, 16, 16, seed=11)
        k1 = cascade(k, y, mask, sens)
        assert (k1 - y).abs().max() < 1e-10

    def test_eta0_g0_fixed_point(self):
        cascade = self.make()
        with torch.no_grad():
            cascade.eta.zero_()
        mask = make_mask(16, 4, 4)
        sens = random_sens(2, 16, 16, seed=12)
        k = randc(3, 2, 16, 16, seed=13)
        y = randc(3, 2, 16, 16, seed=14)
        assert torch.equal(cascade(k, y, mask, sens), k)

    def test_off_mask_lines_unchanged_when_g_zero(self):
        cascade = self.make()
        mask = make_mask(16, 4, 4, scheme="random", seed=1)
        sens = random_sens(2, 16, 16, seed=15)
        k = randc(3, 2, 16, 16, seed=16)
        y = apply_mask(randc(3, 2, 16, 16, seed=17), mask)
        k1 = cascade(k, y, mask, sens)
        off = mask.keep == 0
        assert torch.equal(k1[..., off, :], k[..., off, :])

    @pytest.mark.parametrize("eta", [0.3, 1.0, 1.7])
    def test_dc_contraction_on_mask(self, eta):
        cascade = self.make()
        with torch.no_grad():
            cascade.eta.fill_(eta)
        mask = make_mask(16, 4, 4, scheme="random", seed=2)
        sens = random_sens(2, 16, 16, seed=18)
        k = randc(3, 2, 16, 16, seed=19)
        y = apply_mask(randc(3, 2, 16, 16, seed=20), mask)
        k1 = cascade(k, y, mask, sens)
        ky_on = mask.keep > 0
        lhs = (k1 - y)[..., ky_on, :].abs()
        rhs = abs(1 - eta) * (k - y)[..., ky_on, :].abs()
        assert torch.all(lhs <= rhs + 1e-10)


class TestReconstruct:
    def test_full_sampling_zero_g_equals_zero_filled(self):
        case = simulate_case(PhantomSpec(grid=(32, 32), n_coils=3, n_frames=4, noise_std=0.0, seed=21))
        mask = make_mask(32, 1, 8)
        model = Stage1Model(tiny_unrolled(cascades=2, a=1))
        zero_regularizers(model)
        out = reconstruct_stage1(case.kspace.data, mask, model, "temporal")
        expected = rss(ifft2c(case.kspace.data), dim=1)
        err = (out - expected).abs().max() / expected.abs().max()
        assert err < 1e-6

    def test_output_shape_and_nonnegative(self):
        case = simulate_case(PhantomSpec(grid=(32, 32), n_coils=2, n_frames=3, noise_std=0.0, seed=22))
        mask = make_mask(32, 4, 8)
        model = Stage1Model(tiny_unrolled(cascades=1, a=1))
        y = apply_mask(case.kspace.data, mask)
        out = reconstruct_stage1(y, mask, model, "temporal")
        assert out.shape == (3, 32, 32)
        assert torch.all(out >= 0)

    def test_a0_degenerates_to_single_frame(self):
        case = simulate_case(PhantomSpec(grid=(32, 32), n_coils=2, n_frames=3, noise_std=0.0, seed=23))
        mask = make_mask(32, 4, 8)
        y = apply_mask(case.kspace.data, mask)
        torch.manual_seed(24)
        model = Stage1Model(tiny_unrolled(cascades=2, a=0))
        out = reconstruct_stage1(y, mask, model, "temporal")

        # manual single-frame pipeline with the same parameters
        sens = model.estimate_sensitivities(y, mask)
        singles = []
        for f in range(3):
            k = model.forward_stack(y[f : f + 1].unsqueeze(0), mask, sens)
            singles.append(rss(ifft2c(k[0, 0]), dim=0))
        assert torch.allclose(out, torch.stack(singles), atol=1e-5)

    def test_determinism(self):
        case = simulate_case(PhantomSpec(grid=(32, 32), n_coils=2, n_frames=3, noise_std=0.0, seed=25))
        mask = make_mask(32, 4, 8)
        y = apply_mask(case.kspace.data, mask)
        model = Stage1Model(tiny_unrolled())
        r1 = reconstruct_stage1(y, mask, model, "temporal")
        r2 = reconstruct_stage1(y, mask, model, "temporal")
        assert torch.equal(r1, r2)

    def test_end_to_end_gradients(self):
        torch.manual_seed(26)
        model = Stage1Model(tiny_unrolled(cascades=2, a=0)).double()
        with torch.no_grad():
            for p in model.parameters():
                p.add_(0.05 * torch.randn_like(p))
        y_full = randc(1, 2, 8, 8, seed=27)
        mask = make_mask(8, 2, 4)
        y = apply_mask(y_full, mask)
        sens = random_sens(2, 8, 8, seed=28)
        target = rss(ifft2c(y_full), dim=1)

        def loss_fn():
            k = model.forward_stack(y.unsqueeze(0), mask, sens)
            recon = rss(ifft2c(k[0, 0]), dim=0)
            return ssim_loss(recon, target[0], data_range=float(target.max()))

        etas = [model.cascade_at(t).eta for t in range(2)]
        fd_param_grad_check(loss_fn, etas, n_samples=2, rtol=1e-3)
        fd_param_grad_check(loss_fn, model.parameters(), n_samples=10, rtol=1e-3, seed=1)


class TestPromptExport:
    def test_rows_and_normalization(self):
        torch.manual_seed(29)
        model = Stage1Model(tiny_unrolled(cascades=2, a=1))
        mask = make_mask(16, 4, 6)
        sens = random_sens(2, 16, 16, seed=30, dtype=torch.complex64)
        inputs = [
            (f"case{i}", randc(3, 2, 16, 16, seed=40 + i, dtype=torch.complex64), mask, sens)
            for i in range(3)
        ]
        rows = export_prompt_embeddings(model, inputs)
        assert len(rows) == 3 * 3  # inputs x levels
        for row in rows:
            assert sum(row["weights"]) == pytest.approx(1.0, abs=1e-5)
            assert all(w >= 0 for w in row["weights"])

    def test_identical_inputs_identical_rows(self):
        torch.manual_seed(31)
        model = Stage1Model(tiny_unrolled(cascades=1, a=0))
        mask = make_mask(16, 4, 6)
        sens = random_sens(2, 16, 16, seed=32, dtype=torch.complex64)
        stack = randc(1, 2, 16, 16, seed=33, dtype=torch.complex64)
        rows = export_prompt_embeddings(model, [("a", stack, mask, sens), ("b", stack, mask, sens)])
        assert rows[0]["weights"] == rows[3]["weights"]

    def test_baseline_rejected(self):
        model = Stage1Model(tiny_unrolled(family="baseline_caunet"))
        with pytest.raises(ConfigError):
            export_prompt_embeddings(model, [])
