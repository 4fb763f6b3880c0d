"""Loss terms and image metrics, checked against closed forms and oracles."""

import math

import numpy as np
import pytest
import torch

from dualarb import kspace, losses

import oracles


def t64(x):
    return torch.as_tensor(np.asarray(x), dtype=torch.float64)


class TestRecLoss:
    def test_mean_absolute_error(self, rng):
        a, b = rng.random((6, 6)), rng.random((6, 6))
        got = float(losses.rec_loss(t64(a), t64(b)))
        assert got == pytest.approx(float(np.mean(np.abs(a - b))), rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            losses.rec_loss(torch.zeros(3, 3), torch.zeros(3, 4))

    def test_gradient_vs_finite_differences(self, rng):
        hr = rng.random((5, 5))
        sr0 = rng.random((5, 5))  # generic: no |sr-hr| ties near zero

        def f(x):
            return float(losses.rec_loss(t64(x), t64(hr)))

        sr = t64(sr0).requires_grad_(True)
        losses.rec_loss(sr, t64(hr)).backward()
        fd = oracles.central_fd(f, sr0.copy(), 1e-6)
        assert np.max(np.abs(sr.grad.numpy() - fd)) < 1e-6


class TestKLoss:
    def test_matches_spectrum_norm_oracle(self, rng):
        a, b = rng.random((12, 12)), rng.random((12, 12))
        mask = kspace.lowpass_mask((12, 12), (6, 6)).values
        got = float(losses.k_loss(t64(a), t64(b), t64(mask)))
        assert got == pytest.approx(oracles.masked_diff_norm_oracle(a, b, mask),
                                    rel=1e-10)

    def test_blind_to_masked_out_frequencies(self, rng):
        """Perturbations living entirely outside the passband leave the loss
        at zero. Real cosines put spectral mass at +/-f, so frequencies are
        chosen outside the window on both signs."""
        n = 16
        hr = rng.random((n, n))
        mask = kspace.lowpass_mask((n, n), (8, 8)).values  # keeps f in [-4, 3]
        i = np.arange(n)[:, None]
        j = np.arange(n)[None, :]
        bump = (0.3 * np.cos(2 * np.pi * 6 * i / n + 0.7)
                * np.cos(2 * np.pi * 5 * j / n + 0.1)
                + 0.2 * np.cos(2 * np.pi * 7 * (i + j) / n))
        # sanity: the perturbation really is invisible to the passband
        assert np.max(np.abs(kspace.fft2c(bump).coeffs) * mask) < 1e-12
        got = float(losses.k_loss(t64(hr + bump), t64(hr), t64(mask)))
        assert got < 1e-6

    def test_dc_offset_closed_form(self):
        """Adding c to every pixel moves only the DC bin, by c*sqrt(N)."""
        n, c = 12, 0.3
        hr = np.zeros((n, n))
        mask = kspace.lowpass_mask((n, n), (6, 6)).values
        got = float(losses.k_loss(t64(hr + c), t64(hr), t64(mask)))
        expect = c * math.sqrt(n * n)
        assert abs(got - expect) / expect < 1e-6

    def test_parseval_split(self, rng):
        """With an all-ones mask the squared loss is the full spectral energy
        of the difference; with the low-pass mask, passband + stopband
        energies sum to it."""
        a, b = rng.random((12, 12)), rng.random((12, 12))
        ones = np.ones((12, 12))
        mask = kspace.lowpass_mask((12, 12), (5, 7)).values
        total = float(losses.k_loss(t64(a), t64(b), t64(ones))) ** 2
        low = float(losses.k_loss(t64(a), t64(b), t64(mask))) ** 2
        high = float(losses.k_loss(t64(a), t64(b), t64(1.0 - mask))) ** 2
        energy = float(np.sum((a - b) ** 2))
        assert total == pytest.approx(energy, rel=1e-6)
        assert low + high == pytest.approx(total, rel=1e-6)

    def test_batched_is_mean_of_norms(self, rng):
        a = rng.random((3, 1, 8, 8))
        b = rng.random((3, 1, 8, 8))
        mask = kspace.lowpass_mask((8, 8), (4, 4)).values
        per = [oracles.masked_diff_norm_oracle(a[i, 0], b[i, 0], mask)
               for i in range(3)]
        got = float(losses.k_loss(t64(a), t64(b), t64(mask)))
        assert got == pytest.approx(float(np.mean(per)), rel=1e-10)

    def test_gradient_vs_finite_differences(self, rng):
        hr = rng.random((8, 8))
        sr0 = rng.random((8, 8))
        mask = kspace.lowpass_mask((8, 8), (4, 4)).values

        def f(x):
            return float(losses.k_loss(t64(x), t64(hr), t64(mask)))

        sr = t64(sr0).requires_grad_(True)
        losses.k_loss(sr, t64(hr), t64(mask)).backward()
        fd = oracles.central_fd(f, sr0.copy(), 1e-6)
        assert np.max(np.abs(sr.grad.numpy() - fd)) < 1e-7

    def test_mask_dim_mismatch(self):
        with pytest.raises(ValueError):
            losses.k_loss(torch.zeros(8, 8), torch.zeros(8, 8), torch.zeros(4, 4))


class TestFullLoss:
    def test_report_identity(self, rng):
        sr, hr = t64(rng.random((8, 8))), t64(rng.random((8, 8)))
        mask = t64(kspace.lowpass_mask((8, 8), (4, 4)).values)
        total, rep = losses.full_loss(sr, hr, mask, lambda_k=0.05)
        assert rep.l_full == rep.l_rec + rep.lambda_k * rep.l_k
        assert float(total) == pytest.approx(rep.l_full, rel=1e-12)

    def test_use_k_false_drops_term(self, rng):
        sr, hr = t64(rng.random((8, 8))), t64(rng.random((8, 8)))
        mask = t64(np.ones((8, 8)))
        total, rep = losses.full_loss(sr, hr, mask, use_k=False)
        assert rep.l_k == 0.0
        assert float(total) == pytest.approx(rep.l_rec, rel=1e-12)

    def test_gradient_vs_finite_differences(self, rng):
        hr = rng.random((8, 8))
        sr0 = rng.random((8, 8))
        mask = kspace.lowpass_mask((8, 8), (4, 4)).values

        def f(x):
            total, _ = losses.full_loss(t64(x), t64(hr), t64(mask), lambda_k=0.05)
            return float(total)

        sr = t64(sr0).requires_grad_(True)
        total, _ = losses.full_loss(sr, t64(hr), t64(mask), lambda_k=0.05)
        total.backward()
        fd = oracles.central_fd(f, sr0.copy(), 1e-6)
        rel = np.max(np.abs(sr.grad.numpy() - fd)) / max(1e-12, np.max(np.abs(fd)))
        assert rel < 1e-4

    def test_rejects_negative_lambda(self):
        with pytest.raises(ValueError):
            losses.full_loss(torch.zeros(4, 4), torch.zeros(4, 4),
                             torch.ones(4, 4), lambda_k=-0.1)


class TestPSNR:
    def test_identical_images_infinite(self, rng):
        x = rng.random((16, 16))
        assert losses.psnr(x, x) == float("inf")

    def test_half_range_closed_form(self):
        a = np.zeros((8, 8))
        b = np.full((8, 8), 0.5)
        # MSE = 0.25 -> 10*log10(1/0.25) = 20*log10(2)
        assert losses.psnr(a, b) == pytest.approx(20 * math.log10(2), abs=1e-9)
        assert losses.psnr(a, b) == pytest.approx(6.0205999132796, abs=1e-9)

    def test_data_range_scaling(self, rng):
        a, b = rng.random((8, 8)), rng.random((8, 8))
        assert losses.psnr(2 * a, 2 * b, data_range=2.0) == \
            pytest.approx(losses.psnr(a, b), rel=1e-12)

    def test_matches_oracle(self, rng):
        a, b = rng.random((8, 8)), rng.random((8, 8))
        assert losses.psnr(a, b) == pytest.approx(oracles.psnr_oracle(a, b), rel=1e-12)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            losses.psnr(np.full((4, 4), np.nan), np.zeros((4, 4)))


class TestSSIM:
    def test_matches_sliding_window_oracle(self, rng):
        for _ in range(5):
            a = rng.random((16, 14))
            b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
            assert losses.ssim(a, b) == pytest.approx(
                oracles.ssim_oracle(a, b), abs=1e-9)

    def test_identical_images_give_one(self, rng):
        x = rng.random((12, 12))
        assert losses.ssim(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_window_normalized(self):
        w = losses.gaussian_window()
        assert w.shape == (11, 11)
        assert w.sum() == pytest.approx(1.0, rel=1e-12)
        assert np.array_equal(w, w.T)
        assert np.allclose(w, oracles.gaussian_window_oracle())

    def test_minimum_size_enforced(self):
        with pytest.raises(ValueError):
            losses.ssim(np.zeros((10, 12)), np.zeros((10, 12)))

    def test_symmetry(self, rng):
        a, b = rng.random((12, 12)), rng.random((12, 12))
        assert losses.ssim(a, b) == pytest.approx(losses.ssim(b, a), rel=1e-12)
