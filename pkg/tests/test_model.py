"""Network architecture invariants: shapes, init, locality, determinism."""

import numpy as np
import pytest
import torch

from dualarb.geometry import ScaleTask
from dualarb.model import (DESK_CONFIG, DualArbNet, ModelConfig,
                           load_parameter_arrays, named_parameter_arrays)

torch.set_num_threads(1)


def make_task(hr=32, tar=16, ref=32, mode="HR"):
    return ScaleTask.from_dims((hr, hr), (tar, tar), (ref, ref), mode)


@pytest.fixture(scope="module")
def tiny_model():
    return DualArbNet(ModelConfig(num_blocks=2, convs_per_block=2,
                                  growth=8, base_channels=4))


class TestConfig:
    def test_channel_arithmetic(self):
        cfg = ModelConfig(base_channels=8)
        assert cfg.idf_width == 72
        assert cfg.fusion_channels == 144
        assert cfg.decoder_in_channels == 4

    def test_optional_inputs_change_width(self):
        assert ModelConfig(include_scale=False).decoder_in_channels == 2
        assert ModelConfig(include_coord=False).decoder_in_channels == 2
        assert ModelConfig(include_ref_coord=True).decoder_in_channels == 6
        with pytest.raises(ValueError):
            ModelConfig(include_scale=False, include_coord=False).decoder_in_channels

    def test_dict_round_trip(self):
        cfg = ModelConfig(num_blocks=3, seed=9, use_reference=False)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg

    def test_desk_parameter_count(self):
        n = sum(p.numel() for p in DualArbNet(DESK_CONFIG).parameters())
        assert n == 2_025_533


class TestInit:
    def test_deterministic_in_seed(self):
        a = DualArbNet(ModelConfig(seed=5))
        b = DualArbNet(ModelConfig(seed=5))
        c = DualArbNet(ModelConfig(seed=6))
        pa, pb, pc = (named_parameter_arrays(m) for m in (a, b, c))
        assert all(np.array_equal(pa[k], pb[k]) for k in pa)
        assert any(not np.array_equal(pa[k], pc[k]) for k in pa)

    def test_sine_biases_zero(self, tiny_model):
        assert not tiny_model.decoder.embed.bias.abs().any()
        assert not tiny_model.skip.conv.bias.abs().any()
        for layer in tiny_model.decoder.layers:
            assert not layer.bias.abs().any()

    def test_embed_weight_bound(self, tiny_model):
        fan_in = tiny_model.config.decoder_in_channels
        assert tiny_model.decoder.embed.weight.abs().max() <= 30.0 / fan_in

    def test_deep_sine_weight_bound(self, tiny_model):
        w = tiny_model.config.idf_width
        bound = np.sqrt(6.0 / w) / 30.0
        for layer in tiny_model.decoder.layers:
            assert layer.weight.abs().max() <= bound

    def test_initial_output_bounded(self):
        """Freshly initialized nets must not explode: tanh-free sine decoding
        keeps magnitudes near zero regardless of seed."""
        task = make_task(24, 12, 24)
        worst = 0.0
        for seed in range(5):
            model = DualArbNet(ModelConfig(num_blocks=2, convs_per_block=2,
                                           growth=8, base_channels=4, seed=seed))
            x = torch.rand(1, 1, 12, 12, generator=torch.Generator().manual_seed(seed))
            ref = torch.rand(1, 1, 24, 24, generator=torch.Generator().manual_seed(99 + seed))
            with torch.no_grad():
                out = model(x, ref, task)
            worst = max(worst, float(out.abs().max()))
        assert worst < 10.0


class TestForward:
    def test_output_shape_hr_ref(self, tiny_model):
        task = make_task(32, 16, 32)
        out = tiny_model(torch.rand(1, 1, 16, 16), torch.rand(1, 1, 32, 32), task)
        assert out.shape == (1, 1, 32, 32)

    def test_output_shape_lr_ref(self, tiny_model):
        task = make_task(32, 16, 16, "LR")
        out = tiny_model(torch.rand(1, 1, 16, 16), torch.rand(1, 1, 16, 16), task)
        assert out.shape == (1, 1, 32, 32)

    def test_output_shape_custom_ref(self, tiny_model):
        task = make_task(32, 16, 24, "custom")
        out = tiny_model(torch.rand(1, 1, 16, 16), torch.rand(1, 1, 24, 24), task)
        assert out.shape == (1, 1, 32, 32)

    def test_non_integer_scale(self, tiny_model):
        task = ScaleTask.from_dims((41, 41), (16, 16), (41, 41))
        out = tiny_model(torch.rand(1, 1, 16, 16), torch.rand(1, 1, 41, 41), task)
        assert out.shape == (1, 1, 41, 41)

    def test_batched(self, tiny_model):
        task = make_task(24, 12, 24)
        out = tiny_model(torch.rand(3, 1, 12, 12), torch.rand(3, 1, 24, 24), task)
        assert out.shape == (3, 1, 24, 24)

    def test_want_ref_output(self, tiny_model):
        task = make_task(24, 12, 24)
        sr_tar, sr_ref = tiny_model(torch.rand(1, 1, 12, 12),
                                    torch.rand(1, 1, 24, 24), task,
                                    want_ref_output=True)
        assert sr_tar.shape == sr_ref.shape == (1, 1, 24, 24)
        assert not torch.equal(sr_tar, sr_ref)

    def test_numpy_input_accepted(self, tiny_model, rng):
        task = make_task(24, 12, 24)
        out = tiny_model(rng.random((12, 12)), rng.random((24, 24)), task)
        assert out.shape == (1, 1, 24, 24)

    def test_missing_reference_rejected(self, tiny_model):
        with pytest.raises(ValueError):
            tiny_model(torch.rand(1, 1, 12, 12), None, make_task(24, 12, 24))

    def test_dims_mismatch_rejected(self, tiny_model):
        task = make_task(24, 12, 24)
        with pytest.raises(ValueError):
            tiny_model(torch.rand(1, 1, 16, 16), torch.rand(1, 1, 24, 24), task)
        with pytest.raises(ValueError):
            tiny_model(torch.rand(1, 1, 12, 12), torch.rand(1, 1, 32, 32), task)

    def test_batch_size_mismatch_rejected(self, tiny_model):
        task = make_task(24, 12, 24)
        with pytest.raises(ValueError):
            tiny_model(torch.rand(2, 1, 12, 12), torch.rand(3, 1, 24, 24), task)

    def test_no_reference_variant_ignores_ref(self):
        model = DualArbNet(ModelConfig(num_blocks=2, convs_per_block=2, growth=8,
                                       base_channels=4, use_reference=False))
        task = make_task(24, 12, 24)
        out = model(torch.rand(1, 1, 12, 12), None, task)
        assert out.shape == (1, 1, 24, 24)


class TestLocality:
    """Per-pixel decoding: output pixel p depends only on fused column p."""

    @staticmethod
    def loud_decoder_model():
        """Fresh-init deep sine weights are ~1/30 scale, so a feature poke
        moves the output by less than a float32 ulp of the skip term. Inflate
        them so the modulation path is numerically visible; locality is
        structural and must hold at any weight magnitude."""
        model = DualArbNet(ModelConfig(num_blocks=2, convs_per_block=2,
                                       growth=8, base_channels=4))
        with torch.no_grad():
            for layer in model.decoder.layers:
                layer.weight *= 30.0
            model.decoder.head.weight *= 30.0
        return model

    def test_fused_perturbation_stays_local(self):
        model = self.loud_decoder_model()
        task = make_task(16, 8, 16)
        tar = torch.rand(1, 1, 8, 8, generator=torch.Generator().manual_seed(0))
        ref = torch.rand(1, 1, 16, 16, generator=torch.Generator().manual_seed(1))
        with torch.no_grad():
            fused, tar_up, _ = model.prepare(tar, ref, task)
            base = model.decoder_base(task, 1)
            out = model.decode_branch(fused, tar_up, base, "tar")
            q = (5, 11)
            poked = [f.clone() for f in fused]
            for f in poked:
                f[0, :, q[0], q[1]] += 0.25
            out2 = model.decode_branch(poked, tar_up, base, "tar")
        changed = (out != out2)[0, 0]
        assert changed[q]
        changed[q] = False
        assert not changed.any()  # every other pixel is bit-identical

    def test_skip_perturbation_stays_local(self, tiny_model):
        task = make_task(16, 8, 16)
        tar = torch.rand(1, 1, 8, 8)
        ref = torch.rand(1, 1, 16, 16)
        with torch.no_grad():
            fused, tar_up, _ = tiny_model.prepare(tar, ref, task)
            base = tiny_model.decoder_base(task, 1)
            out = tiny_model.decode_branch(fused, tar_up, base, "tar")
            poked = tar_up.clone()
            poked[0, :, 3, 4] -= 0.5
            out2 = tiny_model.decode_branch(fused, poked, base, "tar")
        changed = (out != out2)[0, 0]
        assert changed[3, 4]
        changed[3, 4] = False
        assert not changed.any()

    def test_roi_crop_bit_exact(self, tiny_model):
        task = make_task(24, 12, 24)
        tar = torch.rand(1, 1, 12, 12)
        ref = torch.rand(1, 1, 24, 24)
        with torch.no_grad():
            full = tiny_model(tar, ref, task)
            win = tiny_model(tar, ref, task, roi=(5, 17, 2, 9))
        assert torch.equal(win, full[:, :, 5:17, 2:9])


class TestDeterminism:
    def test_forward_reproducible(self, tiny_model):
        task = make_task(24, 12, 24)
        tar = torch.rand(1, 1, 12, 12)
        ref = torch.rand(1, 1, 24, 24)
        with torch.no_grad():
            a = tiny_model(tar, ref, task)
            b = tiny_model(tar, ref, task)
        assert torch.equal(a, b)

    def test_parameter_array_round_trip(self, tiny_config):
        src = DualArbNet(tiny_config)
        dst = DualArbNet(ModelConfig(num_blocks=2, convs_per_block=2,
                                     growth=8, base_channels=4, seed=31))
        load_parameter_arrays(dst, named_parameter_arrays(src))
        for (na, pa), (nb, pb) in zip(src.named_parameters(), dst.named_parameters()):
            assert na == nb and torch.equal(pa, pb)

    def test_load_rejects_bad_names_and_shapes(self, tiny_config):
        model = DualArbNet(tiny_config)
        arrays = named_parameter_arrays(model)
        bad = dict(arrays)
        bad.pop(sorted(bad)[0])
        with pytest.raises(ValueError):
            load_parameter_arrays(model, bad)
        bad = dict(arrays)
        k = sorted(bad)[0]
        bad[k] = np.zeros((1, 2, 3))
        with pytest.raises(ValueError):
            load_parameter_arrays(model, bad)


class TestDecoderBase:
    def test_channel_layout(self, tiny_model):
        task = make_task(32, 16, 24, "custom")
        base = tiny_model.decoder_base(task, 2)
        assert base.shape == (2, 4, 32, 32)
        assert torch.all(base[:, 0] == task.s_tar)
        assert torch.all(base[:, 1] == task.s_ref)
        assert float(base[:, 2:].abs().max()) <= 1.0

    def test_scale_channels_track_task(self, tiny_model):
        b2 = tiny_model.decoder_base(make_task(32, 16, 32), 1)
        b4 = tiny_model.decoder_base(make_task(32, 8, 32), 1)
        assert float(b2[0, 0, 0, 0]) == 2.0
        assert float(b4[0, 0, 0, 0]) == 4.0

    def test_no_reference_uses_target_scale(self):
        model = DualArbNet(ModelConfig(num_blocks=2, convs_per_block=2, growth=8,
                                       base_channels=4, use_reference=False))
        base = model.decoder_base(make_task(32, 16, 32), 1)
        assert torch.all(base[:, 1] == 2.0)  # s_ref falls back to s_tar

    def test_ref_coord_variant_appends_channels(self):
        model = DualArbNet(ModelConfig(num_blocks=2, convs_per_block=2, growth=8,
                                       base_channels=4, include_ref_coord=True))
        base = model.decoder_base(make_task(32, 16, 24, "custom"), 1)
        assert base.shape[1] == 6
        # ref coords differ from target coords since the grids differ
        assert not torch.equal(base[:, 2:4], base[:, 4:6])


class TestFusionBypass:
    def test_bypass_returns_input_unchanged(self):
        model = DualArbNet(ModelConfig(num_blocks=2, convs_per_block=2, growth=8,
                                       base_channels=4, fusion_bypass=True))
        f0 = torch.rand(1, model.config.fusion_channels, 6, 6)
        maps = model.fusion(f0)
        assert len(maps) == 5
        assert all(torch.equal(m, f0) for m in maps)
