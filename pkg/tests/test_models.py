import pytest
import torch

from fd_check import sample_parameter_gradients
from hemoct.errors import ConfigError, DataError, ShapeError
from hemoct.losses_metrics import dice_loss, weighted_bce
from hemoct.models import (
    ClsModelConfig,
    SegModelConfig,
    build_classifier,
    build_segmenter,
    cls_forward,
    encoder_features,
    load_checkpoint,
    save_checkpoint,
    seg_forward,
)

DESK_SEG = SegModelConfig(encoder_widths=(4, 4, 8))
DESK_CLS = ClsModelConfig(
    block_widths=(4, 8), pooling_mode="wavelet_ll", fuse_encoder_features=False
)


def test_config_validation():
    with pytest.raises(ConfigError):
        SegModelConfig(encoder_widths=(4, 8))
    with pytest.raises(ConfigError):
        ClsModelConfig(pooling_mode="avg_pool")
    with pytest.raises(ConfigError):
        ClsModelConfig(num_classes=0)


class TestSegmenter:
    def test_shape_and_range(self):
        torch.manual_seed(0)
        model = build_segmenter()
        model.eval()
        out = seg_forward(model, torch.randn(2, 1, 128, 128))
        assert out.shape == (2, 1, 128, 128)
        assert out.min() > 0.0 and out.max() < 1.0

    def test_batch_independence(self):
        torch.manual_seed(0)
        model = build_segmenter(DESK_SEG)
        model.eval()
        x = torch.randn(1, 1, 32, 32)
        batch = torch.cat([x, x], dim=0)
        with torch.no_grad():
            out = seg_forward(model, batch)
        assert torch.equal(out[0], out[1])

    def test_run_twice_determinism(self):
        torch.manual_seed(7)
        model = build_segmenter(DESK_SEG)
        model.eval()
        x = torch.randn(2, 1, 32, 32)
        with torch.no_grad():
            a = seg_forward(model, x)
            b = seg_forward(model, x)
        assert torch.equal(a, b)

    def test_indivisible_shape_rejected(self):
        model = build_segmenter()
        with pytest.raises(ShapeError):
            model(torch.randn(1, 1, 100, 100))

    def test_encoder_feature_shape(self):
        torch.manual_seed(0)
        model = build_segmenter(SegModelConfig(encoder_widths=(16, 32, 64, 128)))
        model.eval()
        with torch.no_grad():
            feats = encoder_features(model, torch.randn(3, 1, 128, 128))
        assert feats.shape == (3, 128, 16, 16)

    def test_zero_input_finite_features(self):
        torch.manual_seed(0)
        model = build_segmenter(DESK_SEG)
        model.eval()
        with torch.no_grad():
            feats = encoder_features(model, torch.zeros(1, 1, 32, 32))
        assert torch.isfinite(feats).all()


class TestClassifier:
    def test_output_contract(self):
        torch.manual_seed(0)
        model = build_classifier(DESK_CLS)
        model.eval()
        out = cls_forward(model, torch.randn(4, 1, 16, 16))
        assert out.shape == (4, 4)
        assert out.min() > 0.0 and out.max() < 1.0
        # rows are independent sigmoids, no sum-to-one constraint
        assert not torch.allclose(out.sum(dim=1), torch.ones(4))

    def test_pooling_modes_share_shape(self):
        for mode in ("max_pool", "wavelet_ll", "wavelet_multiresolution"):
            torch.manual_seed(1)
            cfg = ClsModelConfig(block_widths=(4, 8), pooling_mode=mode, fuse_encoder_features=False)
            model = build_classifier(cfg)
            model.eval()
            assert cls_forward(model, torch.randn(2, 1, 16, 16)).shape == (2, 4)

    def test_pooling_sites_halve_spatial_dims(self):
        cfg = ClsModelConfig(block_widths=(4, 8, 8), fuse_encoder_features=False)
        model = build_classifier(cfg)
        model.eval()
        sizes = []
        hooks = [
            b.register_forward_hook(lambda m, i, o: sizes.append(tuple(o.shape[-2:])))
            for b in model.blocks
        ]
        model(torch.randn(1, 1, 32, 32))
        for h in hooks:
            h.remove()
        assert len(sizes) == 3
        assert sizes == [(32, 32), (16, 16), (8, 8)]  # block outputs, pooled afterwards

    def test_fusion_changes_head_width_by_encoder_width(self):
        fused = build_classifier(ClsModelConfig(block_widths=(4, 8), encoder_feature_channels=32))
        plain = build_classifier(
            ClsModelConfig(block_widths=(4, 8), fuse_encoder_features=False)
        )
        assert fused.fc.in_features - plain.fc.in_features == 32

    def test_fusion_requires_features(self):
        model = build_classifier(ClsModelConfig(block_widths=(4, 8), encoder_feature_channels=8))
        with pytest.raises(ConfigError):
            model(torch.randn(1, 1, 16, 16))

    def test_fused_forward(self):
        torch.manual_seed(2)
        seg = build_segmenter(DESK_SEG)
        seg.eval()
        cfg = ClsModelConfig(block_widths=(4, 8), encoder_feature_channels=8)
        model = build_classifier(cfg)
        model.eval()
        x = torch.randn(2, 1, 16, 16)
        with torch.no_grad():
            feats = encoder_features(seg, x)
            out = cls_forward(model, x, feats)
        assert out.shape == (2, 4)


class TestGradients:
    def test_segmenter_gradcheck(self):
        torch.manual_seed(3)
        model = build_segmenter(DESK_SEG).double()
        model.eval()
        x = torch.randn(2, 1, 16, 16, dtype=torch.float64)
        target = (torch.rand(2, 16, 16, dtype=torch.float64) < 0.3).double()

        def loss_fn():
            return dice_loss(seg_forward(model, x)[:, 0], target)

        results = sample_parameter_gradients(model, loss_fn, n_samples=40, seed=0)
        assert max(r for _, _, r in results) < 1e-3

    @pytest.mark.parametrize("mode", ["max_pool", "wavelet_ll", "wavelet_multiresolution"])
    def test_classifier_gradcheck(self, mode):
        torch.manual_seed(4)
        seg = build_segmenter(DESK_SEG).double()
        seg.eval()
        cfg = ClsModelConfig(block_widths=(4, 8), pooling_mode=mode, encoder_feature_channels=8)
        model = build_classifier(cfg).double()
        model.eval()
        x = torch.randn(3, 1, 16, 16, dtype=torch.float64)
        y = (torch.rand(3, 4) < 0.5).double()
        w = torch.tensor([1.0, 3.0, 0.5, 2.0], dtype=torch.float64)
        with torch.no_grad():
            feats = encoder_features(seg, x)

        def loss_fn():
            return weighted_bce(cls_forward(model, x, feats), y, w)

        results = sample_parameter_gradients(model, loss_fn, n_samples=40, seed=1)
        assert max(r for _, _, r in results) < 1e-3


class TestOverfitSanity:
    def test_segmenter_overfits_single_batch(self):
        torch.manual_seed(5)
        model = build_segmenter(DESK_SEG)
        x = torch.randn(4, 1, 16, 16)
        target = (torch.rand(4, 16, 16) < 0.3).float()
        opt = torch.optim.Adam(model.parameters(), lr=1e-2)
        model.train()
        for _ in range(500):
            opt.zero_grad()
            loss = dice_loss(seg_forward(model, x)[:, 0], target)
            loss.backward()
            opt.step()
            if float(loss.detach()) < 0.05:
                break
        assert float(loss.detach()) < 0.05

    def test_classifier_overfits_single_batch(self):
        torch.manual_seed(6)
        model = build_classifier(DESK_CLS)
        x = torch.randn(8, 1, 16, 16)
        y = (torch.rand(8, 4) < 0.5).float()
        w = torch.ones(4)
        opt = torch.optim.Adam(model.parameters(), lr=1e-2)
        model.train()
        for _ in range(500):
            opt.zero_grad()
            loss = weighted_bce(cls_forward(model, x), y, w)
            loss.backward()
            opt.step()
            if float(loss.detach()) < 0.05:
                break
        assert float(loss.detach()) < 0.05


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        torch.manual_seed(8)
        model = build_segmenter(DESK_SEG)
        model.eval()
        path = str(tmp_path / "seg.ckpt")
        save_checkpoint(path, "segmenter", model)
        back, kind = load_checkpoint(path)
        assert kind == "segmenter"
        assert back.cfg == model.cfg
        x = torch.randn(1, 1, 32, 32)
        with torch.no_grad():
            assert torch.equal(seg_forward(model, x), seg_forward(back, x))

    def test_save_is_deterministic(self, tmp_path):
        torch.manual_seed(9)
        model = build_classifier(DESK_CLS)
        p1, p2 = str(tmp_path / "a.ckpt"), str(tmp_path / "b.ckpt")
        save_checkpoint(p1, "classifier", model)
        save_checkpoint(p2, "classifier", model)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_corrupt_header_fails_closed(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(DataError):
            load_checkpoint(str(path))

    def test_shape_mismatch_fails_closed(self, tmp_path):
        torch.manual_seed(10)
        model = build_segmenter(DESK_SEG)
        path = str(tmp_path / "seg.ckpt")
        save_checkpoint(path, "segmenter", model)
        raw = open(path, "rb").read()
        tampered = raw.replace(b'"shape": [4, 1, 3, 3]', b'"shape": [4, 2, 3, 3]', 1)
        assert tampered != raw
        bad = tmp_path / "tampered.ckpt"
        bad.write_bytes(tampered)
        with pytest.raises(DataError):
            load_checkpoint(str(bad))

    def test_truncated_data_fails_closed(self, tmp_path):
        torch.manual_seed(11)
        model = build_segmenter(DESK_SEG)
        path = str(tmp_path / "seg.ckpt")
        save_checkpoint(path, "segmenter", model)
        raw = open(path, "rb").read()
        bad = tmp_path / "short.ckpt"
        bad.write_bytes(raw[:-10])
        with pytest.raises(DataError):
            load_checkpoint(str(bad))
