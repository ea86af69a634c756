import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from hemoct.errors import ShapeError, UndefinedAUCError
from hemoct.losses_metrics import (
    class_weights,
    dice_loss,
    iou_fscore,
    roc_auc,
    read_eval_report,
    weighted_bce,
    write_eval_report,
)


class TestClassWeights:
    def test_imbalanced(self):
        y = np.zeros((100, 1), dtype=int)
        y[:10, 0] = 1
        assert class_weights(y)[0] == 9.0

    def test_balanced(self):
        y = np.zeros((100, 1), dtype=int)
        y[:50, 0] = 1
        assert class_weights(y)[0] == 1.0

    def test_zero_positives_capped_with_warning(self):
        y = np.zeros((40, 2), dtype=int)
        y[:20, 0] = 1
        with pytest.warns(UserWarning, match="class 1"):
            w = class_weights(y)
        assert w[1] == 40.0
        # recount oracle
        assert w[1] == (y[:, 1] == 0).sum()

    def test_rejects_non_binary(self):
        with pytest.raises(ShapeError):
            class_weights(np.array([[2, 0]]))


class TestWeightedBCE:
    def test_perfect_positive_near_zero(self):
        loss = weighted_bce(torch.tensor([[1.0 - 1e-7]]), torch.tensor([[1.0]]), torch.tensor([5.0]))
        assert float(loss) < 1e-5

    def test_half_probability_unweighted(self):
        loss = weighted_bce(torch.tensor([[0.5]]), torch.tensor([[1.0]]), torch.tensor([1.0]))
        assert float(loss) == pytest.approx(0.693147, abs=1e-5)

    def test_half_probability_weight_nine(self):
        loss = weighted_bce(torch.tensor([[0.5]]), torch.tensor([[1.0]]), torch.tensor([9.0]))
        # independent scalar evaluation: 9 * (-log 0.5)
        assert float(loss) == pytest.approx(9 * -math.log(0.5), abs=1e-5)
        assert float(loss) == pytest.approx(6.238325, abs=1e-5)

    def test_unit_weights_equal_plain_bce(self):
        rng = np.random.default_rng(0)
        x = torch.tensor(rng.uniform(0.05, 0.95, size=(16, 4)))
        y = torch.tensor(rng.integers(0, 2, size=(16, 4)).astype(np.float64))
        ours = weighted_bce(x, y, torch.ones(4))
        plain = torch.nn.functional.binary_cross_entropy(x, y)
        assert abs(float(ours) - float(plain)) < 1e-9

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        x = torch.tensor(rng.uniform(0.1, 0.9, size=(4, 3)), requires_grad=True)
        y = torch.tensor(rng.integers(0, 2, size=(4, 3)).astype(np.float64))
        w = torch.tensor(rng.uniform(0.5, 5.0, size=3))
        weighted_bce(x, y, w).backward()
        step = 1e-6
        for i in range(4):
            for j in range(3):
                xp = x.detach().clone()
                xp[i, j] += step
                xm = x.detach().clone()
                xm[i, j] -= step
                fd = (float(weighted_bce(xp, y, w)) - float(weighted_bce(xm, y, w))) / (2 * step)
                a = float(x.grad[i, j])
                assert abs(a - fd) / max(abs(a), abs(fd), 1e-8) < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            weighted_bce(torch.zeros(2, 3), torch.zeros(2, 2), torch.ones(3))
        with pytest.raises(ShapeError):
            weighted_bce(torch.zeros(2, 3), torch.zeros(2, 3), torch.ones(2))


class TestDiceLoss:
    def test_perfect_overlap(self):
        m = torch.zeros(10, 10)
        m[:2, :5] = 1.0
        assert float(dice_loss(m, m)) < 0.05

    def test_disjoint_two_pixel_sets(self):
        p = torch.zeros(10, 10)
        t = torch.zeros(10, 10)
        p[0, 0] = p[0, 1] = 1.0
        t[5, 5] = t[5, 6] = 1.0
        assert float(dice_loss(p, t, smooth=1.0)) == pytest.approx(0.8)
        assert float(dice_loss(p, t, smooth=1e-12)) == pytest.approx(1.0)

    def test_partial_overlap_smooth_to_zero(self):
        p = torch.zeros(8, 8)
        t = torch.zeros(8, 8)
        p[0, 0] = p[0, 1] = 1.0
        t[0, 1] = t[0, 2] = 1.0
        assert float(dice_loss(p, t, smooth=1e-12)) == pytest.approx(0.5)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            dice_loss(torch.zeros(4, 4), torch.zeros(4, 5))


class TestIoUFscore:
    def test_identical(self):
        m = np.zeros((8, 8))
        m[2:4, 2:4] = 1
        assert iou_fscore(m, m) == (1.0, 1.0)

    def test_disjoint(self):
        p = np.zeros((8, 8))
        t = np.zeros((8, 8))
        p[0, 0] = 1
        t[7, 7] = 1
        assert iou_fscore(p, t) == (0.0, 0.0)

    def test_partial(self):
        p = np.zeros((8, 8))
        t = np.zeros((8, 8))
        p[0, 0] = p[0, 1] = 1
        t[0, 1] = t[0, 2] = 1
        iou, fs = iou_fscore(p, t)
        assert iou == pytest.approx(1 / 3)
        assert fs == pytest.approx(0.5)

    def test_empty_convention(self):
        z = np.zeros((4, 4))
        assert iou_fscore(z, z) == (1.0, 1.0)

    def test_random_masks_match_set_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            p = rng.random((12, 12))
            t = (rng.random((12, 12)) < 0.3).astype(int)
            iou, fs = iou_fscore(p, t)
            ps = {tuple(ix) for ix in np.argwhere(p >= 0.5)}
            ts = {tuple(ix) for ix in np.argwhere(t > 0)}
            if ps | ts:
                assert iou == len(ps & ts) / len(ps | ts)
                assert fs == 2 * len(ps & ts) / (len(ps) + len(ts))

    def test_fscore_equals_one_minus_dice_on_binary(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            p = (rng.random((10, 10)) < 0.4).astype(float)
            t = (rng.random((10, 10)) < 0.4).astype(float)
            if p.sum() + t.sum() == 0:
                continue
            _, fs = iou_fscore(p, t)
            d = float(dice_loss(torch.tensor(p), torch.tensor(t), smooth=1e-12))
            assert abs(fs - (1 - d)) < 1e-9


def brute_force_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    wins = sum(1.0 for p in pos for n in neg if p > n)
    ties = sum(1.0 for p in pos for n in neg if p == n)
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


class TestRocAuc:
    def test_perfect_separation(self):
        assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_all_ties(self):
        assert roc_auc([0.5] * 10, [0, 1] * 5) == 0.5

    def test_hand_case(self):
        assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75

    def test_single_class_raises(self):
        with pytest.raises(UndefinedAUCError):
            roc_auc([0.1, 0.2], [1, 1])

    def test_matches_brute_force(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            n = int(rng.integers(5, 200))
            scores = np.round(rng.random(n), 2)  # rounding forces ties
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                continue
            assert roc_auc(scores, labels) == brute_force_auc(scores, labels)

    @given(
        st.lists(st.integers(-1000, 1000), min_size=4, max_size=40),
        st.integers(1, 7),
        st.integers(-50, 50),
    )
    @settings(max_examples=50, deadline=None)
    def test_invariant_under_increasing_transform(self, scores, scale, shift):
        # integer inputs keep the monotone map exact, so ties are preserved
        labels = [i % 2 for i in range(len(scores))]
        for transformed in (
            [scale * s + shift for s in scores],
            [float(np.tanh(s / 1000.0)) for s in scores],
        ):
            assert roc_auc(scores, labels) == pytest.approx(
                roc_auc(transformed, labels), abs=1e-12
            )


def test_eval_report_round_trip(tmp_path):
    rows = [("auc", "hypodensity", 0.75), ("auc", "irregular", 0.5)]
    path = str(tmp_path / "eval.report")
    json_path = write_eval_report(path, rows)
    back = read_eval_report(path)
    assert [(n, c) for n, c, _ in back] == [(n, c) for n, c, _ in rows]
    assert all(abs(a[2] - b[2]) < 1e-6 for a, b in zip(rows, back))
    import json

    with open(json_path) as f:
        summary = json.load(f)
    assert summary["auc"]["hypodensity"] == pytest.approx(0.75)
