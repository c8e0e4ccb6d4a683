import math

import numpy as np
import pytest
import torch

from zsdkit.dataio import Box, FeatureSet, SplitSpec
from zsdkit.errors import ValidationError
from zsdkit.head import (
    ClassifierHead,
    argmax_labels,
    assemble_head,
    classify,
    fit_calibration,
    init_head,
    load_head,
    save_head,
    train_classifier,
)


def _head(class_ids, W, b):
    return ClassifierHead(class_ids, torch.as_tensor(W, dtype=torch.float64),
                          torch.as_tensor(b, dtype=torch.float64))


def _cluster_set(rng, centers, labels, n, spread=0.1):
    records = []
    for i in range(n):
        k = i % len(centers)
        feat = np.asarray(centers[k]) + spread * rng.standard_normal(len(centers[k]))
        records.append((f"im{i}", Box(0, 0, 1, 1), labels[k], feat))
    return FeatureSet.from_records(len(centers[0]), records)


class TestClassify:
    def test_zero_head_uniform(self):
        head = _head([0, 1, 2, 3], np.zeros((4, 5)), np.zeros(4))
        probs = classify(head, np.random.default_rng(0).standard_normal(5))
        assert np.allclose(probs, 0.25, atol=1e-15)

    def test_logit_shift_invariance(self):
        rng = np.random.default_rng(1)
        W, b = rng.standard_normal((3, 4)), rng.standard_normal(3)
        f = rng.standard_normal(4)
        base = classify(_head([0, 1, 2], W, b), f)
        shifted = classify(_head([0, 1, 2], W, b + 7.5), f)
        assert np.abs(base - shifted).max() < 1e-12

    def test_hand_two_class(self):
        # Logits (1, 0) -> (e/(e+1), 1/(e+1)).
        head = _head([0, 1], np.array([[1.0], [0.0]]), np.zeros(2))
        probs = classify(head, np.array([1.0]))
        assert probs[0] == pytest.approx(math.e / (math.e + 1), abs=1e-12)
        assert probs[1] == pytest.approx(1 / (math.e + 1), abs=1e-12)

    def test_valid_distribution(self):
        rng = np.random.default_rng(2)
        head = _head([0, 1, 2], rng.standard_normal((3, 4)) * 30, rng.standard_normal(3))
        probs = classify(head, rng.standard_normal((50, 4)) * 10)
        assert (probs >= 0).all()
        assert np.abs(probs.sum(axis=1) - 1.0).max() < 1e-9

    def test_dim_mismatch(self):
        head = _head([0, 1], np.zeros((2, 3)), np.zeros(2))
        with pytest.raises(ValidationError):
            classify(head, np.zeros(4))


class TestTrainClassifier:
    def test_separable_clusters_reach_full_accuracy(self):
        rng = np.random.default_rng(3)
        fs = _cluster_set(rng, [(-2.0, 0.0), (2.0, 0.0)], [0, 1], n=60)
        head = train_classifier(fs, [0, 1], epochs=120, lr=0.05, seed=0)
        pred = argmax_labels(head, fs.features)
        assert (pred == fs.labels).mean() == 1.0

    def test_epochs_zero_is_init(self):
        rng = np.random.default_rng(4)
        fs = _cluster_set(rng, [(-2.0, 0.0), (2.0, 0.0)], [0, 1], n=20)
        head = train_classifier(fs, [0, 1], epochs=0, lr=0.05, seed=9)
        ref = init_head([0, 1], 2, seed=9)
        assert torch.equal(head.W, ref.W) and torch.equal(head.b, ref.b)

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        fs = _cluster_set(rng, [(-2.0, 0.0), (2.0, 0.0)], [0, 1], n=30)
        a = train_classifier(fs, [0, 1], epochs=10, lr=0.05, seed=2)
        b = train_classifier(fs, [0, 1], epochs=10, lr=0.05, seed=2)
        assert torch.equal(a.W, b.W) and torch.equal(a.b, b.b)

    def test_label_outside_class_list(self):
        rng = np.random.default_rng(6)
        fs = _cluster_set(rng, [(0.0, 0.0)], [7], n=5)
        with pytest.raises(ValidationError):
            train_classifier(fs, [0, 1], epochs=1, lr=0.05, seed=0)

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            train_classifier(FeatureSet.empty(3), [0], epochs=1, lr=0.05, seed=0)


class TestAssemble:
    def _heads(self, n_seen=65, n_unseen=15, dim=7):
        rng = np.random.default_rng(7)
        seen_ids = list(range(n_seen)) + [1000]  # background last
        seen = _head(seen_ids, rng.standard_normal((n_seen + 1, dim)), rng.standard_normal(n_seen + 1))
        unseen_ids = list(range(100, 100 + n_unseen))
        unseen = _head(unseen_ids, rng.standard_normal((n_unseen, dim)), rng.standard_normal(n_unseen))
        split = SplitSpec(tuple(range(n_seen)), tuple(unseen_ids), 1000)
        return seen, unseen, split

    def test_row_count_65_15(self):
        seen, unseen, split = self._heads()
        full = assemble_head(seen, unseen, split)
        assert len(full.class_ids) == 81
        assert full.class_ids[-1] == 1000

    def test_empty_unseen_head_preserves_seen(self):
        seen, _, split = self._heads()
        empty = ClassifierHead([], torch.zeros((0, 7), dtype=torch.float64),
                               torch.zeros(0, dtype=torch.float64))
        full = assemble_head(seen, empty, split)
        assert full.class_ids == list(split.seen_ids) + [1000]
        for cid in split.seen_ids:
            assert torch.equal(full.W[full.row(cid)], seen.W[seen.row(cid)])

    def test_argmax_over_seen_preserved_with_zero_offset(self):
        seen, unseen, split = self._heads(n_seen=6, n_unseen=3)
        full = assemble_head(seen, unseen, split, calibration=0.0)
        rng = np.random.default_rng(8)
        feats = rng.standard_normal((40, 7))
        seen_only = classify(seen, feats)[:, :6].argmax(axis=1)
        full_logits = torch.as_tensor(feats) @ full.W.T + full.b
        seen_cols = [full.row(c) for c in split.seen_ids]
        assert np.array_equal(
            full_logits[:, seen_cols].argmax(dim=1).numpy(), seen_only
        )

    def test_overlap_rejected(self):
        seen, unseen, split = self._heads(n_seen=6, n_unseen=3)
        with pytest.raises(ValidationError):
            assemble_head(seen, seen, split)

    def test_dim_mismatch_rejected(self):
        seen, unseen, split = self._heads(n_seen=6, n_unseen=3)
        bad = _head(unseen.class_ids, np.zeros((3, 9)), np.zeros(3))
        with pytest.raises(ValidationError):
            assemble_head(seen, bad, split)

    def test_calibration_shifts_unseen_only(self):
        seen, unseen, split = self._heads(n_seen=6, n_unseen=3)
        base = assemble_head(seen, unseen, split, calibration=0.0)
        cal = assemble_head(seen, unseen, split, calibration=2.5)
        assert torch.equal(base.W, cal.W)
        for cid in split.seen_ids:
            assert cal.b[cal.row(cid)] == base.b[base.row(cid)]
        for cid in unseen.class_ids:
            assert cal.b[cal.row(cid)] == base.b[base.row(cid)] + 2.5


class TestCalibration:
    def _biased_setup(self):
        # Seen logits systematically larger: uncalibrated argmax eats unseen.
        rng = np.random.default_rng(9)
        dim = 4
        seen = _head([0, 1, 99], rng.standard_normal((3, dim)), np.array([2.0, 2.0, 0.0]))
        unseen = _head([5, 6], rng.standard_normal((2, dim)), np.array([-2.0, -2.0]))
        split = SplitSpec((0, 1), (5, 6), 99)
        feats, labels = [], []
        for cid, head, row in ((0, seen, 0), (1, seen, 1), (5, unseen, 0), (6, unseen, 1)):
            center = (seen if cid in (0, 1) else unseen).W[row].numpy()
            for _ in range(40):
                feats.append(center + 0.05 * rng.standard_normal(dim))
                labels.append(cid)
        holdout = FeatureSet.from_records(
            dim, [(f"h{i}", Box(0, 0, 1, 1), labels[i], feats[i]) for i in range(len(feats))]
        )
        return seen, unseen, split, holdout

    def test_bias_reduced_after_fit(self):
        seen, unseen, split, holdout = self._biased_setup()
        unseen_feats = holdout.features[np.isin(holdout.labels, split.unseen_ids)]
        base = assemble_head(seen, unseen, split, calibration=0.0)
        pred_before = argmax_labels(base, unseen_feats, exclude=[split.background_id])
        frac_seen_before = float(np.isin(pred_before, split.seen_ids).mean())

        offset = fit_calibration(seen, unseen, split, holdout)
        cal = assemble_head(seen, unseen, split, calibration=offset)
        pred_after = argmax_labels(cal, unseen_feats, exclude=[split.background_id])
        frac_seen_after = float(np.isin(pred_after, split.seen_ids).mean())
        assert offset > 0
        assert frac_seen_before > frac_seen_after

    def test_calibration_deterministic(self):
        seen, unseen, split, holdout = self._biased_setup()
        assert fit_calibration(seen, unseen, split, holdout) == fit_calibration(
            seen, unseen, split, holdout
        )


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(10)
    head = _head([3, 1, 9], rng.standard_normal((3, 5)), rng.standard_normal(3))
    path = tmp_path / "head.json"
    save_head(head, path)
    loaded = load_head(path)
    assert loaded.class_ids == head.class_ids
    assert torch.equal(loaded.W, head.W) and torch.equal(loaded.b, head.b)
