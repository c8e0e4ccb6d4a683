import numpy as np
import pytest
import torch

from zsdkit.dataio import BenchSpec, FeatureSet, SemanticTable, generate_benchmark
from zsdkit.errors import ValidationError
from zsdkit.mapper import (
    Mapper,
    init_mapper,
    load_mapper,
    map_to_semantics,
    reconstruction_loss,
    save_mapper,
    train_mapper,
)

from oracles import autograd_params_grads, finite_difference_grads, gradient_relative_error


def _state_equal(a: Mapper, b: Mapper) -> bool:
    sa, sb = a.state_dict(), b.state_dict()
    return all(torch.equal(sa[k], sb[k]) for k in sa)


class TestForward:
    def test_zero_weights_zero_output(self):
        m = Mapper(4, 3, 6)
        with torch.no_grad():
            for p in m.parameters():
                p.zero_()
        out = map_to_semantics(m, np.ones(4))
        assert np.allclose(out, 0.0)

    def test_identity_construction_on_positive_vector(self):
        # h = D = d with identity weights and zero biases: ReLU passes a
        # positive vector straight through.
        d = 3
        m = Mapper(d, d, d)
        with torch.no_grad():
            m.fc1.weight.copy_(torch.eye(d, dtype=torch.float64))
            m.fc1.bias.zero_()
            m.fc2.weight.copy_(torch.eye(d, dtype=torch.float64))
            m.fc2.bias.zero_()
        v = np.array([0.5, 1.5, 2.0])
        assert np.allclose(map_to_semantics(m, v), v, atol=1e-15)

    def test_dimension_mismatch(self):
        m = Mapper(4, 3, 6)
        with pytest.raises(ValidationError):
            map_to_semantics(m, np.ones(5))

    def test_batch_forward(self):
        m = init_mapper(4, 3, 6, seed=0)
        batch = np.random.default_rng(0).standard_normal((7, 4))
        out = map_to_semantics(m, batch)
        assert out.shape == (7, 3)
        assert np.allclose(out[2], map_to_semantics(m, batch[2]))


def test_reconstruction_gradient_matches_finite_differences():
    torch.manual_seed(4)
    m = Mapper(5, 3, 7)
    rng = np.random.default_rng(5)
    feats = torch.as_tensor(rng.standard_normal((6, 5)))
    targets = torch.as_tensor(rng.standard_normal((6, 3)))

    def loss_fn():
        return reconstruction_loss(m, feats, targets)

    params = list(m.parameters())
    analytic = autograd_params_grads(loss_fn, params)
    numeric = finite_difference_grads(loss_fn, params)
    assert gradient_relative_error(analytic, numeric) < 1e-4


def _toy_training_data(seed=0):
    spec = BenchSpec(
        n_classes=8, n_unseen=2, d=4, D=12, images=60, objects_per_image=(2, 3),
        similar_pair_count=0, seed=seed,
    )
    table, split, train_seen, _, _ = generate_benchmark(spec)
    return table, split, train_seen


class TestTraining:
    def test_epochs_zero_returns_seeded_init(self):
        table, split, train = _toy_training_data()
        m = train_mapper(train, table, split, epochs=0, lr=0.01, seed=42, hidden=8)
        assert _state_equal(m, init_mapper(train.dim, table.dim, 8, seed=42))

    def test_loss_halves_on_benchmark(self):
        table, split, train = _toy_training_data()
        m0 = train_mapper(train, table, split, epochs=0, lr=0.001, seed=7, hidden=16)
        m = train_mapper(train, table, split, epochs=60, lr=0.001, seed=7, hidden=16)
        feats = torch.as_tensor(train.features)
        targets = torch.as_tensor(np.stack([table.vector(int(c)) for c in train.labels]))
        with torch.no_grad():
            before = float(reconstruction_loss(m0, feats, targets))
            after = float(reconstruction_loss(m, feats, targets))
        assert after < 0.5 * before

    def test_deterministic(self):
        table, split, train = _toy_training_data()
        a = train_mapper(train, table, split, epochs=5, lr=0.01, seed=3, hidden=8)
        b = train_mapper(train, table, split, epochs=5, lr=0.01, seed=3, hidden=8)
        assert _state_equal(a, b)

    def test_unseen_label_rejected(self):
        table, split, train = _toy_training_data()
        bad = FeatureSet(
            train.dim,
            train.image_ids[:1],
            train.boxes[:1],
            np.array([split.unseen_ids[0]]),
            train.features[:1],
        )
        with pytest.raises(ValidationError, match="unseen"):
            train_mapper(bad, table, split, epochs=1, lr=0.01, seed=0)

    def test_empty_train_rejected(self):
        table, split, _ = _toy_training_data()
        with pytest.raises(ValidationError):
            train_mapper(FeatureSet.empty(12), table, split, epochs=1, lr=0.01, seed=0)


def test_checkpoint_round_trip(tmp_path):
    table, split, train = _toy_training_data()
    m = train_mapper(train, table, split, epochs=3, lr=0.01, seed=1, hidden=8)
    path = tmp_path / "mapper.json"
    save_mapper(m, path)
    loaded = load_mapper(path)
    assert _state_equal(m, loaded)
    probe = np.random.default_rng(1).standard_normal(train.dim)
    assert np.array_equal(map_to_semantics(m, probe), map_to_semantics(loaded, probe))
