import numpy as np
import pytest

from fedgasim import data, engine, nn
from fedgasim.engine import Method, RoundConfig
from fedgasim.errors import ConfigError, DimensionError, NumericError


def models_equal(a, b):
    return (
        a.layer_dims == b.layer_dims
        and all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
        and all(np.array_equal(x, y) for x, y in zip(a.biases, b.biases))
    )


@pytest.fixture(scope="module")
def blobs():
    train = data.gen_synthetic([80, 60, 90, 70], dim=6, spread=0.25, seed=0)
    test = data.gen_synthetic([40, 40, 40, 40], dim=6, spread=0.25, seed=1)
    return train, test


def small_config(method=Method("fedavg"), **kw):
    defaults = dict(
        num_clients=4,
        active_per_round=2,
        rounds=3,
        lr=0.1,
        method=method,
        local_epochs=2,
        batch_size=16,
        momentum=0.9,
        hidden_dims=(12,),
        eval_every=1,
        ea_every=2,
    )
    defaults.update(kw)
    return RoundConfig(**defaults)


class TestSelectClients:
    def test_select_all_when_k_equals_p(self):
        rng = np.random.default_rng(0)
        assert engine.select_clients(5, 5, rng) == [0, 1, 2, 3, 4]

    def test_deterministic_per_stream(self):
        a = engine.select_clients(100, 10, np.random.default_rng([7, 1, 3]))
        b = engine.select_clients(100, 10, np.random.default_rng([7, 1, 3]))
        assert a == b

    def test_excludes_ineligible(self):
        rng = np.random.default_rng(1)
        picked = engine.select_clients(10, 3, rng, eligible=[0, 2, 4, 6, 8])
        assert all(c % 2 == 0 for c in picked)

    def test_too_few_eligible(self):
        with pytest.raises(ConfigError):
            engine.select_clients(10, 4, np.random.default_rng(0), eligible=[1, 2])

    def test_selection_frequencies_uniform(self):
        # chi^2 over 10^4 rounds of 10-of-100 draws; each client expected
        # 1000 selections. Critical value chi2(df=99, 0.999) ~= 148.2.
        counts = np.zeros(100)
        for t in range(10_000):
            for c in engine.select_clients(100, 10, np.random.default_rng([0, 1, t])):
                counts[c] += 1
        expected = 10_000 * 10 / 100
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        assert chi2 < 148.2


class TestClientUpdate:
    def test_zero_lr_returns_global_model(self, blobs):
        train, _ = blobs
        model = nn.init_params([6, 12, 4], seed=0)
        counts = np.bincount(train.labels, minlength=4)
        res = engine.client_update(
            model,
            train.features,
            train.labels,
            counts,
            small_config(lr=0.0),
            np.random.default_rng(0),
        )
        assert models_equal(res.model, model)
        assert res.n_samples == len(train)

    def test_balanced_data_fedga_is_bitwise_fedavg(self, blobs):
        _, test = blobs  # balanced 40 per class
        model = nn.init_params([6, 12, 4], seed=1)
        counts = np.bincount(test.labels, minlength=4)
        res_avg = engine.client_update(
            model, test.features, test.labels, counts,
            small_config(Method("fedavg")), np.random.default_rng([0, 2, 1, 0]),
        )
        res_ga = engine.client_update(
            model, test.features, test.labels, counts,
            small_config(Method("fedga")), np.random.default_rng([0, 2, 1, 0]),
        )
        assert models_equal(res_avg.model, res_ga.model)

    def test_single_class_client_leaves_absent_logit_columns_untouched(self, blobs):
        # With only class 2 present, GA deltas for the other classes are zero
        # for every sample, so the output layer's columns for those classes
        # receive exactly zero gradient.
        train, _ = blobs
        rows = np.flatnonzero(train.labels == 2)
        model = nn.init_params([6, 12, 4], seed=2)
        counts = np.zeros(4, dtype=np.int64)
        counts[2] = len(rows)
        res = engine.client_update(
            model, train.features[rows], train.labels[rows], counts,
            small_config(Method("fedga")), np.random.default_rng(3),
        )
        out_w_before = model.weights[-1]
        out_w_after = res.model.weights[-1]
        for k in (0, 1, 3):
            assert np.array_equal(out_w_after[:, k], out_w_before[:, k])
            assert res.model.biases[-1][k] == model.biases[-1][k]
        assert not np.array_equal(out_w_after[:, 2], out_w_before[:, 2])
        # hidden layer still moves (shared by all logits)
        assert not np.array_equal(res.model.weights[0], model.weights[0])

    def test_numeric_error_carries_context(self, blobs):
        train, _ = blobs
        model = nn.init_params([6, 12, 4], seed=0)
        model.weights[0][:] = np.inf
        counts = np.bincount(train.labels, minlength=4)
        with np.errstate(invalid="ignore"):
            with pytest.raises(NumericError, match=r"client 7, epoch 0, batch at sample 0"):
                engine.client_update(
                    model, train.features, train.labels, counts,
                    small_config(), np.random.default_rng(0), client_id=7,
                )

    def test_ea_samples_collected_per_epoch(self, blobs):
        train, _ = blobs
        model = nn.init_params([6, 12, 4], seed=0)
        counts = np.bincount(train.labels, minlength=4)
        res = engine.client_update(
            model, train.features, train.labels, counts,
            small_config(local_epochs=3), np.random.default_rng(0), collect_ea=True,
        )
        assert len(res.ea_ratio_samples) == 3
        assert res.ea_ratio() is not None


class TestAggregate:
    def make_result(self, cid, n, w):
        model = nn.MlpModel([1, 1], [np.array([[float(w)]])], [np.zeros(1)])
        return engine.ClientUpdateResult(client_id=cid, model=model, n_samples=n)

    def test_identical_models_unchanged(self):
        results = [self.make_result(i, 5, 1.5) for i in range(3)]
        agg = engine.aggregate(results)
        assert agg.weights[0][0, 0] == pytest.approx(1.5, abs=1e-15)

    def test_equal_sizes_midpoint(self):
        agg = engine.aggregate([self.make_result(0, 7, 0.0), self.make_result(1, 7, 2.0)])
        assert agg.weights[0][0, 0] == 1.0

    def test_weighted_mean(self):
        agg = engine.aggregate([self.make_result(0, 1, 0.0), self.make_result(1, 3, 4.0)])
        assert agg.weights[0][0, 0] == pytest.approx(3.0, abs=1e-15)

    def test_permutation_invariant_bitwise(self):
        a = [self.make_result(0, 2, 0.3), self.make_result(1, 5, -1.2), self.make_result(2, 1, 7.0)]
        b = [a[2], a[0], a[1]]
        assert models_equal(engine.aggregate(a), engine.aggregate(b))

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            engine.aggregate([])

    def test_shape_mismatch(self):
        bad = engine.ClientUpdateResult(
            client_id=1,
            model=nn.MlpModel([1, 2], [np.zeros((1, 2))], [np.zeros(2)]),
            n_samples=3,
        )
        with pytest.raises(DimensionError):
            engine.aggregate([self.make_result(0, 2, 0.0), bad])


def full_partition(train, num_clients, seed=0):
    return data.dirichlet_partition(
        train, data.DirichletSpec(alpha=1.0, num_clients=num_clients, seed=seed)
    )


class TestRunExperiment:
    def test_zero_rounds_evaluates_initial_model_only(self, blobs):
        train, test = blobs
        config = small_config(rounds=0)
        result = engine.run_experiment(config, train, test, full_partition(train, 4), seed=0)
        assert len(result.records) == 1
        assert result.records[0].round == 0

    def test_deterministic_across_repeats(self, blobs):
        train, test = blobs
        config = small_config(rounds=2)
        part = full_partition(train, 4)
        a = engine.run_experiment(config, train, test, part, seed=5)
        b = engine.run_experiment(config, train, test, part, seed=5)
        assert models_equal(a.final_model, b.final_model)
        assert len(a.records) == len(b.records)
        for ra, rb in zip(a.records, b.records):
            assert ra.round == rb.round
            assert ra.accuracy == rb.accuracy
            assert ra.macro_f1 == rb.macro_f1
            assert ra.mean_ea_ratio == rb.mean_ea_ratio
            assert np.array_equal(
                ra.class_accuracy, rb.class_accuracy, equal_nan=True
            )
        assert np.array_equal(a.final_predictions, b.final_predictions)

    def test_fedprox_zero_mu_is_bitwise_fedavg(self, blobs):
        train, test = blobs
        part = full_partition(train, 4)
        a = engine.run_experiment(small_config(Method("fedavg"), rounds=2), train, test, part, seed=1)
        b = engine.run_experiment(
            small_config(Method("fedprox", mu=0.0), rounds=2), train, test, part, seed=1
        )
        assert models_equal(a.final_model, b.final_model)

    def test_fedga_on_balanced_partition_is_bitwise_fedavg(self, blobs):
        _, test = blobs
        # hand-build a balanced partition: each client gets 10 of each class
        labels = test.labels
        per_class = [np.flatnonzero(labels == k) for k in range(4)]
        client_indices = [
            np.sort(np.concatenate([rows[10 * c : 10 * (c + 1)] for rows in per_class]))
            for c in range(4)
        ]
        part = data.PartitionPlan(client_indices=client_indices)
        a = engine.run_experiment(small_config(Method("fedavg"), rounds=2), test, test, part, seed=2)
        b = engine.run_experiment(small_config(Method("fedga"), rounds=2), test, test, part, seed=2)
        assert models_equal(a.final_model, b.final_model)

    def test_single_client_matches_direct_loop(self, blobs):
        # K = P = 1: the engine is plain sequential mini-batch training with a
        # fresh optimizer per round (client state is never communicated).
        train, test = blobs
        config = small_config(
            num_clients=1, active_per_round=1, rounds=3, local_epochs=2, momentum=0.9
        )
        part = data.PartitionPlan(client_indices=[np.arange(len(train))])
        got = engine.run_experiment(config, train, test, part, seed=9)

        model = nn.init_params([6, 12, 4], seed=[9, 0])
        for t in range(1, 4):
            rng = np.random.default_rng([9, 2, t, 0])
            state = nn.init_optimizer("sgd", model, lr=0.1, momentum=0.9)
            for _ in range(2):
                order = rng.permutation(len(train))
                for start in range(0, len(train), 16):
                    idx = order[start : start + 16]
                    logits, trace = nn.forward(model, train.features[idx])
                    probs = nn.softmax(logits)
                    delta = probs.copy()
                    delta[np.arange(len(idx)), train.labels[idx]] -= 1.0
                    grads = nn.backward(model, trace, delta)
                    norm = float(
                        sum((g * g).sum() for g in grads.weights + grads.biases)
                    ) ** 0.5
                    if norm > 3.0:
                        for g in grads.weights + grads.biases:
                            g *= 3.0 / norm
                    nn.optimizer_step(model, grads, state)
        assert models_equal(got.final_model, model)

    def test_ea_rounds_recorded(self, blobs):
        train, test = blobs
        config = small_config(rounds=4, ea_every=2, eval_every=1)
        result = engine.run_experiment(config, train, test, full_partition(train, 4), seed=0)
        by_round = {r.round: r for r in result.records}
        assert by_round[2].mean_ea_ratio is not None
        assert by_round[4].mean_ea_ratio is not None
        assert by_round[1].mean_ea_ratio is None
        assert by_round[3].mean_ea_ratio is None

    def test_pre_post_collected_on_final_round(self, blobs):
        train, test = blobs
        config = small_config(rounds=2, instrument_pre_post=True)
        result = engine.run_experiment(config, train, test, full_partition(train, 4), seed=0)
        assert len(result.pre_post) == config.active_per_round
        for rec in result.pre_post:
            assert rec.pre.shape == (4,)
            assert rec.post.shape == (4,)
            assert rec.counts.sum() > 0

    def test_empty_clients_excluded(self):
        train = data.gen_synthetic([40, 40], dim=4, spread=0.1, seed=0)
        part = data.PartitionPlan(
            client_indices=[np.arange(40), np.empty(0, dtype=np.int64), np.arange(40, 80)]
        )
        config = small_config(
            num_clients=3, active_per_round=2, rounds=1, hidden_dims=(8,)
        )
        result = engine.run_experiment(config, train, train, part, seed=0)
        assert result.empty_clients == [1]
        config_too_many = small_config(
            num_clients=3, active_per_round=3, rounds=1, hidden_dims=(8,)
        )
        with pytest.raises(ConfigError, match="non-empty"):
            engine.run_experiment(config_too_many, train, train, part, seed=0)

    def test_partition_size_mismatch(self, blobs):
        train, test = blobs
        with pytest.raises(ConfigError):
            engine.run_experiment(
                small_config(), train, test, full_partition(train, 5), seed=0
            )
