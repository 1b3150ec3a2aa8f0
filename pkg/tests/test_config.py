import json

import pytest

from fedgasim.config import (
    ExperimentConfig,
    config_to_dict,
    config_to_json,
    parse_config,
    parse_method,
)
from fedgasim.engine import Method
from fedgasim.errors import ConfigError


MINIMAL = {
    "dataset": "synthetic",
    "method": "fedavg",
    "num_clients": 4,
    "active_per_round": 2,
    "rounds": 3,
    "lr": 0.1,
    "alpha": 1.0,
    "output_dir": "runs/demo",
    "synthetic": {"per_class_counts": [50, 50], "dim": 4, "spread": 0.2},
}

MNIST_REPRO = {
    "dataset": "mnist",
    "method": "fedga",
    "data_dir": "data/mnist",
    "alpha": 0.05,
    "num_clients": 100,
    "active_per_round": 10,
    "rounds": 100,
    "lr": 0.1,
    "seeds": [0, 1, 2, 3, 4],
    "output_dir": "runs/mnist005",
}


def parse(obj) -> ExperimentConfig:
    return parse_config(json.dumps(obj).encode())


class TestParseConfig:
    def test_minimal_with_defaults(self):
        cfg = parse(MINIMAL)
        assert cfg.local_epochs == 2
        assert cfg.batch_size == 64
        assert cfg.momentum == 0.9
        assert cfg.eval_every == 1
        assert cfg.ea_every == 10
        assert cfg.optimizer == "sgd"
        assert cfg.seeds == [0, 1, 2, 3, 4]
        assert cfg.hidden_dims == [128]
        assert cfg.method == Method("fedavg")

    def test_k_exceeds_p(self):
        bad = dict(MNIST_REPRO, active_per_round=200, num_clients=100)
        with pytest.raises(ConfigError, match="K exceeds P"):
            parse(bad)

    def test_unknown_key_rejected_with_path(self):
        bad = dict(MINIMAL, learning_rate=0.1)
        with pytest.raises(ConfigError, match=r"config\.learning_rate: unknown key"):
            parse(bad)

    def test_unknown_nested_key_rejected(self):
        bad = dict(MINIMAL)
        bad["synthetic"] = dict(MINIMAL["synthetic"], sigma=1.0)
        with pytest.raises(ConfigError, match=r"config\.synthetic\.sigma"):
            parse(bad)

    def test_round_trip_identity(self):
        cfg = parse(MNIST_REPRO)
        again = parse_config(config_to_json(cfg))
        assert again == cfg
        assert config_to_dict(again) == config_to_dict(cfg)

    def test_missing_required_key(self):
        bad = {k: v for k, v in MINIMAL.items() if k != "lr"}
        with pytest.raises(ConfigError, match=r"config\.lr: required"):
            parse(bad)

    def test_wrong_type(self):
        with pytest.raises(ConfigError, match=r"config\.rounds: expected int"):
            parse(dict(MINIMAL, rounds="ten"))

    def test_bad_json(self):
        with pytest.raises(ConfigError, match="not valid JSON"):
            parse_config(b"{nope")

    def test_non_utf8(self):
        with pytest.raises(ConfigError, match="UTF-8"):
            parse_config(b"\xff\xfe{}")

    def test_alpha_required_for_multiclient(self):
        bad = {k: v for k, v in MINIMAL.items() if k != "alpha"}
        with pytest.raises(ConfigError, match=r"config\.alpha"):
            parse(bad)

    def test_alpha_optional_for_single_client(self):
        cfg = dict(MINIMAL, num_clients=1, active_per_round=1)
        del cfg["alpha"]
        assert parse(cfg).alpha is None

    def test_synthetic_block_required(self):
        bad = {k: v for k, v in MINIMAL.items() if k != "synthetic"}
        with pytest.raises(ConfigError, match=r"config\.synthetic"):
            parse(bad)

    def test_binary_subset_block(self):
        cfg = parse(
            {
                "dataset": "binary-subset",
                "method": "fedavg",
                "data_dir": "data/mnist",
                "num_clients": 1,
                "active_per_round": 1,
                "rounds": 5,
                "lr": 0.1,
                "output_dir": "runs/bin",
                "binary_subset": {
                    "positive_class": 6,
                    "negative_class": 0,
                    "n_pos": 50,
                    "ratio": 10,
                },
            }
        )
        assert cfg.binary_subset.ratio == 10.0

    def test_grad_clip_null_disables(self):
        cfg = parse(dict(MINIMAL, grad_clip=None))
        assert cfg.grad_clip is None

    def test_grad_clip_must_be_positive(self):
        with pytest.raises(ConfigError, match=r"config\.grad_clip"):
            parse(dict(MINIMAL, grad_clip=-1.0))

    def test_duplicate_seeds_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse(dict(MINIMAL, seeds=[0, 0, 1]))

    def test_bad_momentum(self):
        with pytest.raises(ConfigError, match=r"config\.momentum"):
            parse(dict(MINIMAL, momentum=1.0))


class TestParseMethod:
    def test_plain_methods(self):
        assert parse_method("fedavg") == Method("fedavg")
        assert parse_method("fedga") == Method("fedga")

    def test_fedprox_default_mu(self):
        assert parse_method("fedprox") == Method("fedprox", mu=0.001)

    def test_fedprox_explicit_mu(self):
        assert parse_method("fedprox:0.01") == Method("fedprox", mu=0.01)

    def test_fedprox_bad_mu(self):
        with pytest.raises(ConfigError):
            parse_method("fedprox:zero")
        with pytest.raises(ConfigError):
            parse_method("fedprox:-1")

    def test_unknown_method(self):
        with pytest.raises(ConfigError, match="fedavg"):
            parse_method("fedsgd")
