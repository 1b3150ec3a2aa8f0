"""Experiment configuration: strict JSON parsing and serialization.

The schema is flat JSON (no comments); unknown keys are rejected so typos
fail loudly. Defaults: local_epochs=2, batch_size=64, momentum=0.9,
eval_every=1, ea_every=10, optimizer=sgd, hidden_dims=[128],
seeds=[0,1,2,3,4]. The method string is "fedavg", "fedga", "fedprox" (mu
0.001) or "fedprox:<mu>".
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .engine import Method
from .errors import ConfigError

DATASETS = ("mnist", "synthetic", "binary-subset")
DEFAULT_FEDPROX_MU = 0.001
DATA_DIR_ENV = "FEDGASIM_DATA_DIR"


@dataclass
class SyntheticSpec:
    per_class_counts: list[int]
    dim: int
    spread: float
    test_per_class: int = 100
    seed: int = 0


@dataclass
class BinarySubsetConfig:
    positive_class: int
    negative_class: int
    n_pos: int
    ratio: float


@dataclass
class ExperimentConfig:
    dataset: str
    method: Method
    num_clients: int
    active_per_round: int
    rounds: int
    lr: float
    output_dir: str
    alpha: float | None = None
    data_dir: str | None = None
    synthetic: SyntheticSpec | None = None
    binary_subset: BinarySubsetConfig | None = None
    local_epochs: int = 2
    batch_size: int = 64
    momentum: float = 0.9
    optimizer: str = "sgd"
    hidden_dims: list[int] = field(default_factory=lambda: [128])
    grad_clip: float | None = 3.0
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    eval_every: int = 1
    ea_every: int = 10
    instrument_pre_post: bool = False


def parse_method(text: str) -> Method:
    """Resolve a method string, e.g. "fedga" or "fedprox:0.01"."""
    if text == "fedavg":
        return Method("fedavg")
    if text == "fedga":
        return Method("fedga")
    if text == "fedprox":
        return Method("fedprox", mu=DEFAULT_FEDPROX_MU)
    if text.startswith("fedprox:"):
        try:
            mu = float(text.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"config.method: bad fedprox mu in {text!r}") from None
        if mu <= 0:
            raise ConfigError(f"config.method: fedprox mu must be > 0, got {mu}")
        return Method("fedprox", mu=mu)
    raise ConfigError(
        f"config.method: {text!r} is not one of fedavg, fedprox[:mu], fedga"
    )


def method_to_string(method: Method) -> str:
    if method.kind == "fedprox":
        return f"fedprox:{method.mu!r}"
    return method.kind


def _want(obj: dict, key: str, types, default=..., path: str = "config"):
    if key not in obj:
        if default is ...:
            raise ConfigError(f"{path}.{key}: required key missing")
        return default
    value = obj.pop(key)
    wants_float = types is float or (isinstance(types, tuple) and float in types)
    if wants_float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    wants_bool = types is bool or (isinstance(types, tuple) and bool in types)
    if (isinstance(value, bool) and not wants_bool) or not isinstance(value, types):
        names = (
            "/".join(t.__name__ for t in types) if isinstance(types, tuple) else types.__name__
        )
        raise ConfigError(f"{path}.{key}: expected {names}")
    return value


def _int_list(obj: dict, key: str, default=..., path: str = "config") -> list[int]:
    value = _want(obj, key, list, default, path)
    if value is default and default is not ...:
        return list(default)
    out = []
    for i, v in enumerate(value):
        if not isinstance(v, int) or isinstance(v, bool):
            raise ConfigError(f"{path}.{key}[{i}]: expected integer")
        out.append(v)
    return out


def parse_config(raw: bytes | str) -> ExperimentConfig:
    """Parse and validate a JSON experiment config (strict; unknown keys fail)."""
    if isinstance(raw, bytes):
        try:
            raw = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ConfigError(f"config is not valid UTF-8: {exc}") from exc
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError("config root must be a JSON object")

    dataset = _want(obj, "dataset", str)
    if dataset not in DATASETS:
        raise ConfigError(f"config.dataset: {dataset!r} is not one of {DATASETS}")
    method = parse_method(_want(obj, "method", str))

    cfg = ExperimentConfig(
        dataset=dataset,
        method=method,
        num_clients=_want(obj, "num_clients", int),
        active_per_round=_want(obj, "active_per_round", int),
        rounds=_want(obj, "rounds", int),
        lr=_want(obj, "lr", float),
        output_dir=_want(obj, "output_dir", str, default=""),
        alpha=_want(obj, "alpha", float, default=None),
        data_dir=_want(obj, "data_dir", str, default=None),
        local_epochs=_want(obj, "local_epochs", int, default=2),
        batch_size=_want(obj, "batch_size", int, default=64),
        momentum=_want(obj, "momentum", float, default=0.9),
        optimizer=_want(obj, "optimizer", str, default="sgd"),
        hidden_dims=_int_list(obj, "hidden_dims", default=[128]),
        grad_clip=_want(obj, "grad_clip", (float, type(None)), default=3.0),
        seeds=_int_list(obj, "seeds", default=[0, 1, 2, 3, 4]),
        eval_every=_want(obj, "eval_every", int, default=1),
        ea_every=_want(obj, "ea_every", int, default=10),
        instrument_pre_post=_want(obj, "instrument_pre_post", bool, default=False),
    )

    if "synthetic" in obj:
        sub = _want(obj, "synthetic", dict)
        cfg.synthetic = SyntheticSpec(
            per_class_counts=_int_list(sub, "per_class_counts", path="config.synthetic"),
            dim=_want(sub, "dim", int, path="config.synthetic"),
            spread=_want(sub, "spread", float, path="config.synthetic"),
            test_per_class=_want(sub, "test_per_class", int, default=100, path="config.synthetic"),
            seed=_want(sub, "seed", int, default=0, path="config.synthetic"),
        )
        if sub:
            raise ConfigError(f"config.synthetic.{sorted(sub)[0]}: unknown key")
    if "binary_subset" in obj:
        sub = _want(obj, "binary_subset", dict)
        cfg.binary_subset = BinarySubsetConfig(
            positive_class=_want(sub, "positive_class", int, path="config.binary_subset"),
            negative_class=_want(sub, "negative_class", int, path="config.binary_subset"),
            n_pos=_want(sub, "n_pos", int, path="config.binary_subset"),
            ratio=_want(sub, "ratio", float, path="config.binary_subset"),
        )
        if sub:
            raise ConfigError(f"config.binary_subset.{sorted(sub)[0]}: unknown key")
    if obj:
        raise ConfigError(f"config.{sorted(obj)[0]}: unknown key")

    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    if cfg.active_per_round > cfg.num_clients:
        raise ConfigError(
            "config.active_per_round: K exceeds P "
            f"({cfg.active_per_round} > {cfg.num_clients})"
        )
    if cfg.active_per_round < 1 or cfg.num_clients < 1:
        raise ConfigError("config.num_clients/active_per_round: must be >= 1")
    if cfg.rounds < 1:
        raise ConfigError(f"config.rounds: must be >= 1, got {cfg.rounds}")
    if cfg.lr <= 0:
        raise ConfigError(f"config.lr: must be > 0, got {cfg.lr}")
    if cfg.local_epochs < 1:
        raise ConfigError(f"config.local_epochs: must be >= 1, got {cfg.local_epochs}")
    if cfg.batch_size < 1:
        raise ConfigError(f"config.batch_size: must be >= 1, got {cfg.batch_size}")
    if not 0.0 <= cfg.momentum < 1.0:
        raise ConfigError(f"config.momentum: must be in [0, 1), got {cfg.momentum}")
    if cfg.optimizer not in ("sgd", "adam"):
        raise ConfigError(f"config.optimizer: must be sgd or adam, got {cfg.optimizer!r}")
    if not cfg.seeds:
        raise ConfigError("config.seeds: must be non-empty")
    if len(set(cfg.seeds)) != len(cfg.seeds):
        raise ConfigError("config.seeds: duplicate seeds")
    if cfg.eval_every < 1 or cfg.ea_every < 1:
        raise ConfigError("config.eval_every/ea_every: must be >= 1")
    if any(d < 1 for d in cfg.hidden_dims):
        raise ConfigError(f"config.hidden_dims: all must be >= 1, got {cfg.hidden_dims}")
    if cfg.grad_clip is not None and cfg.grad_clip <= 0:
        raise ConfigError(f"config.grad_clip: must be > 0 or null, got {cfg.grad_clip}")
    if cfg.alpha is not None and cfg.alpha <= 0:
        raise ConfigError(f"config.alpha: must be > 0, got {cfg.alpha}")
    if cfg.num_clients > 1 and cfg.alpha is None:
        raise ConfigError("config.alpha: required when num_clients > 1")
    if cfg.dataset == "synthetic" and cfg.synthetic is None:
        raise ConfigError("config.synthetic: required for the synthetic dataset")
    if cfg.dataset == "binary-subset" and cfg.binary_subset is None:
        raise ConfigError("config.binary_subset: required for the binary-subset dataset")
    if cfg.binary_subset is not None:
        b = cfg.binary_subset
        if b.positive_class == b.negative_class:
            raise ConfigError("config.binary_subset: classes must differ")
        if b.ratio < 1:
            raise ConfigError(f"config.binary_subset.ratio: must be >= 1, got {b.ratio}")
        if b.n_pos < 1:
            raise ConfigError(f"config.binary_subset.n_pos: must be >= 1, got {b.n_pos}")


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Resolved config as a JSON-safe dict; parse(serialize(x)) == x."""
    out = {
        "dataset": cfg.dataset,
        "method": method_to_string(cfg.method),
        "num_clients": cfg.num_clients,
        "active_per_round": cfg.active_per_round,
        "rounds": cfg.rounds,
        "lr": cfg.lr,
        "output_dir": cfg.output_dir,
        "local_epochs": cfg.local_epochs,
        "batch_size": cfg.batch_size,
        "momentum": cfg.momentum,
        "optimizer": cfg.optimizer,
        "hidden_dims": list(cfg.hidden_dims),
        "grad_clip": cfg.grad_clip,
        "seeds": list(cfg.seeds),
        "eval_every": cfg.eval_every,
        "ea_every": cfg.ea_every,
        "instrument_pre_post": cfg.instrument_pre_post,
    }
    if cfg.alpha is not None:
        out["alpha"] = cfg.alpha
    if cfg.data_dir is not None:
        out["data_dir"] = cfg.data_dir
    if cfg.synthetic is not None:
        out["synthetic"] = {
            "per_class_counts": list(cfg.synthetic.per_class_counts),
            "dim": cfg.synthetic.dim,
            "spread": cfg.synthetic.spread,
            "test_per_class": cfg.synthetic.test_per_class,
            "seed": cfg.synthetic.seed,
        }
    if cfg.binary_subset is not None:
        out["binary_subset"] = {
            "positive_class": cfg.binary_subset.positive_class,
            "negative_class": cfg.binary_subset.negative_class,
            "n_pos": cfg.binary_subset.n_pos,
            "ratio": cfg.binary_subset.ratio,
        }
    return out


def config_to_json(cfg: ExperimentConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n"
