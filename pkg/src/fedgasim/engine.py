"""Federated round loop: client selection, local updates, weighted aggregation.

Determinism contract: a run is a pure function of (config, data, partition,
seed). Randomness is split into independent streams keyed by integer tuples,
so client updates may execute in any order (or concurrently on model copies)
without changing a single bit of the output:

    model init        default_rng([seed, 0])
    selection, round t    default_rng([seed, 1, t])
    client c, round t     default_rng([seed, 2, t, c])
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import alignment, metrics, nn
from .data import Dataset, PartitionPlan
from .errors import ConfigError, DimensionError, NumericError

logger = logging.getLogger(__name__)

METHOD_KINDS = ("fedavg", "fedprox", "fedga")


@dataclass(frozen=True)
class Method:
    """Training method: fedavg, fedprox (with mu), or fedga.

    mu = 0 makes fedprox coincide with fedavg bit for bit; user-facing config
    validation requires mu > 0, but the engine accepts 0 so the equivalence
    stays testable.
    """

    kind: str
    mu: float = 0.0
    ga_max_ratio: float | None = None

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise ConfigError(f"unknown method {self.kind!r}")
        if self.mu < 0:
            raise ConfigError(f"proximal mu must be >= 0, got {self.mu}")


@dataclass
class RoundConfig:
    """Hyperparameters of one federated experiment.

    grad_clip rescales each batch gradient to at most that global L2 norm
    before the optimizer step (None disables). It applies to every method:
    plain cross-entropy batches rarely exceed it, while it bounds the
    aligned-delta kick a rare-class sample injects on heavily skewed clients.
    """

    num_clients: int
    active_per_round: int
    rounds: int
    lr: float
    method: Method
    local_epochs: int = 2
    batch_size: int = 64
    momentum: float = 0.9
    optimizer: str = "sgd"
    hidden_dims: tuple[int, ...] = (128,)
    grad_clip: float | None = 3.0
    eval_every: int = 1
    ea_every: int = 10
    instrument_pre_post: bool = False

    def validate(self) -> None:
        if not (1 <= self.active_per_round <= self.num_clients):
            raise ConfigError(
                f"active_per_round must be in [1, {self.num_clients}], "
                f"got {self.active_per_round}"
            )
        if self.local_epochs < 1:
            raise ConfigError(f"local_epochs must be >= 1, got {self.local_epochs}")
        if self.rounds < 0:
            raise ConfigError(f"rounds must be >= 0, got {self.rounds}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be sgd or adam, got {self.optimizer!r}")
        if self.eval_every < 1 or self.ea_every < 1:
            raise ConfigError("eval_every and ea_every must be >= 1")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError(f"grad_clip must be positive or None, got {self.grad_clip}")


@dataclass
class ClientUpdateResult:
    """What a client sends back to the server (plus instrumentation)."""

    client_id: int
    model: nn.MlpModel
    n_samples: int
    ea_ratio_samples: list[float | None] = field(default_factory=list)

    def ea_ratio(self) -> float | None:
        vals = [r for r in self.ea_ratio_samples if r is not None]
        return float(np.mean(vals)) if vals else None


def clip_gradients(grads: nn.Gradients, max_norm: float) -> nn.Gradients:
    """Rescale to global L2 norm max_norm when exceeded; no-op otherwise."""
    total = 0.0
    for g in grads.weights + grads.biases:
        total += float((g * g).sum())
    norm = total**0.5
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.weights + grads.biases:
            g *= scale
    return grads


def select_clients(num_clients: int, k: int, rng: np.random.Generator, eligible=None) -> list[int]:
    """Uniform sample of k distinct client ids, ascending.

    Clients outside `eligible` (e.g. empty ones) are excluded; selecting more
    clients than are eligible is a configuration error.
    """
    pool = np.arange(num_clients) if eligible is None else np.asarray(sorted(eligible))
    if k > len(pool):
        raise ConfigError(f"cannot select {k} clients from {len(pool)} eligible")
    picked = rng.choice(pool, size=k, replace=False)
    return sorted(int(c) for c in picked)


def client_update(
    global_model: nn.MlpModel,
    features: np.ndarray,
    labels: np.ndarray,
    counts: np.ndarray,
    config: RoundConfig,
    rng: np.random.Generator,
    client_id: int = 0,
    collect_ea: bool = False,
) -> ClientUpdateResult:
    """Run local_epochs of seeded mini-batch training on a model copy.

    The output delta per batch is chosen by the method: plain cross entropy
    for fedavg/fedprox, the aligned delta (from the client's full-dataset
    class counts) for fedga. FedProx additionally pulls every step toward the
    received global model. When collect_ea is set, the EA ratio over the full
    local dataset is sampled at the end of each epoch.
    """
    n = len(labels)
    if n == 0:
        raise ConfigError(f"client {client_id} has no local data")
    model = global_model.copy()
    state = nn.init_optimizer(config.optimizer, model, config.lr, momentum=config.momentum)
    method = config.method
    ratio_table = (
        alignment.ga_ratio_table(counts, method.ga_max_ratio)
        if method.kind == "fedga"
        else None
    )
    ea_samples: list[float | None] = []

    for epoch in range(config.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch_idx = order[start : start + config.batch_size]
            x = features[batch_idx]
            y = labels[batch_idx]
            try:
                logits, trace = nn.forward(model, x)
                probs = nn.softmax(logits)
                if method.kind == "fedga":
                    delta = alignment.ga_delta_batch(counts, y, probs, ratio_table)
                else:
                    delta = alignment.ce_delta_batch(probs, y)
                grads = nn.backward(model, trace, delta)
                if method.kind == "fedprox":
                    prox = alignment.proximal_grad_term(model, global_model, method.mu)
                    for g, p in zip(grads.weights, prox.weights):
                        g += p
                    for g, p in zip(grads.biases, prox.biases):
                        g += p
                if config.grad_clip is not None:
                    clip_gradients(grads, config.grad_clip)
                nn.optimizer_step(model, grads, state)
            except NumericError as exc:
                raise NumericError(
                    f"client {client_id}, epoch {epoch}, "
                    f"batch at sample {start}: {exc}"
                ) from exc
        if collect_ea:
            probs_full = nn.softmax(nn.forward(model, features)[0])
            cmp = alignment.class_mean_predictions(
                probs_full, labels, global_model.num_classes
            )
            ea_samples.append(alignment.ea_ratio(alignment.error_asymmetry(cmp)))

    return ClientUpdateResult(
        client_id=client_id, model=model, n_samples=n, ea_ratio_samples=ea_samples
    )


def aggregate(results: list[ClientUpdateResult]) -> nn.MlpModel:
    """Sample-count-weighted parameter mean, accumulated in client-id order."""
    if not results:
        raise ConfigError("nothing to aggregate")
    ordered = sorted(results, key=lambda r: r.client_id)
    dims = ordered[0].model.layer_dims
    for r in ordered:
        if r.model.layer_dims != dims:
            raise DimensionError(
                f"client {r.client_id} returned shape {r.model.layer_dims}, expected {dims}"
            )
    total = float(sum(r.n_samples for r in ordered))
    weights = [np.zeros_like(w) for w in ordered[0].model.weights]
    biases = [np.zeros_like(b) for b in ordered[0].model.biases]
    for r in ordered:
        wt = r.n_samples / total
        for acc, w in zip(weights, r.model.weights):
            acc += wt * w
        for acc, b in zip(biases, r.model.biases):
            acc += wt * b
    return nn.MlpModel(layer_dims=list(dims), weights=weights, biases=biases)


def predict(model: nn.MlpModel, features: np.ndarray, chunk: int = 8192) -> np.ndarray:
    """Argmax class per row (lowest index wins ties), evaluated in chunks."""
    out = np.empty(len(features), dtype=np.int64)
    for start in range(0, len(features), chunk):
        logits, _ = nn.forward(model, features[start : start + chunk])
        out[start : start + chunk] = np.argmax(logits, axis=1)
    return out


@dataclass
class ExperimentResult:
    """Everything a single-seed run produces."""

    records: list[metrics.RoundRecord]
    final_model: nn.MlpModel
    final_predictions: np.ndarray
    pre_post: list[metrics.PrePostRecord]
    empty_clients: list[int]

    def accuracy_curve(self) -> dict[int, float]:
        return {r.round: r.accuracy for r in self.records}


def _evaluate(model: nn.MlpModel, test: Dataset) -> tuple[np.ndarray, np.ndarray]:
    preds = predict(model, test.features)
    cm = metrics.confusion(preds, test.labels, test.num_classes)
    return preds, cm


def run_experiment(
    config: RoundConfig,
    train: Dataset,
    test: Dataset,
    partition: PartitionPlan,
    seed: int,
) -> ExperimentResult:
    """Execute the full server loop for one seed.

    Round 0 records the freshly initialized model; every subsequent round
    trains the selected clients and aggregates. Evaluations happen on rounds
    matching eval_every or ea_every, plus the final round. EA ratios are
    collected on ea_every rounds; pre/post class accuracies are collected on
    the final round when instrument_pre_post is set.
    """
    config.validate()
    if partition.num_clients != config.num_clients:
        raise ConfigError(
            f"partition has {partition.num_clients} clients, config says {config.num_clients}"
        )
    c = train.num_classes
    counts = [train.class_counts(idx) for idx in partition.client_indices]
    empty = partition.empty_clients()
    if empty:
        logger.warning("excluding %d empty clients from selection: %s", len(empty), empty)
    eligible = [cid for cid in range(config.num_clients) if cid not in set(empty)]
    if config.active_per_round > len(eligible):
        raise ConfigError(
            f"active_per_round={config.active_per_round} exceeds the "
            f"{len(eligible)} non-empty clients"
        )

    dims = [train.features.shape[1], *config.hidden_dims, c]
    model = nn.init_params(dims, seed=[seed, 0])
    t0 = time.perf_counter()
    records: list[metrics.RoundRecord] = []
    pre_post: list[metrics.PrePostRecord] = []
    final_preds: np.ndarray | None = None

    def record_round(t: int, mean_ea: float | None) -> np.ndarray:
        preds, cm = _evaluate(model, test)
        records.append(
            metrics.RoundRecord(
                round=t,
                accuracy=metrics.accuracy(cm),
                macro_f1=metrics.macro_f1(cm),
                mean_ea_ratio=mean_ea,
                class_accuracy=metrics.classwise_accuracy(cm),
                wall_time=time.perf_counter() - t0,
            )
        )
        return preds

    final_preds = record_round(0, None)
    for t in range(1, config.rounds + 1):
        collect_ea = t % config.ea_every == 0
        instrument_pp = config.instrument_pre_post and t == config.rounds
        pre_class_acc = None
        if instrument_pp:
            _, cm_pre = _evaluate(model, test)
            pre_class_acc = metrics.classwise_accuracy(cm_pre)

        sel_rng = np.random.default_rng([seed, 1, t])
        selected = select_clients(
            config.num_clients, config.active_per_round, sel_rng, eligible=eligible
        )
        results = []
        for cid in selected:
            idx = partition.client_indices[cid]
            res = client_update(
                model,
                train.features[idx],
                train.labels[idx],
                counts[cid],
                config,
                np.random.default_rng([seed, 2, t, cid]),
                client_id=cid,
                collect_ea=collect_ea,
            )
            results.append(res)
            if instrument_pp:
                _, cm_post = _evaluate(res.model, test)
                pre_post.append(
                    metrics.PrePostRecord(
                        client_id=cid,
                        pre=pre_class_acc,
                        post=metrics.classwise_accuracy(cm_post),
                        counts=counts[cid],
                    )
                )
        model = aggregate(results)

        mean_ea = (
            metrics.mean_client_ea_ratio(r.ea_ratio() for r in results)
            if collect_ea
            else None
        )
        if t % config.eval_every == 0 or collect_ea or t == config.rounds:
            final_preds = record_round(t, mean_ea)

    return ExperimentResult(
        records=records,
        final_model=model,
        final_predictions=final_preds,
        pre_post=pre_post,
        empty_clients=empty,
    )
