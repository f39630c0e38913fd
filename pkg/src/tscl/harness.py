"""Training harness: pretraining loop, linear probing, and run records.

The harness wires the encoder, projection head, similarity graph, and the
loss terms into a deterministic training loop.  Determinism is organized
around a seed tree: the run seed spawns one stream for parameter
initialization and one for training; the training stream spawns one child
per epoch, and each epoch child spawns independent streams for shuffling,
the weak view, and the strong view.  Re-running with the same configuration
therefore reproduces every batch bit for bit.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .augment import AugmentParams, TimeSeriesBatch, strong_augment, weak_augment
from .errors import DimensionError, ParameterError, TrainingDivergedError
from .graph import SimilarityMatrix, build_similarity
from .losses import (
    BatchIndexing,
    LossReport,
    loss_cc,
    loss_combined,
    loss_id,
    loss_mid,
    two_view_indexing,
)
from .metrics import MetricsReport, evaluate
from .model import (
    ClassifierParams,
    ModelConfig,
    ModelParams,
    classify,
    encode,
    gcn_project,
    init_model,
    mlp_project,
    rebuild_with_values,
)
from .optim import AdamConfig, adam_step, init_adam_state
from .tensor import Tensor2D

__all__ = [
    "VariantSpec",
    "VARIANTS",
    "TrainConfig",
    "EpochStats",
    "RunRecord",
    "ClassLossGap",
    "model_config_for",
    "pretrain",
    "linear_probe",
    "run_experiment",
    "track_class_losses",
    "class_loss_csv",
    "save_run_record",
    "load_run_record",
]


# ---------------------------------------------------------------------------
# Variants


@dataclass(frozen=True)
class VariantSpec:
    """Which head and which loss terms a training variant enables."""

    head: str
    use_mid: bool
    use_id: bool
    use_cc: bool

    def __post_init__(self) -> None:
        if self.head not in ("mlp", "gcn"):
            raise ParameterError(f"unknown head {self.head!r}")
        if not (self.use_mid or self.use_id):
            raise ParameterError("a variant must enable at least one contrastive term")


#: The ablation lattice: every supported combination of projection head and
#: loss terms, from the plain instance-contrastive baseline up to the full
#: method (graph head + both contrastive terms + consistency classification).
VARIANTS: dict[str, VariantSpec] = {
    "mlp_id": VariantSpec(head="mlp", use_mid=False, use_id=True, use_cc=False),
    "mlp_mid": VariantSpec(head="mlp", use_mid=True, use_id=False, use_cc=False),
    "mlp_mid_id": VariantSpec(head="mlp", use_mid=True, use_id=True, use_cc=False),
    "gcn_id": VariantSpec(head="gcn", use_mid=False, use_id=True, use_cc=False),
    "gcn_mid": VariantSpec(head="gcn", use_mid=True, use_id=False, use_cc=False),
    "gcn_mid_id": VariantSpec(head="gcn", use_mid=True, use_id=True, use_cc=False),
    "full": VariantSpec(head="gcn", use_mid=True, use_id=True, use_cc=True),
}


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one pretraining run."""

    variant: str = "full"
    epochs: int = 40
    batch_size: int = 128
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    lr: float = 3e-4
    weight_decay: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    temperature: float = 0.2
    lambda_graph: float = 1.0
    lambda_cls: float = 1.0
    label_fraction: float = 0.10
    embed_dim: int = 32
    conv_channels: tuple[int, ...] = (16, 32)
    kernel: int = 8
    pool_width: int = 2
    self_loop: bool = False
    augment: AugmentParams = field(default_factory=AugmentParams)

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            known = ", ".join(sorted(VARIANTS))
            raise ParameterError(f"unknown variant {self.variant!r} (known: {known})")
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ParameterError(f"batch size must be >= 2, got {self.batch_size}")
        if not self.seeds:
            raise ParameterError("seeds must be a nonempty sequence")
        if self.lr < 0.0 or self.weight_decay < 0.0:
            raise ParameterError("learning rate and weight decay must be nonnegative")
        if self.temperature <= 0.0:
            raise ParameterError(f"temperature must be positive, got {self.temperature}")
        if self.lambda_graph < 0.0 or self.lambda_cls < 0.0:
            raise ParameterError("loss weights must be nonnegative")
        if not 0.0 < self.label_fraction <= 1.0:
            raise ParameterError(
                f"label fraction must be in (0, 1], got {self.label_fraction}"
            )
        if self.embed_dim < 1:
            raise ParameterError(f"embedding dimension must be >= 1, got {self.embed_dim}")

    @property
    def variant_spec(self) -> VariantSpec:
        return VARIANTS[self.variant]

    def to_dict(self) -> dict:
        """Plain-dict snapshot suitable for JSON serialization."""
        d = dataclasses.asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "augment" in d and isinstance(d["augment"], dict):
            d["augment"] = AugmentParams(**d["augment"])
        if "conv_channels" in d:
            d["conv_channels"] = tuple(int(c) for c in d["conv_channels"])
        if "seeds" in d:
            d["seeds"] = tuple(int(s) for s in d["seeds"])
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ParameterError(f"unknown config fields: {sorted(extra)}")
        return cls(**d)


def model_config_for(config: TrainConfig, batch: TimeSeriesBatch) -> ModelConfig:
    """Derive the model geometry for a dataset under a training config."""
    if batch.n == 0:
        raise ParameterError("cannot derive a model from an empty dataset")
    n_classes = int(batch.labels.max()) + 1
    return ModelConfig(
        in_channels=batch.channels,
        length=batch.length,
        embed_dim=config.embed_dim,
        n_classes=n_classes,
        conv_channels=config.conv_channels,
        kernel=config.kernel,
        pool_width=config.pool_width,
        head=config.variant_spec.head,
        self_loop=config.self_loop,
    )


# ---------------------------------------------------------------------------
# Run records


@dataclass(frozen=True)
class EpochStats:
    """Aggregates for one epoch: anchor-weighted means over its batches."""

    epoch: int
    combined: float
    components: dict[str, float]
    class_mean_loss: dict[int, float]

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "combined": self.combined,
            "components": dict(sorted(self.components.items())),
            "class_mean_loss": {
                str(k): v for k, v in sorted(self.class_mean_loss.items())
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpochStats":
        return cls(
            epoch=int(d["epoch"]),
            combined=float(d["combined"]),
            components={str(k): float(v) for k, v in d["components"].items()},
            class_mean_loss={
                int(k): float(v) for k, v in d["class_mean_loss"].items()
            },
        )


@dataclass(frozen=True)
class RunRecord:
    """Everything one training run produced, ready for JSON round-tripping.

    ``metric_scale`` states once, for the whole file, whether metric values
    live in [0, 1] (``"fraction"``) or [0, 100] (``"percent"``).
    """

    seed: int
    variant: str
    config: dict
    epoch_stats: tuple[EpochStats, ...]
    final_metrics: Optional[dict] = None
    metric_scale: str = "fraction"

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "variant": self.variant,
            "config": self.config,
            "epoch_stats": [s.to_dict() for s in self.epoch_stats],
            "final_metrics": self.final_metrics,
            "metric_scale": self.metric_scale,
        }

    def to_json(self) -> str:
        """Canonical JSON: sorted keys, ``repr``-faithful floats, newline end."""
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(
            seed=int(d["seed"]),
            variant=str(d["variant"]),
            config=dict(d["config"]),
            epoch_stats=tuple(EpochStats.from_dict(s) for s in d["epoch_stats"]),
            final_metrics=d.get("final_metrics"),
            metric_scale=str(d.get("metric_scale", "fraction")),
        )

    def with_metrics(self, metrics: dict) -> "RunRecord":
        return dataclasses.replace(self, final_metrics=metrics)


def class_loss_csv(record: RunRecord) -> str:
    """Per-epoch per-class mean loss as an ``epoch,class,mean_loss`` CSV."""
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(["epoch", "class", "mean_loss"])
    for stat in record.epoch_stats:
        for y in sorted(stat.class_mean_loss):
            writer.writerow([stat.epoch, y, repr(stat.class_mean_loss[y])])
    return buffer.getvalue()


def save_run_record(record: RunRecord, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(record.to_json())


def load_run_record(path: str) -> RunRecord:
    with open(path, "r", encoding="utf-8") as fh:
        return RunRecord.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Pretraining


def _zero_report(name: str, components: dict[str, float]) -> LossReport:
    """Placeholder for a disabled loss term (contributes exactly zero)."""
    return LossReport(
        name=name,
        node=ad.constant(np.zeros((1, 1))),
        per_anchor=(),
        components=dict(components),
        class_sums={},
    )


def _forward_batch(
    params: ModelParams,
    model_config: ModelConfig,
    config: TrainConfig,
    stacked: np.ndarray,
    idx: BatchIndexing,
    label_mask: np.ndarray,
) -> tuple[LossReport, LossReport]:
    """Run one stacked two-view batch; return (combined, tracked) reports.

    ``tracked`` is the report whose per-anchor values feed the per-class
    loss statistics: the instance-level term when it is enabled, otherwise
    the graph-level term.
    """
    spec = config.variant_spec
    h = encode(stacked, params.encoder, model_config)

    sim: Optional[SimilarityMatrix] = None
    if spec.use_mid or spec.head == "gcn":
        sim = build_similarity(h, config.temperature)

    z: Optional[ad.DiffNode] = None
    if spec.use_id or spec.use_cc:
        if spec.head == "gcn":
            assert sim is not None
            z = gcn_project(h, sim, params.projection, self_loop=config.self_loop)
        else:
            z = mlp_project(h, params.projection)

    if spec.use_mid:
        assert sim is not None
        mid = loss_mid(h, sim, idx)
    else:
        mid = _zero_report("MID", {"MID": 0.0})

    if spec.use_id:
        assert z is not None
        instance = loss_id(z, idx, config.temperature)
    else:
        instance = _zero_report("ID", {"ID": 0.0})

    if spec.use_cc:
        assert z is not None
        logits_h = classify(h, params.classifier)
        logits_z = classify(z, params.classifier)
        cc = loss_cc(logits_h, logits_z, idx.labels, label_mask)
    else:
        cc = _zero_report("CC", {"CC_h": 0.0, "CC_z": 0.0})

    combined = loss_combined(
        mid, instance, cc, lambda_graph=config.lambda_graph, lambda_cls=config.lambda_cls
    )
    tracked = instance if spec.use_id else mid
    return combined, tracked


def pretrain(
    config: TrainConfig, data: TimeSeriesBatch, seed: Optional[int] = None
) -> tuple[ModelParams, RunRecord]:
    """Train the encoder (and heads) on ``data``; return params and record.

    ``seed`` picks the run seed (default: the first entry of
    ``config.seeds``).  Raises :class:`TrainingDivergedError` as soon as any
    batch produces a non-finite combined loss; the exception carries the
    index of the last epoch that completed cleanly.
    """
    if data.n < 2:
        raise ParameterError(f"need at least 2 samples to train, got {data.n}")
    if config.batch_size > data.n:
        raise ParameterError(
            f"batch size {config.batch_size} exceeds dataset size {data.n}"
        )
    run_seed = config.seeds[0] if seed is None else int(seed)
    model_config = model_config_for(config, data)

    root = np.random.SeedSequence(run_seed)
    init_seq, train_seq = root.spawn(2)
    params = init_model(model_config, np.random.default_rng(init_seq))
    adam_config = AdamConfig(
        lr=config.lr,
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.eps,
        weight_decay=config.weight_decay,
    )
    state = init_adam_state(params.values())

    epoch_seqs = train_seq.spawn(config.epochs)
    stats: list[EpochStats] = []
    for epoch_index in range(config.epochs):
        shuffle_seq, weak_seq, strong_seq = epoch_seqs[epoch_index].spawn(3)
        # Augment the whole dataset in canonical storage order so the views
        # are independent of the shuffle, then batch over shuffled indices.
        weak = weak_augment(data, np.random.default_rng(weak_seq), config.augment)
        strong = strong_augment(data, np.random.default_rng(strong_seq), config.augment)
        order = np.random.default_rng(shuffle_seq).permutation(data.n)

        total_weight = 0.0
        combined_sum = 0.0
        component_sums: dict[str, float] = {}
        class_sums: dict[int, float] = {}
        class_counts: dict[int, int] = {}

        for start in range(0, data.n, config.batch_size):
            rows = order[start : start + config.batch_size]
            if rows.size < 2:
                continue  # a single leftover sample cannot form a batch
            stacked = np.vstack([weak.values[rows], strong.values[rows]])
            idx = two_view_indexing(data.labels[rows])
            label_mask = np.concatenate([data.label_mask[rows], data.label_mask[rows]])

            for node in params.named().values():
                node.grad = None
            combined, tracked = _forward_batch(
                params, model_config, config, stacked, idx, label_mask
            )
            total = combined.total
            if not np.isfinite(total):
                raise TrainingDivergedError(
                    f"non-finite loss in epoch {epoch_index + 1}",
                    last_good_epoch=epoch_index,
                )
            ad.backward(combined.node)
            grads = {
                name: None if node.grad is None else Tensor2D(node.grad)
                for name, node in params.named().items()
            }
            state, new_values = adam_step(adam_config, state, params.values(), grads)
            params = rebuild_with_values(params, new_values)

            weight = float(idx.n)
            total_weight += weight
            combined_sum += total * weight
            for cname, cvalue in combined.components.items():
                component_sums[cname] = component_sums.get(cname, 0.0) + cvalue * weight
            for _, label, value in tracked.per_anchor:
                class_sums[label] = class_sums.get(label, 0.0) + value
                class_counts[label] = class_counts.get(label, 0) + 1

        if total_weight == 0.0:
            raise ParameterError("no trainable batch was formed in an epoch")
        stats.append(
            EpochStats(
                epoch=epoch_index + 1,
                combined=combined_sum / total_weight,
                components={
                    k: v / total_weight for k, v in component_sums.items()
                },
                class_mean_loss={
                    y: class_sums[y] / class_counts[y] for y in sorted(class_sums)
                },
            )
        )

    record = RunRecord(
        seed=run_seed,
        variant=config.variant,
        config=config.to_dict(),
        epoch_stats=tuple(stats),
    )
    return params, record


# ---------------------------------------------------------------------------
# Linear probe


def linear_probe(
    params: ModelParams,
    model_config: ModelConfig,
    train: TimeSeriesBatch,
    test: TimeSeriesBatch,
    *,
    epochs: int = 200,
    lr: float = 1e-2,
) -> tuple[ClassifierParams, MetricsReport]:
    """Fit a linear classifier on frozen-encoder embeddings of labeled rows.

    The encoder is never updated: embeddings are computed once and wrapped
    as constants, and only a fresh zero-initialized linear head is trained
    (full-batch Adam on the labeled subset).  Evaluation runs on ``test``.
    """
    if epochs < 1:
        raise ParameterError(f"probe epochs must be >= 1, got {epochs}")
    if lr <= 0.0:
        raise ParameterError(f"probe learning rate must be positive, got {lr}")
    labeled = np.flatnonzero(train.label_mask)
    if labeled.size == 0:
        raise ParameterError("probe needs at least one labeled training sample")
    if test.n == 0:
        raise ParameterError("probe needs a nonempty evaluation set")
    present = set(int(y) for y in train.labels[labeled])
    missing = sorted(set(range(model_config.n_classes)) - present)
    if missing:
        warnings.warn(
            f"classes absent from the labeled training subset: {missing}; "
            "their scores are unreliable",
            stacklevel=2,
        )

    train_h = encode(train.take(labeled), params.encoder, model_config)
    test_h = encode(test, params.encoder, model_config)
    features = ad.constant(train_h.array)
    labels = train.labels[labeled]

    n_classes = model_config.n_classes
    clf = ClassifierParams(
        weight=ad.leaf(Tensor2D.zeros(model_config.embed_dim, n_classes)),
        bias=ad.leaf(Tensor2D.zeros(1, n_classes)),
    )
    adam_config = AdamConfig(lr=lr)
    values = {name: node.value for name, node in clf.named().items()}
    state = init_adam_state(values)
    for _ in range(epochs):
        for node in clf.named().values():
            node.grad = None
        logits = classify(features, clf)
        loss = ad.mean(ad.cross_entropy_with_logits(logits, labels))
        ad.backward(loss)
        grads = {
            name: None if node.grad is None else Tensor2D(node.grad)
            for name, node in clf.named().items()
        }
        values = {name: node.value for name, node in clf.named().items()}
        state, new_values = adam_step(adam_config, state, values, grads)
        clf = ClassifierParams(
            weight=ad.leaf(new_values["classifier.weight"]),
            bias=ad.leaf(new_values["classifier.bias"]),
        )

    test_logits = classify(ad.constant(test_h.array), clf)
    predictions = np.argmax(test_logits.array, axis=1)
    report = evaluate(test.labels, predictions, n_classes)
    return clf, report


def run_experiment(
    config: TrainConfig,
    train: TimeSeriesBatch,
    test: TimeSeriesBatch,
    seed: Optional[int] = None,
    *,
    probe_epochs: int = 200,
    probe_lr: float = 1e-2,
) -> tuple[ModelParams, RunRecord]:
    """Pretrain on ``train``, probe on its labeled subset, evaluate on ``test``."""
    params, record = pretrain(config, train, seed=seed)
    model_config = model_config_for(config, train)
    _, report = linear_probe(
        params, model_config, train, test, epochs=probe_epochs, lr=probe_lr
    )
    return params, record.with_metrics(report.to_dict())


# ---------------------------------------------------------------------------
# Per-class loss trajectories


@dataclass(frozen=True)
class ClassLossGap:
    """Majority/minority mean instance loss for one epoch, and their gap."""

    epoch: int
    majority_mean: float
    minority_mean: float

    @property
    def gap(self) -> float:
        return self.majority_mean - self.minority_mean


def track_class_losses(
    record: RunRecord,
    majority_class: Optional[int] = None,
    minority_class: Optional[int] = None,
) -> tuple[ClassLossGap, ...]:
    """Extract per-epoch majority/minority mean losses from a run record.

    Classes default to the smallest and largest class index, matching the
    synthetic generator's convention of ordering classes by descending size.
    """
    if not record.epoch_stats:
        raise ParameterError("run record has no epoch statistics")
    classes = sorted(record.epoch_stats[0].class_mean_loss)
    if len(classes) < 2:
        raise ParameterError("per-class tracking needs at least two classes")
    majority = classes[0] if majority_class is None else majority_class
    minority = classes[-1] if minority_class is None else minority_class
    out = []
    for stat in record.epoch_stats:
        if majority not in stat.class_mean_loss or minority not in stat.class_mean_loss:
            raise ParameterError(
                f"epoch {stat.epoch} lacks a mean loss for class "
                f"{majority if majority not in stat.class_mean_loss else minority}"
            )
        out.append(
            ClassLossGap(
                epoch=stat.epoch,
                majority_mean=stat.class_mean_loss[majority],
                minority_mean=stat.class_mean_loss[minority],
            )
        )
    return tuple(out)
