"""Encoder, projection heads, linear classifier, and checkpointing.

Parameters live in frozen dataclasses holding differentiable leaf nodes;
a training step reads gradients off those leaves and rebuilds the
dataclasses with updated values, so no tensor is ever mutated in place.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from tscl import autodiff as ad
from tscl.augment import TimeSeriesBatch
from tscl.errors import DimensionError, InvalidGraphError, ParameterError
from tscl.graph import SimilarityMatrix
from tscl.tensor import Tensor2D


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters shared by all components."""

    in_channels: int
    length: int
    embed_dim: int
    n_classes: int
    conv_channels: tuple[int, int] = (16, 32)
    kernel: int = 8
    pool_width: int = 2
    head: str = "gcn"
    self_loop: bool = False

    def __post_init__(self) -> None:
        if self.head not in ("gcn", "mlp"):
            raise ParameterError(f"head must be 'gcn' or 'mlp', got {self.head!r}")
        if min(
            self.in_channels,
            self.length,
            self.embed_dim,
            self.n_classes,
            self.kernel,
            self.pool_width,
        ) < 1:
            raise ParameterError("all architecture sizes must be positive")

    @property
    def channel_plan(self) -> tuple[int, ...]:
        return (*self.conv_channels, self.embed_dim)

    @property
    def pooled_length(self) -> int:
        length = self.length
        for _ in self.channel_plan:
            length = math.ceil(length / self.pool_width)
        return length

    @property
    def flat_dim(self) -> int:
        return self.embed_dim * self.pooled_length


@dataclass(frozen=True)
class EncoderParams:
    """Three conv-relu-pool blocks followed by a linear map to embed_dim."""

    conv_weights: tuple[ad.DiffNode, ...]
    conv_biases: tuple[ad.DiffNode, ...]
    linear_weight: ad.DiffNode
    linear_bias: ad.DiffNode

    def named(self) -> dict[str, ad.DiffNode]:
        out: dict[str, ad.DiffNode] = {}
        for i, (w, b) in enumerate(zip(self.conv_weights, self.conv_biases)):
            out[f"encoder.conv{i}.weight"] = w
            out[f"encoder.conv{i}.bias"] = b
        out["encoder.linear.weight"] = self.linear_weight
        out["encoder.linear.bias"] = self.linear_bias
        return out


@dataclass(frozen=True)
class ProjectionParams:
    """Two square weight matrices, shared shape between both head kinds.

    The graph head and the plain two-layer head use identical shapes, so
    their parameter counts match by construction.
    """

    w1: ad.DiffNode
    w2: ad.DiffNode

    def __post_init__(self) -> None:
        r1, c1 = self.w1.shape
        r2, c2 = self.w2.shape
        if not (r1 == c1 == r2 == c2):
            raise DimensionError(
                f"projection weights must be square and matching, "
                f"got {self.w1.shape} and {self.w2.shape}"
            )

    def named(self) -> dict[str, ad.DiffNode]:
        return {"projection.w1": self.w1, "projection.w2": self.w2}

    @property
    def parameter_count(self) -> int:
        return self.w1.value.array.size + self.w2.value.array.size


@dataclass(frozen=True)
class ClassifierParams:
    """Single linear classifier consumed by both embedding spaces."""

    weight: ad.DiffNode
    bias: ad.DiffNode

    def named(self) -> dict[str, ad.DiffNode]:
        return {"classifier.weight": self.weight, "classifier.bias": self.bias}


@dataclass(frozen=True)
class ModelParams:
    encoder: EncoderParams
    projection: ProjectionParams
    classifier: ClassifierParams

    def named(self) -> dict[str, ad.DiffNode]:
        out: dict[str, ad.DiffNode] = {}
        out.update(self.encoder.named())
        out.update(self.projection.named())
        out.update(self.classifier.named())
        return dict(sorted(out.items()))

    def values(self) -> dict[str, Tensor2D]:
        return {k: v.value for k, v in self.named().items()}


def init_model(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Seeded initialization: scaled normals for weights, zero biases.

    The classifier starts at zero so an untrained model emits uniform
    class probabilities.
    """
    conv_w: list[ad.DiffNode] = []
    conv_b: list[ad.DiffNode] = []
    c_in = config.in_channels
    for c_out in config.channel_plan:
        fan_in = c_in * config.kernel
        w = rng.standard_normal((c_out, fan_in)) * math.sqrt(2.0 / fan_in)
        conv_w.append(ad.leaf(w))
        conv_b.append(ad.leaf(np.zeros((1, c_out))))
        c_in = c_out
    flat = config.flat_dim
    linear_w = ad.leaf(rng.standard_normal((flat, config.embed_dim)) / math.sqrt(flat))
    linear_b = ad.leaf(np.zeros((1, config.embed_dim)))
    h = config.embed_dim
    w1 = ad.leaf(rng.standard_normal((h, h)) * math.sqrt(2.0 / h))
    w2 = ad.leaf(rng.standard_normal((h, h)) * math.sqrt(2.0 / h))
    cls_w = ad.leaf(np.zeros((h, config.n_classes)))
    cls_b = ad.leaf(np.zeros((1, config.n_classes)))
    return ModelParams(
        encoder=EncoderParams(
            conv_weights=tuple(conv_w),
            conv_biases=tuple(conv_b),
            linear_weight=linear_w,
            linear_bias=linear_b,
        ),
        projection=ProjectionParams(w1=w1, w2=w2),
        classifier=ClassifierParams(weight=cls_w, bias=cls_b),
    )


def rebuild_with_values(
    params: ModelParams, values: dict[str, Tensor2D]
) -> ModelParams:
    """New parameter set with the same structure and the given values."""
    def pick(name: str) -> ad.DiffNode:
        return ad.leaf(values[name])

    n_blocks = len(params.encoder.conv_weights)
    return ModelParams(
        encoder=EncoderParams(
            conv_weights=tuple(
                pick(f"encoder.conv{i}.weight") for i in range(n_blocks)
            ),
            conv_biases=tuple(pick(f"encoder.conv{i}.bias") for i in range(n_blocks)),
            linear_weight=pick("encoder.linear.weight"),
            linear_bias=pick("encoder.linear.bias"),
        ),
        projection=ProjectionParams(w1=pick("projection.w1"), w2=pick("projection.w2")),
        classifier=ClassifierParams(
            weight=pick("classifier.weight"), bias=pick("classifier.bias")
        ),
    )


def encode(
    x: TimeSeriesBatch | ad.DiffNode | np.ndarray,
    params: EncoderParams,
    config: ModelConfig,
) -> ad.DiffNode:
    """Embed a batch: (conv -> relu -> pool) x3, then one linear layer.

    Output is (n, embed_dim) and NOT unit-normalized; downstream users
    normalize where cosine geometry is required.
    """
    if isinstance(x, TimeSeriesBatch):
        node = ad.constant(x.values)
    elif isinstance(x, ad.DiffNode):
        node = x
    else:
        node = ad.constant(np.asarray(x, dtype=np.float64))
    width = config.in_channels * config.length
    if node.shape[1] != width:
        raise DimensionError(
            f"encoder expects rows of width {width} "
            f"(channels {config.in_channels} x length {config.length}), "
            f"got {node.shape[1]}"
        )
    channels = config.in_channels
    length = config.length
    cur = node
    for w, b, c_out in zip(
        params.conv_weights, params.conv_biases, config.channel_plan
    ):
        cur = ad.conv1d(cur, w, b, channels=channels, length=length)
        cur = ad.relu(cur)
        cur = ad.max_pool1d(cur, channels=c_out, length=length, width=config.pool_width)
        channels = c_out
        length = math.ceil(length / config.pool_width)
    return ad.add(ad.matmul(cur, params.linear_weight), params.linear_bias)


def _adjacency_node(alpha, n_rows: int) -> ad.DiffNode:
    if isinstance(alpha, SimilarityMatrix):
        node = alpha.node
    elif isinstance(alpha, ad.DiffNode):
        node = alpha
    else:
        node = ad.constant(np.asarray(alpha, dtype=np.float64))
    a = node.value.array
    if a.shape != (n_rows, n_rows):
        raise InvalidGraphError(
            f"adjacency shape {a.shape} does not match batch size {n_rows}"
        )
    diag = np.abs(np.diag(a)).max(initial=0.0)
    if diag > 0.0:
        raise InvalidGraphError(f"adjacency diagonal must be 0, max |diag| = {diag}")
    row_err = np.abs(a.sum(axis=1) - 1.0).max(initial=0.0)
    if row_err > 1e-9:
        raise InvalidGraphError(f"adjacency rows must sum to 1, max err {row_err}")
    return node


def gcn_project(
    h: ad.DiffNode,
    alpha: SimilarityMatrix | ad.DiffNode | np.ndarray,
    params: ProjectionParams,
    self_loop: bool = False,
) -> ad.DiffNode:
    """Two rounds of neighbor averaging with a ReLU between, then normalize.

    Messages propagate strictly through other instances because the
    adjacency diagonal is zero; ``self_loop`` mixes each node's own state
    back in by averaging the adjacency with the identity.
    """
    node = _adjacency_node(alpha, h.shape[0])
    if self_loop:
        node = ad.scale(ad.add(node, ad.constant(np.eye(h.shape[0]))), 0.5)
    hidden = ad.relu(ad.matmul(node, ad.matmul(h, params.w1)))
    out = ad.matmul(ad.matmul(node, hidden), params.w2)
    return ad.row_l2_normalize(out)


def mlp_project(h: ad.DiffNode, params: ProjectionParams) -> ad.DiffNode:
    """Plain two-layer head with the same shapes as the graph head."""
    hidden = ad.relu(ad.matmul(h, params.w1))
    return ad.row_l2_normalize(ad.matmul(hidden, params.w2))


def classify(e: ad.DiffNode, params: ClassifierParams) -> ad.DiffNode:
    """Logits = e @ W + b."""
    if e.shape[1] != params.weight.shape[0]:
        raise DimensionError(
            f"classifier expects {params.weight.shape[0]}-dim embeddings, "
            f"got {e.shape[1]}"
        )
    return ad.add(ad.matmul(e, params.weight), params.bias)


def save_values(values: dict[str, Tensor2D], path: str | Path) -> None:
    """Write a flat name->matrix map as JSON with full float precision."""
    payload = {
        "format": "tscl-params-v1",
        "arrays": {
            name: {
                "shape": list(tensor.shape),
                "data": [float(v) for v in tensor.array.reshape(-1)],
            }
            for name, tensor in sorted(values.items())
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_values(path: str | Path) -> dict[str, Tensor2D]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != "tscl-params-v1":
        raise ParameterError(
            f"unrecognized checkpoint format {payload.get('format')!r} in {path}"
        )
    out: dict[str, Tensor2D] = {}
    for name, entry in payload["arrays"].items():
        rows, cols = entry["shape"]
        out[name] = Tensor2D(
            np.array(entry["data"], dtype=np.float64).reshape(rows, cols)
        )
    return out
