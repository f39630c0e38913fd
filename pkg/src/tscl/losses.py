"""Training objectives: contrastive, multi-instance, and consistency losses.

Every loss returns a :class:`LossReport` carrying a differentiable scalar
total (mean over anchors), the per-anchor values, and per-class sums of
those values for the bound evaluators and the imbalance tracker.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from tscl import autodiff as ad
from tscl.errors import (
    BatchTooSmallError,
    DegenerateClassError,
    DimensionError,
    NormalizationError,
    ParameterError,
)
from tscl.graph import SimilarityMatrix

# Probabilities below this are clamped before log; each clamp is counted.
UNDERFLOW_FLOOR = 1e-300


@dataclass(frozen=True)
class BatchIndexing:
    """Index bookkeeping for one contrastive batch.

    ``partner`` maps each row to its other augmented view and must be an
    involution with no fixed points; per-class index sets and complements
    are derived from ``labels``.
    """

    labels: np.ndarray
    partner: np.ndarray

    def __post_init__(self) -> None:
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        partner = np.asarray(self.partner, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "partner", partner)
        n = labels.shape[0]
        if partner.shape[0] != n:
            raise DimensionError(
                f"labels have {n} entries but pair map has {partner.shape[0]}"
            )
        if partner.min(initial=0) < 0 or partner.max(initial=0) >= n:
            raise ParameterError("pair map indices out of range")
        idx = np.arange(n)
        if np.any(partner == idx):
            raise ParameterError("positive-pair map must have no fixed points")
        if not np.array_equal(partner[partner], idx):
            raise ParameterError("positive-pair map must be an involution")

    @property
    def n(self) -> int:
        return int(self.labels.shape[0])

    def class_members(self) -> dict[int, np.ndarray]:
        return {
            int(y): np.flatnonzero(self.labels == y) for y in np.unique(self.labels)
        }

    def complement(self, y: int) -> np.ndarray:
        return np.flatnonzero(self.labels != y)


def two_view_indexing(view_labels: np.ndarray) -> BatchIndexing:
    """Indexing for a 2N-row batch of stacked views.

    Rows 0..N-1 are one augmented view and rows N..2N-1 the other; row i
    is paired with row i+N (and vice versa), and labels repeat per view.
    """
    half = np.asarray(view_labels, dtype=np.int64).reshape(-1)
    n = half.shape[0]
    if n < 1:
        raise BatchTooSmallError("need at least one sample per view")
    partner = np.concatenate([np.arange(n) + n, np.arange(n)])
    return BatchIndexing(labels=np.concatenate([half, half]), partner=partner)


@dataclass(frozen=True)
class LossReport:
    """One evaluated loss: differentiable total plus per-anchor breakdown."""

    name: str
    node: ad.DiffNode
    per_anchor: tuple[tuple[int, int, float], ...]
    components: dict[str, float]
    class_sums: dict[int, float]
    flags: tuple[str, ...] = ()
    underflow_count: int = 0
    weights: dict[str, float] = field(default_factory=dict)

    @property
    def total(self) -> float:
        return float(self.node.value.array[0, 0])

    def class_sum(self, y: int) -> float:
        return self.class_sums.get(int(y), 0.0)


def _group_sums(values: np.ndarray, labels: np.ndarray) -> dict[int, float]:
    return {int(y): float(values[labels == y].sum()) for y in np.unique(labels)}


def _finalize(
    name: str,
    per_node: ad.DiffNode,
    labels: np.ndarray,
    flags: tuple[str, ...] = (),
    underflow_count: int = 0,
) -> LossReport:
    values = per_node.value.array.reshape(-1)
    per_anchor = tuple(
        (int(i), int(labels[i]), float(values[i])) for i in range(values.shape[0])
    )
    return LossReport(
        name=name,
        node=ad.mean(per_node),
        per_anchor=per_anchor,
        components={name: float(values.mean())},
        class_sums=_group_sums(values, labels),
        flags=flags,
        underflow_count=underflow_count,
    )


def _check_unit_rows(z: ad.DiffNode, tol: float = 1e-6) -> None:
    norms = np.linalg.norm(z.value.array, axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > tol)
    if bad.size:
        raise NormalizationError(
            f"embedding rows must be unit-norm within {tol}: "
            f"rows {bad[:5].tolist()} have norms {norms[bad[:5]].tolist()}"
        )


def _scaled_similarities(z: ad.DiffNode, temperature: float) -> ad.DiffNode:
    if temperature <= 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    if z.shape[0] < 2:
        raise BatchTooSmallError(f"contrastive loss needs n >= 2, got {z.shape[0]}")
    return ad.scale(ad.matmul(z, ad.transpose(z)), 1.0 / temperature)


def loss_uc(
    z: ad.DiffNode, idx: BatchIndexing, temperature: float, name: str = "UC"
) -> LossReport:
    """One-positive contrastive loss over all |B|-1 candidates per anchor."""
    _check_unit_rows(z)
    n = z.shape[0]
    if idx.n != n:
        raise DimensionError(f"indexing covers {idx.n} rows but batch has {n}")
    scaled = _scaled_similarities(z, temperature)
    lse = ad.logsumexp_row(scaled, excluded=np.arange(n))
    pos = ad.take_pairs(scaled, idx.partner)
    return _finalize(name, ad.sub(lse, pos), idx.labels)


def loss_id(z: ad.DiffNode, idx: BatchIndexing, temperature: float) -> LossReport:
    """Single-instance discrimination on projected embeddings.

    Contract is identical to :func:`loss_uc`; only the report name and the
    intended input (post-projection embeddings) differ.
    """
    return loss_uc(z, idx, temperature, name="ID")


def loss_sc(z: ad.DiffNode, idx: BatchIndexing, temperature: float) -> LossReport:
    """Supervised contrastive loss: per anchor, mean over same-class positives."""
    _check_unit_rows(z)
    n = z.shape[0]
    if idx.n != n:
        raise DimensionError(f"indexing covers {idx.n} rows but batch has {n}")
    singletons = [y for y, m in idx.class_members().items() if m.size < 2]
    if singletons:
        raise DegenerateClassError(
            f"classes with a single batch member have no positives: {singletons}"
        )
    labels = idx.labels
    pos_mask = (labels[:, None] == labels[None, :]).astype(np.float64)
    np.fill_diagonal(pos_mask, 0.0)
    counts = pos_mask.sum(axis=1, keepdims=True)
    scaled = _scaled_similarities(z, temperature)
    lse = ad.logsumexp_row(scaled, excluded=np.arange(n))
    mean_pos = ad.mul_elem(ad.row_sum(ad.mul_elem(scaled, pos_mask)), 1.0 / counts)
    return _finalize("SC", ad.sub(lse, mean_pos), labels)


def loss_mid(
    h: ad.DiffNode,
    sim: SimilarityMatrix,
    idx: BatchIndexing | None = None,
    weighted: bool = False,
) -> LossReport:
    """Multi-instance discrimination: push similarity mass onto every peer.

    The default target is uniform over the n-1 other instances, evaluated
    literally as -(1/(n-1)) * sum(log alpha_ij). The ``weighted`` variant
    replaces the uniform target with the detached similarity row itself;
    it is off by default.
    """
    n = sim.n
    if h.shape[0] != n:
        raise DimensionError(f"graph has {n} nodes but batch has {h.shape[0]} rows")
    a = sim.alpha.array
    off_diag = a[~np.eye(n, dtype=bool)]
    underflow = int(np.count_nonzero(off_diag < UNDERFLOW_FLOOR))
    flags = ("underflow_clamped",) if underflow else ()
    guarded = ad.clamp_min(ad.add(sim.node, ad.constant(np.eye(n))), UNDERFLOW_FLOOR)
    logs = ad.log(guarded)
    if weighted:
        per = ad.scale(ad.row_sum(ad.mul_elem(logs, a)), -1.0)
    else:
        per = ad.scale(ad.row_sum(logs), -1.0 / (n - 1))
    labels = idx.labels if idx is not None else np.full(n, -1, dtype=np.int64)
    return _finalize("MID", per, labels, flags=flags, underflow_count=underflow)


def loss_cc(
    logits_h: ad.DiffNode,
    logits_z: ad.DiffNode,
    labels: np.ndarray,
    label_mask: np.ndarray,
) -> LossReport:
    """Consistency classification: cross-entropy on both embedding spaces.

    Only rows flagged in ``label_mask`` contribute; both heads share the
    classifier upstream, so this just averages each head's cross-entropy
    over the labeled subset and adds the two.
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    mask = np.asarray(label_mask, dtype=bool).reshape(-1)
    n = logits_h.shape[0]
    if logits_z.shape != logits_h.shape:
        raise DimensionError(
            f"logit shapes differ: {logits_h.shape} vs {logits_z.shape}"
        )
    if labels.shape[0] != n or mask.shape[0] != n:
        raise DimensionError(
            f"expected {n} labels and mask entries, got "
            f"{labels.shape[0]} and {mask.shape[0]}"
        )
    labeled = np.flatnonzero(mask)
    if labeled.size == 0:
        return LossReport(
            name="CC",
            node=ad.constant(np.zeros((1, 1))),
            per_anchor=(),
            components={"CC_h": 0.0, "CC_z": 0.0},
            class_sums={},
            flags=("no_labels",),
        )
    picked = labels[labeled]
    ce_h = ad.cross_entropy_with_logits(ad.take_rows(logits_h, labeled), picked)
    ce_z = ad.cross_entropy_with_logits(ad.take_rows(logits_z, labeled), picked)
    mean_h = ad.mean(ce_h)
    mean_z = ad.mean(ce_z)
    both = (ce_h.value.array + ce_z.value.array).reshape(-1)
    per_anchor = tuple(
        (int(i), int(labels[i]), float(v)) for i, v in zip(labeled, both)
    )
    return LossReport(
        name="CC",
        node=ad.add(mean_h, mean_z),
        per_anchor=per_anchor,
        components={
            "CC_h": float(mean_h.value.array[0, 0]),
            "CC_z": float(mean_z.value.array[0, 0]),
        },
        class_sums=_group_sums(both, picked),
    )


def loss_combined(
    mid: LossReport,
    instance: LossReport,
    cc: LossReport,
    lambda_graph: float = 1.0,
    lambda_cls: float = 1.0,
) -> LossReport:
    """Weighted total: lambda_graph*(MID + ID) + lambda_cls*CC."""
    if lambda_graph < 0 or lambda_cls < 0:
        raise ParameterError(
            f"loss weights must be nonnegative, got {lambda_graph}, {lambda_cls}"
        )
    node = ad.add(
        ad.scale(ad.add(mid.node, instance.node), lambda_graph),
        ad.scale(cc.node, lambda_cls),
    )
    components = {
        "MID": mid.total,
        "ID": instance.total,
        "CC_h": cc.components.get("CC_h", 0.0),
        "CC_z": cc.components.get("CC_z", 0.0),
    }
    report = LossReport(
        name="combined",
        node=node,
        per_anchor=(),
        components=components,
        class_sums={},
        flags=tuple(sorted(set(mid.flags + instance.flags + cc.flags))),
        underflow_count=mid.underflow_count
        + instance.underflow_count
        + cc.underflow_count,
        weights={"lambda_graph": lambda_graph, "lambda_cls": lambda_cls},
    )
    expected = lambda_graph * (components["MID"] + components["ID"]) + lambda_cls * (
        components["CC_h"] + components["CC_z"]
    )
    if abs(report.total - expected) > 1e-12:
        raise ParameterError(
            f"combined total {report.total} drifted from component sum {expected}"
        )
    return report
