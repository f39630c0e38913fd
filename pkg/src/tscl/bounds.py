"""Lower-bound evaluators for class-specific contrastive losses.

For a chosen class, both contrastive losses restricted to that class's
anchors admit a closed-form lower bound obtained by applying Jensen's
inequality separately to the same-class and other-class candidate pools.
This module evaluates those bounds, the two equality conditions (Q1: all
same-class inner products with an anchor are equal; Q2: all other-class
inner products are equal), and the majority/minority gap that the bound
predicts under class imbalance.

The evaluators work on a raw inner-product matrix so that tests can
perturb a single similarity; convenience wrappers accept embeddings.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from tscl import autodiff as ad
from tscl.errors import (
    DegenerateClassError,
    DimensionError,
    NormalizationError,
    ParameterError,
    UndefinedBoundError,
)
from tscl.losses import BatchIndexing, two_view_indexing
from tscl.tensor import Tensor2D


@dataclass(frozen=True)
class AnchorBound:
    """Per-anchor bound decomposition.

    ``primary_term`` is the same-class contribution: the positive-pool
    size for the supervised bound ("constant") or the size-weighted
    exponential of same-class-mean minus positive similarity for the
    instance bound ("confliction"). ``confrontation_term`` always weighs
    the other-class pool against the positives.
    """

    index: int
    primary_term: float
    confrontation_term: float
    bound_value: float
    actual_value: float


@dataclass(frozen=True)
class EqualityConditions:
    q1_satisfied: bool
    q1_max_dev: float
    q2_satisfied: bool
    q2_max_dev: float
    tol: float

    @property
    def both(self) -> bool:
        return self.q1_satisfied and self.q2_satisfied


@dataclass(frozen=True)
class BoundReport:
    """Bound vs. actual loss for one class's anchors in one batch."""

    kind: str  # "supervised" or "instance"
    class_index: int
    primary_term_name: str  # "constant" or "confliction"
    anchors: tuple[AnchorBound, ...]
    total_bound: float
    total_actual: float
    equality: EqualityConditions

    @property
    def slack(self) -> float:
        return self.total_actual - self.total_bound

    @property
    def q1_satisfied(self) -> bool:
        return self.equality.q1_satisfied

    @property
    def q2_satisfied(self) -> bool:
        return self.equality.q2_satisfied


def _embedding_values(z) -> np.ndarray:
    if isinstance(z, ad.DiffNode):
        return z.value.array
    if isinstance(z, Tensor2D):
        return z.array
    return np.asarray(z, dtype=np.float64)


def _check_unit_norm(values: np.ndarray, tol: float = 1e-6) -> None:
    norms = np.linalg.norm(values, axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > tol)
    if bad.size:
        raise NormalizationError(
            f"embedding rows must be unit-norm within {tol}: "
            f"rows {bad[:5].tolist()} have norms {norms[bad[:5]].tolist()}"
        )


def _prepare(
    sims: np.ndarray, idx: BatchIndexing, class_index: int, temperature: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    sims = np.asarray(sims, dtype=np.float64)
    n = idx.n
    if sims.shape != (n, n):
        raise DimensionError(
            f"similarity matrix shape {sims.shape} does not match batch size {n}"
        )
    if temperature <= 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    members = np.flatnonzero(idx.labels == class_index)
    if members.size < 2:
        raise DegenerateClassError(
            f"class {class_index} has {members.size} batch member(s); "
            "the bound needs at least 2"
        )
    complement = np.flatnonzero(idx.labels != class_index)
    if complement.size == 0:
        raise UndefinedBoundError(
            f"class {class_index} fills the whole batch; "
            "the bound needs at least one other-class row"
        )
    return sims, members, complement


def _anchor_stats(
    scaled: np.ndarray, members: np.ndarray, complement: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-anchor (same-class mean, other-class mean, log-sum-exp over others)."""
    p = members.size
    rows = scaled[members]
    mean_same = (rows[:, members].sum(axis=1) - scaled[members, members]) / (p - 1)
    mean_comp = rows[:, complement].mean(axis=1)
    masked = scaled.copy()
    np.fill_diagonal(masked, -np.inf)
    masked = masked[members]
    peak = masked.max(axis=1)
    lse = peak + np.log(np.exp(masked - peak[:, None]).sum(axis=1))
    return mean_same, mean_comp, lse


def equality_conditions_from_sims(
    sims: np.ndarray, idx: BatchIndexing, class_index: int, tol: float = 1e-9
) -> EqualityConditions:
    """Max spread of same-class (Q1) and other-class (Q2) inner products.

    Deviations are measured on the raw inner products (before any
    temperature scaling); a group with fewer than two values satisfies
    its condition vacuously.
    """
    sims, members, complement = _prepare(sims, idx, class_index, temperature=1.0)
    q1_dev = 0.0
    q2_dev = 0.0
    for i in members:
        same = sims[i, members[members != i]]
        if same.size > 1:
            q1_dev = max(q1_dev, float(same.max() - same.min()))
        other = sims[i, complement]
        if other.size > 1:
            q2_dev = max(q2_dev, float(other.max() - other.min()))
    return EqualityConditions(
        q1_satisfied=q1_dev <= tol,
        q1_max_dev=q1_dev,
        q2_satisfied=q2_dev <= tol,
        q2_max_dev=q2_dev,
        tol=tol,
    )


def bound_sc_from_sims(
    sims: np.ndarray,
    idx: BatchIndexing,
    class_index: int,
    temperature: float = 1.0,
    tol: float = 1e-9,
) -> BoundReport:
    """Supervised-loss lower bound for one class from raw inner products."""
    sims, members, complement = _prepare(sims, idx, class_index, temperature)
    scaled = sims / temperature
    mean_same, mean_comp, lse = _anchor_stats(scaled, members, complement)
    constant = float(members.size - 1)
    confrontation = complement.size * np.exp(mean_comp - mean_same)
    bound = np.log(constant + confrontation)
    actual = lse - mean_same
    anchors = tuple(
        AnchorBound(int(i), constant, float(cf), float(b), float(a))
        for i, cf, b, a in zip(members, confrontation, bound, actual)
    )
    return BoundReport(
        kind="supervised",
        class_index=int(class_index),
        primary_term_name="constant",
        anchors=anchors,
        total_bound=float(bound.sum()),
        total_actual=float(actual.sum()),
        equality=equality_conditions_from_sims(sims, idx, class_index, tol),
    )


def bound_uc_from_sims(
    sims: np.ndarray,
    idx: BatchIndexing,
    class_index: int,
    temperature: float = 1.0,
    tol: float = 1e-9,
) -> BoundReport:
    """Instance-loss lower bound for one class from raw inner products."""
    sims, members, complement = _prepare(sims, idx, class_index, temperature)
    scaled = sims / temperature
    mean_same, mean_comp, lse = _anchor_stats(scaled, members, complement)
    positive = scaled[members, idx.partner[members]]
    confliction = (members.size - 1) * np.exp(mean_same - positive)
    confrontation = complement.size * np.exp(mean_comp - positive)
    bound = np.log(confliction + confrontation)
    actual = lse - positive
    anchors = tuple(
        AnchorBound(int(i), float(cl), float(cf), float(b), float(a))
        for i, cl, cf, b, a in zip(members, confliction, confrontation, bound, actual)
    )
    return BoundReport(
        kind="instance",
        class_index=int(class_index),
        primary_term_name="confliction",
        anchors=anchors,
        total_bound=float(bound.sum()),
        total_actual=float(actual.sum()),
        equality=equality_conditions_from_sims(sims, idx, class_index, tol),
    )


def bound_sc(
    z, idx: BatchIndexing, class_index: int, temperature: float = 1.0, tol: float = 1e-9
) -> BoundReport:
    values = _embedding_values(z)
    _check_unit_norm(values)
    return bound_sc_from_sims(values @ values.T, idx, class_index, temperature, tol)


def bound_uc(
    z, idx: BatchIndexing, class_index: int, temperature: float = 1.0, tol: float = 1e-9
) -> BoundReport:
    values = _embedding_values(z)
    _check_unit_norm(values)
    return bound_uc_from_sims(values @ values.T, idx, class_index, temperature, tol)


def check_equality_conditions(
    z, idx: BatchIndexing, class_index: int, tol: float = 1e-9
) -> EqualityConditions:
    values = _embedding_values(z)
    _check_unit_norm(values)
    return equality_conditions_from_sims(values @ values.T, idx, class_index, tol)


@dataclass(frozen=True)
class ImbalanceAnalysis:
    """Majority-vs-minority comparison of the bound's log argument.

    With class counts in descending order, minority count N_C, ratio
    r = N_1/N_C, and a shared exponential term e early in training, the
    majority-class bound argument is (r+e)*N_C against (1+r*e)*N_C for
    the minority; their difference is gap_factor * N_C.
    """

    imbalance_ratio: float
    shared_exponential: float
    minority_count: int
    lb_majority: float
    lb_minority: float
    gap_factor: float


def imbalance_gap(
    imbalance_ratio: float, shared_exponential: float, minority_count: int = 1
) -> ImbalanceAnalysis:
    r = float(imbalance_ratio)
    e = float(shared_exponential)
    if r < 1.0:
        raise ParameterError(f"imbalance ratio must be >= 1, got {r}")
    if not 0.0 < e <= 1.0:
        raise ParameterError(f"shared exponential term must lie in (0, 1], got {e}")
    if minority_count < 1:
        raise ParameterError(f"minority count must be >= 1, got {minority_count}")
    lb_majority = (r + e) * minority_count
    lb_minority = (1.0 + r * e) * minority_count
    gap_factor = (r - 1.0) * (1.0 - e)
    if lb_majority + 1e-12 < lb_minority:
        raise UndefinedBoundError(
            f"majority argument {lb_majority} fell below minority {lb_minority}"
        )
    return ImbalanceAnalysis(
        imbalance_ratio=r,
        shared_exponential=e,
        minority_count=int(minority_count),
        lb_majority=lb_majority,
        lb_minority=lb_minority,
        gap_factor=gap_factor,
    )


@dataclass(frozen=True)
class FuzzSummary:
    configurations: int
    evaluations: int
    violations: int
    worst_slack: float
    worst_slack_config: int
    equality_evaluations: int
    worst_equality_slack: float
    elapsed_seconds: float

    def to_dict(self) -> dict:
        return {
            "configurations": self.configurations,
            "evaluations": self.evaluations,
            "violations": self.violations,
            "worst_slack": self.worst_slack,
            "worst_slack_config": self.worst_slack_config,
            "equality_evaluations": self.equality_evaluations,
            "worst_equality_slack": self.worst_equality_slack,
            "elapsed_seconds": self.elapsed_seconds,
        }


def fuzz_bounds(
    configurations: int = 1000,
    seed: int = 0,
    max_batch: int = 16,
    max_dim: int = 8,
    max_classes: int = 4,
    temperatures: tuple[float, ...] = (0.2, 0.5, 1.0),
    slack_floor: float = -1e-9,
    equality_tol: float = 1e-12,
) -> FuzzSummary:
    """Random-configuration sweep asserting actual >= bound everywhere.

    Each configuration is a two-view batch of unit-norm embeddings with
    random labels; both bounds are evaluated for every class present with
    at least two members and a nonempty complement, at every temperature.
    """
    if configurations < 1:
        raise ParameterError(f"need at least one configuration, got {configurations}")
    if max_batch < 4 or max_dim < 1 or max_classes < 2:
        raise ParameterError(
            f"infeasible ranges: batch {max_batch}, dim {max_dim}, "
            f"classes {max_classes}"
        )
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    evaluations = 0
    violations = 0
    worst_slack = math.inf
    worst_config = -1
    equality_evaluations = 0
    worst_equality_slack = -math.inf
    for config in range(configurations):
        pairs = int(rng.integers(2, max_batch // 2 + 1))
        dim = int(rng.integers(1, max_dim + 1))
        n_classes = int(rng.integers(2, max_classes + 1))
        view_labels = rng.integers(0, n_classes, size=pairs)
        if np.unique(view_labels).size < 2:
            view_labels[0] = (view_labels[0] + 1) % n_classes
        idx = two_view_indexing(view_labels)
        z = rng.standard_normal((2 * pairs, dim))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        sims = z @ z.T
        for tau in temperatures:
            for y in np.unique(idx.labels):
                for builder in (bound_sc_from_sims, bound_uc_from_sims):
                    report = builder(sims, idx, int(y), temperature=tau)
                    evaluations += 1
                    if report.slack < worst_slack:
                        worst_slack = report.slack
                        worst_config = config
                    if report.slack < slack_floor:
                        violations += 1
                    eq = equality_conditions_from_sims(
                        sims, idx, int(y), tol=equality_tol
                    )
                    if eq.both:
                        equality_evaluations += 1
                        worst_equality_slack = max(
                            worst_equality_slack, report.slack
                        )
    return FuzzSummary(
        configurations=configurations,
        evaluations=evaluations,
        violations=violations,
        worst_slack=float(worst_slack),
        worst_slack_config=worst_config,
        equality_evaluations=equality_evaluations,
        worst_equality_slack=float(worst_equality_slack),
        elapsed_seconds=time.perf_counter() - start,
    )
