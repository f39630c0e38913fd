"""Instance graph: temperature-scaled softmax similarities over a batch."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tscl import autodiff as ad
from tscl.errors import BatchTooSmallError, InvalidGraphError, ParameterError
from tscl.tensor import Tensor2D


@dataclass(frozen=True)
class SimilarityMatrix:
    """Row-stochastic pairwise similarity with a zero diagonal.

    ``node`` carries the differentiable graph back to the embeddings the
    matrix was built from; ``alpha`` is the plain value view.
    """

    n: int
    temperature: float
    node: ad.DiffNode

    @property
    def alpha(self) -> Tensor2D:
        return self.node.value

    def validate(self, tol: float = 1e-9) -> None:
        a = self.alpha.array
        diag = np.abs(np.diag(a))
        if diag.max(initial=0.0) != 0.0:
            raise InvalidGraphError(
                f"similarity diagonal must be exactly 0, max |diag| = {diag.max()}"
            )
        row_err = np.abs(a.sum(axis=1) - 1.0).max()
        if row_err > tol:
            raise InvalidGraphError(f"similarity rows must sum to 1, max err {row_err}")


def build_similarity(
    h: ad.DiffNode,
    temperature: float,
    normalize_rows_first: bool = True,
) -> SimilarityMatrix:
    """Softmax over pairwise inner products, excluding each row's own entry.

    With ``normalize_rows_first`` (the default) embeddings are row
    L2-normalized before the inner products, so similarities are cosines
    and stay bounded at any temperature; the raw-dot variant is kept for
    comparison.
    """
    n = h.shape[0]
    if n < 2:
        raise BatchTooSmallError(f"similarity needs at least 2 rows, got {n}")
    if temperature <= 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    base = ad.row_l2_normalize(h) if normalize_rows_first else h
    sims = ad.matmul(base, ad.transpose(base))
    alpha = ad.masked_softmax_rows(sims, excluded=np.arange(n), temperature=temperature)
    out = SimilarityMatrix(n=n, temperature=float(temperature), node=alpha)
    out.validate()
    return out
