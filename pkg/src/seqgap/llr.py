"""Running log-likelihood-ratio statistics and their order structure.

The stopping rules only ever look at the current vector of cumulative LLRs
through its order statistics: the values sorted in decreasing order, the map
back to stream labels, and the count of strictly positive statistics.  Ties
are broken toward the lower stream label, so decisions are deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LlrState:
    """Cumulative LLR vector after ``n`` observations per stream."""

    n: int
    lam: np.ndarray

    def __post_init__(self) -> None:
        lam = np.asarray(self.lam, dtype=float)
        if lam.ndim != 1 or lam.size < 2:
            raise ValueError("lam must be a 1-D vector with at least 2 entries")
        if self.n < 0:
            raise ValueError(f"n must be >= 0, got {self.n}")
        object.__setattr__(self, "lam", lam)

    @property
    def j(self) -> int:
        return int(self.lam.size)


def initial_state(j: int) -> LlrState:
    """All-zero state before any data arrive."""
    if j < 2:
        raise ValueError(f"need at least 2 streams, got {j}")
    return LlrState(n=0, lam=np.zeros(int(j)))


def advance(state: LlrState, increments: np.ndarray) -> LlrState:
    """One synchronous observation across all streams."""
    inc = np.asarray(increments, dtype=float)
    if inc.shape != state.lam.shape:
        raise ValueError(
            f"increment shape {inc.shape} does not match state shape {state.lam.shape}"
        )
    if not np.all(np.isfinite(inc)):
        raise ValueError("increments must be finite")
    return LlrState(n=state.n + 1, lam=state.lam + inc)


@dataclass(frozen=True)
class OrderView:
    """Order statistics of one LLR vector.

    ``sorted`` holds the values in decreasing order; ``index_map[k]`` is the
    1-based stream label carrying ``sorted[k]``.  Equal values keep stream-
    label order, so the lowest label wins the higher rank.
    ``positive_count`` counts strictly positive statistics.
    """

    sorted: np.ndarray
    index_map: np.ndarray
    positive_count: int

    @property
    def j(self) -> int:
        return int(self.sorted.size)

    def top_labels(self, k: int) -> frozenset[int]:
        """Stream labels holding the k largest statistics."""
        if not 0 <= k <= self.j:
            raise ValueError(f"k must be in 0..{self.j}, got {k}")
        return frozenset(int(lbl) for lbl in self.index_map[:k])


def order_view(state: LlrState | np.ndarray) -> OrderView:
    """Sort a state's LLR vector in decreasing order, lowest label first on ties."""
    lam = state.lam if isinstance(state, LlrState) else np.asarray(state, dtype=float)
    # argsort of the negated vector with a stable sort implements the
    # decreasing order with lowest-stream-label tie-breaking.
    order = np.argsort(-lam, kind="stable")
    return OrderView(
        sorted=lam[order],
        index_map=(order + 1).astype(int),
        positive_count=int(np.count_nonzero(lam > 0.0)),
    )


def gap_at(view: OrderView, k: int) -> float:
    """Gap between the k-th and (k+1)-th largest statistics.

    Positions 0 and J sit against the sentinels +inf above the largest and
    -inf below the smallest value, so both boundary gaps are +inf.
    """
    if not 0 <= k <= view.j:
        raise ValueError(f"k must be in 0..{view.j}, got {k}")
    if k == 0 or k == view.j:
        return math.inf
    return float(view.sorted[k - 1] - view.sorted[k])
