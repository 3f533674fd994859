"""Anchor and subgraph sampling for the contrastive objective.

Each anchor node yields a measured subgraph of exactly k nodes found by
breadth-first traversal inside its 2-hop ball; anchors whose ball is too
small are excluded. Every view carries the uniform distribution over its
nodes, so transport problems between views are balanced.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import Graph, induced_subgraph

log = logging.getLogger(__name__)


def default_anchor_count(n: int) -> int:
    return min(300, n // 2)


def sample_anchors(g: Graph, count: int, seed: int) -> np.ndarray:
    """Distinct anchor node ids, deterministic for a seed."""
    if not 1 <= count <= g.n:
        raise ValueError(f"anchor count {count} out of range for {g.n} nodes")
    rng = np.random.default_rng(seed)
    return rng.choice(g.n, size=count, replace=False)


def bfs_sample(g: Graph, anchor: int, k: int,
               rng: Optional[np.random.Generator] = None) -> Optional[np.ndarray]:
    """First k nodes of a depth-2 breadth-first traversal from the anchor.

    Neighbors are visited in ascending node-id order; passing ``rng``
    shuffles each frontier instead (randomized sampling mode). Returns
    None when the 2-hop ball holds fewer than k nodes.
    """
    if k < 2:
        raise ValueError(f"subgraph size k must be >= 2, got {k}")
    if not 0 <= anchor < g.n:
        raise ValueError(f"anchor {anchor} out of range")
    adj = g.adjacency
    indptr, indices = adj.indptr, adj.indices
    visited = {int(anchor)}
    order = [int(anchor)]
    frontier = [int(anchor)]
    for _depth in range(2):
        if len(order) >= k:
            break
        next_frontier = []
        for node in frontier:
            neigh = indices[indptr[node]:indptr[node + 1]]
            if rng is not None:
                neigh = rng.permutation(neigh)
            for nb in neigh:
                nb = int(nb)
                if nb not in visited:
                    visited.add(nb)
                    order.append(nb)
                    next_frontier.append(nb)
                    if len(order) >= k:
                        break
            if len(order) >= k:
                break
        frontier = next_frontier
    if len(order) < k:
        return None
    return np.asarray(order[:k], dtype=np.int64)


@dataclass
class MeasuredSubgraph:
    """Node set with its adjacency view, embedding rows and uniform mass."""

    indices: np.ndarray
    a_slice: Tensor
    h_slice: Tensor
    mu: np.ndarray

    def __post_init__(self):
        k = self.indices.size
        if self.a_slice.shape != (k, k) or self.h_slice.shape[0] != k:
            raise ValueError("view shapes do not match the index set")
        if abs(self.mu.sum() - 1.0) > 1e-9 or np.ptp(self.mu) > 1e-12:
            raise ValueError("mass must be uniform and sum to 1")


def build_views(indices: np.ndarray, adjacency, h: Tensor,
                h_hat: Tensor) -> tuple[MeasuredSubgraph, MeasuredSubgraph]:
    """Original view (binary adjacency slice, H rows) and perturbed view
    (pairwise cosine similarities of the perturbed rows with a zero
    diagonal, H-hat rows). Embedding slices stay on the tape."""
    k = indices.size
    mu = np.full(k, 1.0 / k)
    a = ad.constant(induced_subgraph(adjacency, indices))
    h_rows = ad.gather_rows(h, indices)
    original = MeasuredSubgraph(indices=indices, a_slice=a, h_slice=h_rows,
                                mu=mu)
    h_hat_rows = ad.gather_rows(h_hat, indices)
    cos = ad.cosine_matrix(h_hat_rows, h_hat_rows)
    off_diag = ad.constant(1.0 - np.eye(k))
    a_hat = ad.mul(cos, off_diag)
    perturbed = MeasuredSubgraph(indices=indices, a_slice=a_hat,
                                 h_slice=h_hat_rows, mu=mu)
    return original, perturbed


@dataclass
class ContrastBatch:
    """Usable anchors with their positive view pairs and negative views.

    negatives[i] lists M subgraphs drawn from other anchors' views: the
    drawn partner j contributes its original and perturbed views in turn.
    """

    anchors: np.ndarray
    originals: list[MeasuredSubgraph]
    perturbed: list[MeasuredSubgraph]
    negatives: list[list[MeasuredSubgraph]]
    seed: int


def assign_negatives(anchors: np.ndarray, originals: list[MeasuredSubgraph],
                     perturbed: list[MeasuredSubgraph], num_negatives: int,
                     seed: int) -> Optional[ContrastBatch]:
    """Draw contrast partners j != i for each usable anchor.

    Returns None (the caller skips the subgraph loss this step) when
    fewer than 2 usable anchors remain.
    """
    count = len(originals)
    if count != len(perturbed) or count != anchors.size:
        raise ValueError("anchors and view lists disagree in length")
    if count < 2:
        log.warning("only %d usable anchors; skipping the subgraph loss",
                    count)
        return None
    if num_negatives < 1:
        raise ValueError(f"need at least 1 negative, got {num_negatives}")
    rng = np.random.default_rng(seed)
    negatives: list[list[MeasuredSubgraph]] = []
    partners_needed = (num_negatives + 1) // 2
    for i in range(count):
        pool = [j for j in range(count) if j != i]
        js = rng.choice(len(pool), size=partners_needed, replace=True)
        negs: list[MeasuredSubgraph] = []
        for jj in js:
            j = pool[int(jj)]
            negs.append(originals[j])
            negs.append(perturbed[j])
        negatives.append(negs[:num_negatives])
    return ContrastBatch(anchors=anchors, originals=originals,
                         perturbed=perturbed, negatives=negatives, seed=seed)


def sample_contrast_batch(g: Graph, h: Tensor, h_hat: Tensor, k: int,
                          num_anchors: int, num_negatives: int, seed: int,
                          shuffle_frontier: bool = False
                          ) -> tuple[Optional[ContrastBatch], int]:
    """Anchors -> BFS index sets -> views -> negatives, in one pass.

    Returns (batch or None, number of excluded anchors).
    """
    anchor_ids = sample_anchors(g, num_anchors, seed)
    rng = np.random.default_rng(seed + 1) if shuffle_frontier else None
    usable = []
    originals = []
    perturbed = []
    excluded = 0
    for anchor in anchor_ids:
        idx = bfs_sample(g, int(anchor), k, rng=rng)
        if idx is None:
            excluded += 1
            continue
        orig, pert = build_views(idx, g.adjacency, h, h_hat)
        usable.append(int(anchor))
        originals.append(orig)
        perturbed.append(pert)
    batch = assign_negatives(np.asarray(usable, dtype=np.int64), originals,
                             perturbed, num_negatives, seed)
    return batch, excluded
