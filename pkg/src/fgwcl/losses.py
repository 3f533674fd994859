"""Self-supervised objective: subgraph transport contrast, node-level
InfoNCE (full and union-restricted), and the fusion gate regularizer.

The transport term treats each solved plan as a constant and re-expresses
the distance through taped cost matrices, so gradients reach the
embeddings without differentiating through the solver iterations.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import reduce
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .kernels import KernelBackend
from .ot import FgwConfig, bapg_fgwd, build_cost_matrices, fgw_objective
from .sampling import ContrastBatch, MeasuredSubgraph


def pair_distance(a: MeasuredSubgraph, b: MeasuredSubgraph, cfg: FgwConfig,
                  backend: Optional[KernelBackend] = None) -> Tensor:
    """Taped transport distance between two measured subgraphs."""
    costs = build_cost_matrices(a.a_slice, b.a_slice, a.h_slice, b.h_slice,
                                cfg.tau)
    plan = bapg_fgwd(costs, a.mu, b.mu, cfg, backend)
    return fgw_objective(costs, plan.P, cfg.alpha)


def _pair_distances(pairs, cfg, backend, threads,
                    plans=None) -> list[Tensor]:
    """Distances for (a, b) pairs; the solver calls may run on a pool
    (tensors are immutable during solves), results keep pair order.
    Pre-solved plans skip the solver and hold the couplings fixed."""
    costs = [build_cost_matrices(a.a_slice, b.a_slice, a.h_slice, b.h_slice,
                                 cfg.tau) for a, b in pairs]
    if plans is None:
        plans = _solve_pairs(costs, pairs, cfg, backend, threads)
    elif len(plans) != len(pairs):
        raise ValueError(f"got {len(plans)} plans for {len(pairs)} pairs")
    return [fgw_objective(c, plan.P, cfg.alpha)
            for c, plan in zip(costs, plans)]


def _solve_pairs(costs, pairs, cfg, backend, threads):
    def solve(item):
        c, (a, b) = item
        return bapg_fgwd(c, a.mu, b.mu, cfg, backend)

    work = list(zip(costs, pairs))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(solve, work))
    return [solve(item) for item in work]


def _batch_pairs(batch: ContrastBatch) -> list:
    """Flat (anchor, partner) list: each positive then its negatives."""
    pairs = []
    for i in range(batch.anchors.size):
        pairs.append((batch.originals[i], batch.perturbed[i]))
        for neg in batch.negatives[i]:
            pairs.append((batch.originals[i], neg))
    return pairs


def solve_batch_plans(batch: ContrastBatch, cfg: FgwConfig,
                      backend: Optional[KernelBackend] = None,
                      threads: int = 1) -> list:
    """Solved transport plans for every pair the batch loss uses, in the
    order loss_ot consumes them. The plans are constants with respect to
    the embeddings, so callers can re-evaluate the loss at perturbed
    parameters while keeping the couplings fixed."""
    pairs = _batch_pairs(batch)
    costs = [build_cost_matrices(a.a_slice, b.a_slice, a.h_slice, b.h_slice,
                                 cfg.tau) for a, b in pairs]
    return _solve_pairs(costs, pairs, cfg, backend, threads)


def ot_loss_from_distances(positives: Sequence[Tensor],
                           negatives: Sequence[Sequence[Tensor]],
                           tau: float) -> Tensor:
    """-1/(S(M+1)) sum_i [log sig(exp(-d_pos/tau))
    + sum_j log(1 - sig(exp(-d_neg_j/tau)))] over S anchors."""
    s = len(positives)
    if s == 0 or len(negatives) != s:
        raise ValueError("need matching positive and negative lists")
    m = len(negatives[0])
    if any(len(negs) != m for negs in negatives):
        raise ValueError("every anchor needs the same number of negatives")
    neg_inv_tau = ad.constant(-1.0 / tau)
    one = ad.constant(1.0)
    total = None
    for d_pos, d_negs in zip(positives, negatives):
        term = ad.log(ad.sigmoid(ad.exp(ad.mul(d_pos, neg_inv_tau))))
        for d in d_negs:
            score = ad.sigmoid(ad.exp(ad.mul(d, neg_inv_tau)))
            term = ad.add(term, ad.log(ad.sub(one, score)))
        total = term if total is None else ad.add(total, term)
    return ad.mul(ad.constant(-1.0 / (s * (m + 1))), total)


def loss_ot(batch: Optional[ContrastBatch], cfg: FgwConfig,
            backend: Optional[KernelBackend] = None,
            threads: int = 1, plans=None) -> Optional[Tensor]:
    """Subgraph contrastive loss; None signals the caller to skip it."""
    if batch is None or batch.anchors.size < 2:
        return None
    s = batch.anchors.size
    pairs = _batch_pairs(batch)
    dists = _pair_distances(pairs, cfg, backend, threads, plans)
    per = 1 + len(batch.negatives[0])
    positives = [dists[i * per] for i in range(s)]
    negs = [dists[i * per + 1:(i + 1) * per] for i in range(s)]
    return ot_loss_from_distances(positives, negs, cfg.tau)


def _nce_direction(anchors: Tensor, others: Tensor, tau: float) -> Tensor:
    """sum_i log(exp(s(a_i,b_i)/tau) / (intra-negatives + cross terms))."""
    inv_tau = ad.constant(1.0 / tau)
    e_cross = ad.exp(ad.mul(ad.cosine_matrix(anchors, others), inv_tau))
    e_intra = ad.exp(ad.mul(ad.cosine_matrix(anchors, anchors), inv_tau))
    pos = ad.diag_part(e_cross)
    denom = ad.add(ad.sum_rows(e_cross),
                   ad.sub(ad.sum_rows(e_intra), ad.diag_part(e_intra)))
    return ad.sum_all(ad.log(ad.div(pos, denom)))


def loss_node(h: Tensor, h_hat: Tensor, tau: float) -> Tensor:
    """Symmetrized InfoNCE over all nodes; builds N x N similarities."""
    if h.shape != h_hat.shape:
        raise ValueError(f"view shapes differ: {h.shape} vs {h_hat.shape}")
    n = h.shape[0]
    both = ad.add(_nce_direction(h, h_hat, tau),
                  _nce_direction(h_hat, h, tau))
    return ad.mul(ad.constant(-1.0 / (2 * n)), both)


def loss_node_v2(h: Tensor, h_hat: Tensor, union_indices,
                 tau: float) -> Optional[Tensor]:
    """Node loss restricted to the sampled subgraph nodes.

    The index list is used as given (a node sampled by several subgraphs
    contributes once per occurrence), so the similarity buffers are
    exactly len(indices) x len(indices) regardless of graph size."""
    idx = np.asarray(union_indices, dtype=np.int64).ravel()
    if idx.size == 0:
        return None
    return loss_node(ad.gather_rows(h, idx), ad.gather_rows(h_hat, idx),
                     tau)


def batch_indices(batch: Optional[ContrastBatch]) -> np.ndarray:
    """Concatenated node ids of all subgraphs in the batch, in anchor
    order, duplicates kept (the restricted node loss uses this)."""
    if batch is None or not batch.originals:
        return np.empty(0, dtype=np.int64)
    return np.concatenate([v.indices for v in batch.originals])


def batch_union(batch: Optional[ContrastBatch]) -> np.ndarray:
    """Sorted unique node ids covered by the batch (reporting helper)."""
    return np.unique(batch_indices(batch))


def rowwise_cosine(a: Tensor, b: Tensor) -> Tensor:
    """Per-row cosine similarity as an (n, 1) column (no n x n buffer)."""
    return ad.sum_rows(ad.mul(ad.l2_normalize_rows(a),
                              ad.l2_normalize_rows(b)))


def loss_fusion(lam: Tensor, h_s: Tensor, h_f: Tensor, alpha: float,
                beta1: float, beta2: float = 1.0) -> Tensor:
    """sum_i lam_i s(h_s_i, h_f_i) + beta1 ||lam||_2
    + beta2 |mean(lam) - (1 - alpha)|."""
    if lam.shape != (h_s.shape[0], 1):
        raise ValueError(f"gate must be (n, 1), got {lam.shape}")
    sims = rowwise_cosine(h_s, h_f)
    separate = ad.sum_all(ad.mul(lam, sims))
    norm = ad.sqrt(ad.sum_all(ad.mul(lam, lam)))
    align = ad.abs_(ad.sub(ad.mean_all(lam), ad.constant(1.0 - alpha)))
    return ad.add(separate, ad.add(ad.mul(ad.constant(beta1), norm),
                                   ad.mul(ad.constant(beta2), align)))


@dataclass
class LossBreakdown:
    """Scalar parts plus bookkeeping; skipped parts contribute zero."""

    l_ot: Optional[Tensor]
    l_node: Optional[Tensor]
    l_fusion: Optional[Tensor]
    total: Tensor
    anchors_used: int
    anchors_excluded: int
    skipped: tuple[str, ...]


def total_loss(l_ot: Optional[Tensor], l_node: Optional[Tensor],
               l_fusion: Optional[Tensor], anchors_used: int = 0,
               anchors_excluded: int = 0) -> LossBreakdown:
    parts = {"ot": l_ot, "node": l_node, "fusion": l_fusion}
    skipped = tuple(name for name, part in parts.items() if part is None)
    live = [part for part in parts.values() if part is not None]
    total = reduce(ad.add, live) if live else ad.constant(0.0)
    return LossBreakdown(l_ot=l_ot, l_node=l_node, l_fusion=l_fusion,
                         total=total, anchors_used=anchors_used,
                         anchors_excluded=anchors_excluded, skipped=skipped)
