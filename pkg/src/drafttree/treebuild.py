"""Best-first construction of budgeted draft trees from block marginals.

A draft tree is a prefix-closed set of candidate continuations hanging off the
current bonus token. Because the surrogate objective (expected acceptance
length under the factorized draft distribution) is an additive sum of prefix
masses, the optimal tree under a node budget B is simply the B
highest-mass prefixes, and that set is automatically prefix-closed since every
ancestor strictly dominates its descendants.

``build_tree`` recovers those B prefixes lazily: prefixes are indexed by
per-depth probability ranks, and a max-heap enumerates rank tuples in
nonincreasing score order, pushing at most two successors per pop (the next
sibling, which bumps the last rank, and the first child, which appends rank 1
at the next depth). The heap stage therefore does at most B pops and 2B
pushes.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .distributions import MarginalBlock, Prefix, log_prefix_mass

# Rank tuples are 1-based per-depth probability ranks; (1, 3) means the most
# probable token at depth 1 followed by the third most probable at depth 2.
RankTuple = tuple[int, ...]

ROOT_PARENT = -1

# Incremental heap scores may drift from a direct log-mass recomputation by
# accumulated rounding only; anything larger is a bug.
SCORE_DRIFT_TOL = 1e-9


@dataclass(frozen=True)
class TreeNode:
    token_id: int
    depth: int
    parent: int  # index into the node list; ROOT_PARENT for depth-1 nodes
    log_mass: float


@dataclass(frozen=True)
class DraftTree:
    """Prefix-closed candidate tree in pop order (nonincreasing log mass).

    ``surrogate_value`` is the sum of exp(log_mass) over all nodes, i.e. the
    expected acceptance length under the factorized draft distribution.
    ``heap_pops``/``heap_pushes`` count the builder's heap operations
    (successor insertions only; the initial seed entry is not counted) and are
    zero for trees not produced by ``build_tree``.
    """

    nodes: tuple[TreeNode, ...]
    budget_used: int
    surrogate_value: float
    heap_pops: int = 0
    heap_pushes: int = 0

    def __len__(self) -> int:
        return len(self.nodes)


class RankedDepths(NamedTuple):
    """Per-depth top-K tokens: ``token_ids[i, k]`` is the rank-(k+1) token."""

    token_ids: np.ndarray  # (L, K) int64
    probs: np.ndarray  # (L, K) float64


def top_k_per_depth(block: MarginalBlock, budget: int) -> RankedDepths:
    """Rank each depth's tokens by descending probability, ties by token id.

    Only the top K = min(budget, vocab_size) tokens per depth can appear in an
    optimal tree, so deeper ranks are dropped.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    k = min(budget, block.vocab_size)
    ids = np.arange(block.vocab_size)
    token_ids = np.empty((block.block_len, k), dtype=np.int64)
    probs = np.empty((block.block_len, k), dtype=np.float64)
    for i in range(block.block_len):
        order = np.lexsort((ids, -block.probs[i]))[:k]
        token_ids[i] = order
        probs[i] = block.probs[i, order]
    return RankedDepths(token_ids=token_ids, probs=probs)


def _make_tree(nodes: Sequence[TreeNode], pops: int = 0, pushes: int = 0) -> DraftTree:
    return DraftTree(
        nodes=tuple(nodes),
        budget_used=len(nodes),
        surrogate_value=math.fsum(math.exp(n.log_mass) for n in nodes),
        heap_pops=pops,
        heap_pushes=pushes,
    )


def _direct_score(logq: np.ndarray, ranks: RankTuple) -> float:
    return math.fsum(float(logq[i, r - 1]) for i, r in enumerate(ranks))


def build_tree(block: MarginalBlock, budget: int) -> DraftTree:
    """Best-first construction of the optimal draft tree under ``budget`` nodes.

    Pops rank tuples from a max-heap in nonincreasing score order until the
    budget is filled or the heap runs dry (possible only when the whole
    restricted prefix space is smaller than the budget). Heap keys break score
    ties deterministically: shallower depth first, then lexicographically
    smaller rank tuple. Sibling scores are updated by swapping the last rank's
    log factor; child scores append the next depth's best log factor.
    """
    ranked = top_k_per_depth(block, budget)
    k = ranked.token_ids.shape[1]
    depth_cap = block.block_len
    logq = np.log(ranked.probs)

    # Heap entries: (-score, depth, ranks, parent node index). The first three
    # fields form a total order, so the parent payload never gets compared.
    heap: list[tuple[float, int, RankTuple, int]] = [
        (-float(logq[0, 0]), 1, (1,), ROOT_PARENT)
    ]
    nodes: list[TreeNode] = []
    pops = 0
    pushes = 0
    while len(nodes) < budget and heap:
        neg_score, depth, ranks, parent = heapq.heappop(heap)
        pops += 1
        score = -neg_score
        assert abs(score - _direct_score(logq, ranks)) <= SCORE_DRIFT_TOL
        index = len(nodes)
        last = ranks[-1]
        nodes.append(
            TreeNode(
                token_id=int(ranked.token_ids[depth - 1, last - 1]),
                depth=depth,
                parent=parent,
                log_mass=score,
            )
        )
        if last + 1 <= k:
            sibling_score = score - float(logq[depth - 1, last - 1]) + float(
                logq[depth - 1, last]
            )
            heapq.heappush(
                heap, (-sibling_score, depth, ranks[:-1] + (last + 1,), parent)
            )
            pushes += 1
        if depth < depth_cap:
            child_score = score + float(logq[depth, 0])
            heapq.heappush(heap, (-child_score, depth + 1, ranks + (1,), index))
            pushes += 1
    return _make_tree(nodes, pops=pops, pushes=pushes)


def chain_tree(block: MarginalBlock) -> DraftTree:
    """Single-trajectory baseline: the per-depth argmax path of length L.

    This is what a verifier sees when the drafter's block is collapsed to one
    continuation instead of a tree.
    """
    ranked = top_k_per_depth(block, 1)
    logq = np.log(ranked.probs)
    nodes: list[TreeNode] = []
    score = 0.0
    for depth in range(1, block.block_len + 1):
        score = score + float(logq[depth - 1, 0])
        nodes.append(
            TreeNode(
                token_id=int(ranked.token_ids[depth - 1, 0]),
                depth=depth,
                parent=depth - 2 if depth > 1 else ROOT_PARENT,
                log_mass=score,
            )
        )
    return _make_tree(nodes)


def surrogate_value(tree: DraftTree) -> float:
    """Sum of prefix masses over all nodes: the expected acceptance length
    under the factorized draft distribution."""
    return math.fsum(math.exp(n.log_mass) for n in tree.nodes)


def node_prefixes(tree: DraftTree) -> list[tuple[int, ...]]:
    """Token prefix represented by each node, in node order."""
    prefixes: list[tuple[int, ...]] = []
    for node in tree.nodes:
        if node.parent == ROOT_PARENT:
            prefixes.append((node.token_id,))
        else:
            prefixes.append(prefixes[node.parent] + (node.token_id,))
    return prefixes


def tree_from_prefixes(block: MarginalBlock, prefixes: Iterable[Prefix]) -> DraftTree:
    """Build a DraftTree from an explicit prefix set (must be prefix-closed).

    Nodes are ordered by descending log mass with ties broken by depth then
    tokens, so parents always precede children (ancestor masses strictly
    dominate). Intended for oracle output and hand-built test trees.
    """
    unique = sorted(
        {tuple(p) for p in prefixes},
        key=lambda u: (-log_prefix_mass(block, u), len(u), u),
    )
    index = {u: i for i, u in enumerate(unique)}
    nodes: list[TreeNode] = []
    for i, u in enumerate(unique):
        if not u:
            raise ValueError("prefixes must be nonempty")
        if len(u) == 1:
            parent = ROOT_PARENT
        else:
            parent = index.get(u[:-1], None)
            if parent is None:
                raise ValueError(f"prefix {u} is missing its parent; set is not prefix-closed")
            if parent >= i:
                raise ValueError(f"parent of {u} does not precede it")
        nodes.append(
            TreeNode(
                token_id=u[-1],
                depth=len(u),
                parent=parent,
                log_mass=log_prefix_mass(block, u),
            )
        )
    return _make_tree(nodes)


def check_prefix_closed(tree: DraftTree) -> bool:
    """True iff every non-depth-1 node has a parent one level up."""
    for node in tree.nodes:
        if node.depth == 1:
            if node.parent != ROOT_PARENT:
                return False
        else:
            if not 0 <= node.parent < len(tree.nodes):
                return False
            if tree.nodes[node.parent].depth != node.depth - 1:
                return False
    return True


def check_ancestor_dominance(tree: DraftTree) -> bool:
    """True iff every parent's log mass strictly exceeds its child's."""
    return all(
        tree.nodes[node.parent].log_mass > node.log_mass
        for node in tree.nodes
        if node.parent != ROOT_PARENT
    )
