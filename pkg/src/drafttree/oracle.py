"""Brute-force ground truth for tree construction on small instances.

Nothing here is clever on purpose: prefixes are enumerated exhaustively,
expected acceptance length is computed by summing over every possible
continuation, and the optimal tree is read off a fully sorted table. The heap
builder in ``treebuild`` is trusted only because it agrees with this module.

The table's sort order matches the builder's deterministic tie-break (higher
score, then shallower depth, then lexicographically smaller rank tuple), and
entry scores are computed with the same incremental log updates the heap uses,
so node sets can be compared exactly instead of only values. The ``mass``
field is an independent linear-domain product and is what value checks use.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .distributions import MarginalBlock
from .treebuild import (
    ROOT_PARENT,
    DraftTree,
    RankTuple,
    TreeNode,
    _make_tree,
    node_prefixes,
    top_k_per_depth,
    tree_from_prefixes,
)

PREFIX_GUARD = 10**6


class InstanceTooLarge(ValueError):
    """Instance exceeds the brute-force enumeration guard."""


@dataclass(frozen=True)
class TableEntry:
    tokens: tuple[int, ...]
    ranks: RankTuple
    mass: float  # exact product of marginals along the prefix
    log_score: float  # incremental log score, same arithmetic as the heap


@dataclass(frozen=True)
class ExhaustiveTable:
    block_len: int
    vocab_size: int
    entries: tuple[TableEntry, ...]


def _prefix_count(vocab_size: int, block_len: int) -> int:
    return sum(vocab_size**d for d in range(1, block_len + 1))


def enumerate_prefixes(block: MarginalBlock) -> ExhaustiveTable:
    """All nonempty prefixes of length <= L with exact masses, fully sorted."""
    total = _prefix_count(block.vocab_size, block.block_len)
    if total > PREFIX_GUARD:
        raise InstanceTooLarge(f"{total} prefixes exceed the guard of {PREFIX_GUARD}")

    ranked = top_k_per_depth(block, block.vocab_size)  # full ranking, K = |V|
    logq = np.log(ranked.probs)

    # Walk the sibling/child successor graph from (1); every rank tuple has a
    # unique predecessor so each prefix is visited exactly once.
    entries: list[TableEntry] = []
    queue: deque[tuple[RankTuple, float]] = deque([((1,), float(logq[0, 0]))])
    while queue:
        ranks, score = queue.popleft()
        depth = len(ranks)
        tokens = tuple(int(ranked.token_ids[i, r - 1]) for i, r in enumerate(ranks))
        mass = math.prod(float(ranked.probs[i, r - 1]) for i, r in enumerate(ranks))
        entries.append(TableEntry(tokens=tokens, ranks=ranks, mass=mass, log_score=score))
        last = ranks[-1]
        if last + 1 <= block.vocab_size:
            sibling = score - float(logq[depth - 1, last - 1]) + float(logq[depth - 1, last])
            queue.append((ranks[:-1] + (last + 1,), sibling))
        if depth < block.block_len:
            queue.append((ranks + (1,), score + float(logq[depth, 0])))
    assert len(entries) == total

    entries.sort(key=lambda e: (-e.log_score, len(e.ranks), e.ranks))
    return ExhaustiveTable(
        block_len=block.block_len, vocab_size=block.vocab_size, entries=tuple(entries)
    )


def optimal_tree_exhaustive(block: MarginalBlock, budget: int) -> DraftTree:
    """Optimal tree by sorting the full table and taking the first B entries.

    Prefix closure of the selected set is asserted rather than enforced: any
    strict ancestor has strictly larger mass, so it must already sit earlier
    in the table.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    table = enumerate_prefixes(block)
    chosen = table.entries[: min(budget, len(table.entries))]
    index: dict[tuple[int, ...], int] = {}
    nodes: list[TreeNode] = []
    for i, entry in enumerate(chosen):
        if len(entry.tokens) == 1:
            parent = ROOT_PARENT
        else:
            parent_key = entry.tokens[:-1]
            assert parent_key in index, "top-B selection lost an ancestor"
            parent = index[parent_key]
        index[entry.tokens] = i
        nodes.append(
            TreeNode(
                token_id=entry.tokens[-1],
                depth=len(entry.tokens),
                parent=parent,
                log_mass=entry.log_score,
            )
        )
    return _make_tree(nodes)


def expected_acceptance_exact(block: MarginalBlock, tree: DraftTree) -> float:
    """Expected acceptance length by summing over every continuation.

    Enumerates all |V|^L continuations, weighs each by its product
    probability, and scores how deep it stays inside the tree. This is the
    definition of the objective, independent of the additive
    sum-of-prefix-masses shortcut, so agreement with ``surrogate_value`` is an
    executable proof of that identity.
    """
    n_cont = block.vocab_size**block.block_len
    if n_cont > PREFIX_GUARD:
        raise InstanceTooLarge(f"{n_cont} continuations exceed the guard of {PREFIX_GUARD}")

    grid = np.indices((block.vocab_size,) * block.block_len).reshape(block.block_len, -1).T
    weights = np.ones(n_cont, dtype=np.float64)
    for i in range(block.block_len):
        weights *= block.probs[i, grid[:, i]]

    # Encode prefixes as base-V integers per depth, then count how many
    # leading depths of each continuation appear in the tree.
    tree_codes: list[set[int]] = [set() for _ in range(block.block_len)]
    for prefix in node_prefixes(tree):
        code = 0
        for tok in prefix:
            code = code * block.vocab_size + tok
        tree_codes[len(prefix) - 1].add(code)

    alive = np.ones(n_cont, dtype=bool)
    alpha = np.zeros(n_cont, dtype=np.float64)
    codes = np.zeros(n_cont, dtype=np.int64)
    for d in range(block.block_len):
        codes = codes * block.vocab_size + grid[:, d]
        if tree_codes[d]:
            members = np.isin(codes, np.fromiter(tree_codes[d], dtype=np.int64))
        else:
            members = np.zeros(n_cont, dtype=bool)
        alive &= members
        alpha += alive
    return float(np.dot(weights, alpha))


def random_valid_tree(
    block: MarginalBlock, budget: int, rng: np.random.Generator
) -> DraftTree:
    """Grow a random prefix-closed tree of up to ``budget`` nodes.

    Used by property suites that need arbitrary valid trees, not only optimal
    ones. Repeatedly promotes a uniformly chosen frontier prefix (a child of
    the current tree or a fresh depth-1 token) into the tree.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    frontier: list[tuple[int, ...]] = [(t,) for t in range(block.vocab_size)]
    chosen: list[tuple[int, ...]] = []
    while frontier and len(chosen) < budget:
        pick = int(rng.integers(len(frontier)))
        frontier[pick], frontier[-1] = frontier[-1], frontier[pick]
        prefix = frontier.pop()
        chosen.append(prefix)
        if len(prefix) < block.block_len:
            frontier.extend(prefix + (t,) for t in range(block.vocab_size))
    return tree_from_prefixes(block, chosen)
