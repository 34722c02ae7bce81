"""Verifier-side compilation and traversal of a draft tree.

The tree is flattened into a token sequence rooted at the bonus token,
annotated with depth position ids and an ancestor-only attention mask (each
entry may attend to the root, its ancestors, and itself). The verifier walk
then follows the target model's own decoding rule through the tree: a step is
accepted when the target's chosen token matches a child, and the first
unmatched target token becomes the next round's bonus. Cache compaction is an
index plan here; the synthetic targets are stateless-exact so no tensors move.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .treebuild import ROOT_PARENT, DraftTree


class DuplicateChildToken(ValueError):
    """Two children of one node carry the same token id."""


@dataclass(frozen=True)
class FlattenedTree:
    """Verifier-ready layout: root (bonus token) at index 0, nodes after.

    ``mask[i, j]`` is True iff j == i or j is a strict ancestor of i (the root
    counts as an ancestor of every entry). Parents always precede children in
    the flattened order, so the mask is lower-triangular.
    """

    token_ids: tuple[int, ...]
    position_offsets: tuple[int, ...]  # depth of each entry; root is 0
    mask: np.ndarray  # (n, n) bool, read-only
    parent_of: tuple[int, ...]  # flattened parent index; -1 for the root slot
    children_of: tuple[dict[int, int], ...]  # per entry: child token -> index

    def __len__(self) -> int:
        return len(self.token_ids)

    def path_tokens(self, index: int) -> list[int]:
        """Drafted tokens from just below the root down to ``index``."""
        path: list[int] = []
        while index > 0:
            path.append(self.token_ids[index])
            index = self.parent_of[index]
        path.reverse()
        return path


@dataclass(frozen=True)
class RoundOutcome:
    accepted_tokens: tuple[int, ...]
    acceptance_length: int
    next_bonus: int
    keep_indices: tuple[int, ...]  # root followed by the accepted path, in depth order


def duplicate_child_guard(tree: DraftTree) -> DraftTree:
    """Assert no node has two children with the same token id.

    Impossible for trees built from distinct prefixes; the guard turns a
    latent construction bug into a loud error before the walk would silently
    pick one child.
    """
    seen: set[tuple[int, int]] = set()
    for node in tree.nodes:
        key = (node.parent, node.token_id)
        if key in seen:
            raise DuplicateChildToken(
                f"parent {node.parent} has duplicate child token {node.token_id}"
            )
        seen.add(key)
    return tree


def flatten(tree: DraftTree, bonus: int) -> FlattenedTree:
    """Compile a tree into verifier inputs, root-first.

    Node order is taken as-is (builder pop order already places every parent
    before its children; that is asserted, not re-sorted).
    """
    duplicate_child_guard(tree)
    n = len(tree.nodes) + 1
    token_ids = [bonus]
    position_offsets = [0]
    parent_of = [ROOT_PARENT]
    for i, node in enumerate(tree.nodes):
        flat_parent = 0 if node.parent == ROOT_PARENT else node.parent + 1
        assert flat_parent < i + 1, "parent must precede child in node order"
        token_ids.append(node.token_id)
        position_offsets.append(node.depth)
        parent_of.append(flat_parent)

    mask = np.zeros((n, n), dtype=bool)
    mask[0, 0] = True
    for i in range(1, n):
        mask[i] = mask[parent_of[i]]
        mask[i, i] = True
    mask.flags.writeable = False

    children: list[dict[int, int]] = [{} for _ in range(n)]
    for i in range(1, n):
        children[parent_of[i]][token_ids[i]] = i

    return FlattenedTree(
        token_ids=tuple(token_ids),
        position_offsets=tuple(position_offsets),
        mask=mask,
        parent_of=tuple(parent_of),
        children_of=tuple(children),
    )


def verifier_walk(flat: FlattenedTree, decode: Callable[[int], int]) -> RoundOutcome:
    """Walk the tree under the target's decoding rule.

    ``decode(i)`` must return the target-chosen token at flattened entry
    ``i``, conditioned on the path from the context through that entry. The
    walk starts at the root and descends while the chosen token matches a
    child; the first unmatched token is the next bonus. With a greedy decode
    the walk is a pure function.
    """
    index = 0
    accepted: list[int] = []
    keep = [0]
    while True:
        chosen = decode(index)
        child = flat.children_of[index].get(chosen)
        if child is None:
            return RoundOutcome(
                accepted_tokens=tuple(accepted),
                acceptance_length=len(accepted),
                next_bonus=chosen,
                keep_indices=tuple(keep),
            )
        accepted.append(chosen)
        keep.append(child)
        index = child


def compaction_plan(outcome: RoundOutcome, flat: FlattenedTree) -> tuple[int, ...]:
    """Indices to retain in the cache: root plus the accepted path, in depth order.

    Recomputed from the accepted tokens so it can cross-check the outcome's
    own ``keep_indices``.
    """
    keep = [0]
    index = 0
    for token in outcome.accepted_tokens:
        index = flat.children_of[index][token]
        keep.append(index)
    return tuple(keep)


def round_trace_record(
    round_index: int, budget: int, tree_size: int, outcome: RoundOutcome
) -> dict:
    """One line-delimited trace record for a completed round."""
    return {
        "round_index": round_index,
        "budget": budget,
        "tree_size": tree_size,
        "acceptance_length": outcome.acceptance_length,
        "next_bonus": outcome.next_bonus,
        "kept_indices": list(outcome.keep_indices),
    }
