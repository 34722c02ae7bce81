"""Round-by-round speculative decoding episodes over synthetic targets.

Each round: take the current bonus token, query the drafter once for block
marginals, build a tree (or a chain, or skip drafting entirely in baseline
mode), walk it under the target's decoding rule, commit the accepted path plus
the next bonus, and repeat.

RNG discipline: every target decision is keyed by its absolute output
position. The token at output position t is decided from a uniform derived
only from (episode seed, t), whether that decision happens inside a tree walk
or in a plain autoregressive loop. Committed streams are therefore
token-identical across modes at any temperature, which makes losslessness an
exact equality test rather than a distributional claim.

``max_new_tokens`` budgets the tokens committed by verification rounds; the
initial prefill token (round 1's bonus) is produced before any round and does
not count against it.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .models import DrafterConfig, NgramModel, drafter_marginals, target_next
from .treebuild import build_tree, chain_tree
from .verify import (
    FlattenedTree,
    RoundOutcome,
    flatten,
    round_trace_record,
    verifier_walk,
)

MODES = ("tree", "chain", "baseline")

_POSITION_STREAM = 0
_PROMPT_STREAM = 1


class NonPositiveCost(ValueError):
    """Cost model parameters outside their valid range."""


@dataclass(frozen=True)
class CostModel:
    """Parameterized round-cost model for speedup estimates.

    An invented stand-in for wall-clock measurement: one target forward costs
    ``t_target``; a speculative round costs one drafter pass plus a verify
    pass whose cost grows linearly in the number of tree nodes.
    """

    t_target: float = 1.0
    t_draft: float = 0.1
    t_verify_base: float = 1.0
    kappa: float = 0.002

    def __post_init__(self) -> None:
        if self.t_target <= 0.0 or self.t_verify_base <= 0.0:
            raise NonPositiveCost("t_target and t_verify_base must be > 0")
        if self.t_draft < 0.0 or self.kappa < 0.0:
            raise NonPositiveCost("t_draft and kappa must be >= 0")


DEFAULT_COST = CostModel()


def estimate_speedup(mean_tau: float, budget: int, cost: CostModel = DEFAULT_COST) -> float:
    """Estimated speedup over plain autoregressive decoding.

    mean_tau tokens per round, each worth one target pass, against the cost
    of one round: a draft pass plus verification of ``budget`` tree nodes.
    Non-monotone in the budget once mean_tau saturates.
    """
    return mean_tau * cost.t_target / (
        cost.t_draft + cost.t_verify_base * (1.0 + cost.kappa * budget)
    )


@dataclass(frozen=True)
class EpisodeConfig:
    seed: int
    max_new_tokens: int
    prompt_len: int = 8
    temperature: float = 0.0
    budget: int = 64
    block_len: int = 16
    mode: str = "tree"
    drafter_noise: float = 0.3
    eos_token: int | None = None
    max_rounds: int | None = None
    collect_trace: bool = False

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if self.prompt_len < 1:
            raise ValueError("prompt_len must be >= 1")
        if self.temperature < 0.0:
            raise ValueError("temperature must be >= 0")
        if self.mode != "baseline" and self.budget < 1:
            raise ValueError("budget must be >= 1 for speculative modes")
        if self.block_len < 1:
            raise ValueError("block_len must be >= 1")
        if not 0.0 <= self.drafter_noise <= 1.0:
            raise ValueError("drafter_noise must lie in [0, 1]")


@dataclass(frozen=True)
class EpisodeStats:
    """Per-episode acceptance statistics.

    ``tau_histogram[k-1]`` counts rounds that committed exactly k tokens
    (accepted drafted tokens plus the bonus), k in 1..block_len+1. mean_tau is
    committed_tokens / rounds.
    """

    rounds: int
    committed_tokens: int
    mean_tau: float
    tau_histogram: tuple[int, ...]
    est_speedup: float


@dataclass(frozen=True)
class EpisodeResult:
    stats: EpisodeStats
    tokens: tuple[int, ...]  # prefill token followed by all round commits
    trace: tuple[dict, ...]


def _position_uniform(seed: int, position: int) -> float:
    """The uniform that decides output position ``position`` for this seed."""
    return float(np.random.default_rng([seed, _POSITION_STREAM, position]).random())


def make_prompt(model: NgramModel, seed: int, prompt_len: int) -> tuple[int, ...]:
    """Seeded prompt over non-pad tokens."""
    rng = np.random.default_rng([seed, _PROMPT_STREAM])
    return tuple(int(t) for t in rng.integers(1, model.vocab_size, size=prompt_len))


def decode_next(
    model: NgramModel, context: Sequence[int], temperature: float, u: float | None
) -> int:
    """The target's decoding rule: greedy argmax or temperature sampling.

    Sampling consumes exactly one uniform ``u`` via the inverse CDF of the
    temperature-scaled row; temperature 1.0 uses the row as-is.
    """
    row = target_next(model, context)
    if temperature == 0.0:
        return int(np.argmax(row))
    if u is None:
        raise ValueError("sampling requires a uniform draw")
    weights = row if temperature == 1.0 else row ** (1.0 / temperature)
    cdf = np.cumsum(weights)
    return min(int(np.searchsorted(cdf, u * cdf[-1], side="right")), model.vocab_size - 1)


def _effective_budget(cfg: EpisodeConfig) -> int:
    return cfg.budget if cfg.mode == "tree" else cfg.block_len


def run_episode(model: NgramModel, cfg: EpisodeConfig) -> EpisodeResult:
    """Run one full decoding episode and collect acceptance statistics."""
    prompt = make_prompt(model, cfg.seed, cfg.prompt_len)
    drafter_cfg = DrafterConfig(noise=cfg.drafter_noise, block_len=cfg.block_len)

    def decide(context: Sequence[int], position: int) -> int:
        u = None if cfg.temperature == 0.0 else _position_uniform(cfg.seed, position)
        return decode_next(model, context, cfg.temperature, u)

    generated: list[int] = [decide(prompt, 0)]  # prefill bonus, output position 0
    hist = [0] * (cfg.block_len + 1)
    rounds = 0
    committed = 0
    trace: list[dict] = []
    done = cfg.eos_token is not None and generated[0] == cfg.eos_token

    while committed < cfg.max_new_tokens and not done:
        if cfg.max_rounds is not None and rounds >= cfg.max_rounds:
            break
        base_position = len(generated)
        if cfg.mode == "baseline":
            chosen = decide(prompt + tuple(generated), base_position)
            round_tokens = [chosen]
            tree_size = 0
            outcome = RoundOutcome(
                accepted_tokens=(), acceptance_length=0,
                next_bonus=chosen, keep_indices=(0,),
            )
        else:
            context = tuple(generated[:-1])
            bonus = generated[-1]
            block = drafter_marginals(model, prompt + context, bonus, drafter_cfg)
            tree = (
                build_tree(block, cfg.budget) if cfg.mode == "tree" else chain_tree(block)
            )
            flat = flatten(tree, bonus)

            def decode(index: int, _flat: FlattenedTree = flat) -> int:
                path = _flat.path_tokens(index)
                position = base_position + _flat.position_offsets[index]
                return decide(prompt + tuple(generated) + tuple(path), position)

            outcome = verifier_walk(flat, decode)
            round_tokens = list(outcome.accepted_tokens) + [outcome.next_bonus]
            tree_size = len(tree)

        remaining = cfg.max_new_tokens - committed
        round_tokens = round_tokens[:remaining]
        if cfg.eos_token is not None and cfg.eos_token in round_tokens:
            round_tokens = round_tokens[: round_tokens.index(cfg.eos_token) + 1]
            done = True

        generated.extend(round_tokens)
        committed += len(round_tokens)
        rounds += 1
        hist[len(round_tokens) - 1] += 1
        if cfg.collect_trace:
            # Walk-level values: a tail round truncated by the token budget
            # still records what verification produced.
            trace.append(
                round_trace_record(rounds - 1, _effective_budget(cfg), tree_size, outcome)
            )

    mean_tau = committed / rounds if rounds else 0.0
    if cfg.mode == "baseline":
        speedup = 1.0  # baseline is the autoregressive reference itself
    else:
        speedup = estimate_speedup(mean_tau, _effective_budget(cfg))
    stats = EpisodeStats(
        rounds=rounds,
        committed_tokens=committed,
        mean_tau=mean_tau,
        tau_histogram=tuple(hist),
        est_speedup=speedup,
    )
    return EpisodeResult(stats=stats, tokens=tuple(generated), trace=tuple(trace))


@dataclass(frozen=True)
class AggregateStats:
    """Stats pooled over several episodes of one configuration."""

    episodes: int
    rounds: int
    committed_tokens: int
    mean_tau: float
    tau_histogram: tuple[int, ...]
    est_speedup: float


def episode_seed(base_seed: int, episode_index: int) -> int:
    """Derived per-episode seed, identical across budgets and modes."""
    return int(np.random.SeedSequence([base_seed, episode_index]).generate_state(1)[0])


def _episode_stats_task(args: tuple[NgramModel, EpisodeConfig]) -> EpisodeStats:
    model, cfg = args
    return run_episode(model, cfg).stats


def run_episodes(
    model: NgramModel, cfg: EpisodeConfig, episodes: int, workers: int = 1
) -> AggregateStats:
    """Run ``episodes`` seeded episodes of one config and pool their stats.

    Episode seeds derive from (cfg.seed, episode index). With workers > 1 the
    episodes run in a process pool; episodes are pure functions of their
    inputs and results are reduced in episode order, so output is identical to
    serial execution.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    configs = [replace(cfg, seed=episode_seed(cfg.seed, i)) for i in range(episodes)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            stats = list(pool.map(_episode_stats_task, [(model, c) for c in configs]))
    else:
        stats = [run_episode(model, c).stats for c in configs]

    rounds = sum(s.rounds for s in stats)
    committed = sum(s.committed_tokens for s in stats)
    hist = tuple(
        sum(s.tau_histogram[i] for s in stats) for i in range(cfg.block_len + 1)
    )
    mean_tau = committed / rounds if rounds else 0.0
    if cfg.mode == "baseline":
        speedup = 1.0
    else:
        speedup = estimate_speedup(mean_tau, _effective_budget(cfg))
    return AggregateStats(
        episodes=episodes,
        rounds=rounds,
        committed_tokens=committed,
        mean_tau=mean_tau,
        tau_histogram=hist,
        est_speedup=speedup,
    )


@dataclass(frozen=True)
class SweepRow:
    budget: int
    stats: AggregateStats


def budget_sweep(
    model: NgramModel,
    base_cfg: EpisodeConfig,
    budgets: Sequence[int],
    episodes: int = 1,
    workers: int = 1,
) -> list[SweepRow]:
    """Tree-mode episodes per budget with identical episode seeds throughout."""
    if not budgets:
        raise ValueError("budgets must be nonempty")
    if list(budgets) != sorted(budgets):
        raise ValueError("budgets must be sorted ascending")
    rows = []
    for budget in budgets:
        cfg = replace(base_cfg, mode="tree", budget=int(budget))
        rows.append(SweepRow(budget=int(budget), stats=run_episodes(model, cfg, episodes, workers)))
    return rows


def default_workers() -> int:
    """Available parallelism, used as the worker-count default."""
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)
