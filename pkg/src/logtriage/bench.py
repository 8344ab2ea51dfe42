"""Desk-scale measurement harness: analysis throughput, recovery steps, and
localization accuracy.

Recovery time is reported in environment steps rather than wall seconds so
results do not depend on host hardware; throughput pins the work to the
calling thread so numbers stay comparable across runs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import planner as pl
from .envsim import ClusterSim
from .ingest import tokenize
from .reasoner import FaultReasoner, RootCauseScores
from .templates import TemplateEncoder

MIN_LAT_CORPUS = 1000


class BenchConfigError(ValueError):
    """Measurement preconditions not met (corpus too small, too few seeds)."""


@dataclass
class BenchReport:
    records_per_second: float
    config_hash: str
    wall_clock: float
    mean_recovery_steps: Optional[float] = None
    baseline_recovery_steps: Optional[float] = None
    localization_top1: Optional[float] = None
    localization_top3: Optional[float] = None
    notes: str = "recovery reported in environment steps, not wall seconds"

    def rows(self) -> dict:
        return {
            "records_per_second": self.records_per_second,
            "mean_recovery_steps": self.mean_recovery_steps,
            "baseline_recovery_steps": self.baseline_recovery_steps,
            "localization_top1": self.localization_top1,
            "localization_top3": self.localization_top3,
            "config_hash": self.config_hash,
            "wall_clock": self.wall_clock,
        }


def chunk_tokens(tokens: list[list[str]], sequence_length: int, min_tail: int = 8) -> list[list[list[str]]]:
    """Split a token stream into fixed-length sequences. A final remainder
    shorter than min_tail is folded into the previous chunk so every chunk
    stays long enough for the window scales."""
    chunks = [tokens[i : i + sequence_length] for i in range(0, len(tokens), sequence_length)]
    if len(chunks) > 1 and len(chunks[-1]) < min_tail:
        tail = chunks.pop()
        chunks[-1] = chunks[-1] + tail
    return chunks


def chunk_messages(messages: list[str], sequence_length: int) -> list[list[list[str]]]:
    """Tokenize and split a message stream into fixed-length sequences."""
    return chunk_tokens([tokenize(m) for m in messages], sequence_length)


def measure_lat(
    messages: list[str],
    encoder: TemplateEncoder,
    reasoner: FaultReasoner,
    sequence_length: int = 64,
    repetitions: int = 3,
    stage: str = "full",
) -> dict:
    """Median records/second over `repetitions` timed passes (plus one
    untimed warm-up) through tokenize -> embed -> template -> reasoner.

    `stage` limits the pipeline: 'ingest' stops after tokenization,
    'template' after template encoding, 'full' adds root-cause scoring.
    """
    if len(messages) < MIN_LAT_CORPUS:
        raise BenchConfigError(
            f"throughput corpus needs >= {MIN_LAT_CORPUS} records, got {len(messages)}"
        )
    if stage not in ("ingest", "template", "full"):
        raise BenchConfigError(f"unknown stage {stage!r}")

    def one_pass() -> None:
        seqs = chunk_messages(messages, sequence_length)
        if stage == "ingest":
            return
        mats = encoder.transform(seqs)
        if stage == "template":
            return
        for mat in mats:
            reasoner.score_events(mat)

    one_pass()  # warm-up, excluded
    rates = []
    for _ in range(repetitions):
        start = time.perf_counter()
        one_pass()
        elapsed = time.perf_counter() - start
        rates.append(len(messages) / elapsed)
    return {
        "records_per_second": float(np.median(rates)),
        "rates": rates,
        "repetitions": repetitions,
        "records": len(messages),
        "stage": stage,
    }


@dataclass
class RecoveryPair:
    seed: int
    policy_steps: int
    baseline_steps: int
    policy_cleared: bool
    baseline_cleared: bool


def run_episode(
    env: ClusterSim,
    seed: int,
    select: Callable[[np.ndarray], int],
    collect_trace: bool = False,
) -> tuple[int, bool, list[dict]]:
    """(steps used, cleared flag, optional step trace); uncleared episodes
    count the full horizon."""
    state = env.reset(seed=seed)
    obs = env.observe(state)
    trace: list[dict] = []
    steps = 0
    done = False
    while not done:
        action_idx = select(obs)
        action = env.actions[action_idx]
        state, reward, done = env.step(state, action)
        steps += 1
        if collect_trace:
            trace.append(
                {
                    "step": steps,
                    "action": action.kind,
                    "target": action.target,
                    "reward": round(reward, 10),
                    "health": [round(h, 10) for h in state.service_health],
                    "cleared": state.active_fault is None,
                }
            )
        obs = env.observe(state)
    cleared = state.active_fault is None
    return (steps if cleared else env.horizon), cleared, trace


def greedy_selector(bundle: pl.PolicyBundle) -> Callable[[np.ndarray], int]:
    return lambda obs: pl.select_action(bundle.distribution(obs), "greedy")


def sampling_selector(bundle: pl.PolicyBundle, rng: np.random.Generator) -> Callable[[np.ndarray], int]:
    return lambda obs: pl.select_action(bundle.distribution(obs), "sample", rng)


def uniform_selector(n_actions: int, rng: np.random.Generator) -> Callable[[np.ndarray], int]:
    return lambda obs: int(rng.integers(n_actions))


def measure_recovery(
    env: ClusterSim,
    bundle: pl.PolicyBundle,
    seeds: list[int],
    mode: str = "greedy",
) -> list[RecoveryPair]:
    """Paired steps-to-clear under the policy and under a uniform-random
    baseline, one pair per seed."""
    if len(seeds) < 20:
        raise BenchConfigError(f"recovery measurement needs >= 20 seeds, got {len(seeds)}")
    pairs = []
    for seed in seeds:
        if mode == "greedy":
            select = greedy_selector(bundle)
        else:
            select = sampling_selector(bundle, np.random.default_rng(seed + 101))
        p_steps, p_clear, _ = run_episode(env, seed, select)
        b_steps, b_clear, _ = run_episode(
            env, seed, uniform_selector(env.n_actions, np.random.default_rng(seed + 777))
        )
        pairs.append(RecoveryPair(seed, p_steps, b_steps, p_clear, b_clear))
    return pairs


def localization_accuracy(
    scores: list[RootCauseScores], labels: list[int], k: int = 3
) -> tuple[float, float]:
    """(top-1, top-k) fraction of sequences whose label leads the ranking."""
    if len(scores) != len(labels):
        raise ValueError(f"{len(scores)} score sets vs {len(labels)} labels")
    top1 = np.mean([s.ranking[0] == lab for s, lab in zip(scores, labels)])
    topk = np.mean([lab in s.ranking[:k] for s, lab in zip(scores, labels)])
    return float(top1), float(topk)
