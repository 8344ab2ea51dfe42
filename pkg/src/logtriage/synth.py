"""Seeded synthetic corpus generator.

Emits Loghub-style log text (date time level source message) built from a
fixed bank of background message patterns plus fault-chain patterns whose
events appear in order, each chain anchored by a distinctive root message.
Volatile numeric fields vary per line and are masked away by tokenization,
so every pattern maps to one stable event embedding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .envsim import FAULT_KINDS

BACKGROUND_PATTERNS = [
    ("INFO", "heartbeat ok seq {a}"),
    ("INFO", "request {a} completed in {b} ms"),
    ("INFO", "cache hit ratio {a} percent"),
    ("INFO", "scheduled job {a} finished"),
    ("INFO", "connection pool size {a}"),
    ("DEBUG", "gc pause {a} ms"),
    ("DEBUG", "queue depth {a}"),
    ("INFO", "config checkpoint {a} saved"),
    ("INFO", "replica sync offset {a}"),
    ("DEBUG", "metrics flushed {a} points"),
    ("INFO", "session {a} renewed"),
    ("WARN", "retry {a} succeeded"),
]

# Each chain starts at its root message; kinds reuse the simulator taxonomy.
CHAIN_PATTERNS = [
    ("crash", [
        ("ERROR", "worker process exited code {a}"),
        ("ERROR", "service restart loop detected attempt {a}"),
        ("WARN", "request failures spiking shard {a}"),
    ]),
    ("config_drift", [
        ("ERROR", "config digest mismatch node {a}"),
        ("WARN", "feature flags diverged group {a}"),
        ("ERROR", "rollout halted at stage {a}"),
    ]),
    ("mem_leak", [
        ("ERROR", "heap usage climbing {a} mb"),
        ("WARN", "gc thrash cycle {a}"),
        ("ERROR", "allocation failure region {a}"),
        ("WARN", "latency degradation pool {a}"),
    ]),
    ("net_partition", [
        ("ERROR", "peer unreachable zone {a}"),
        ("WARN", "quorum lost epoch {a}"),
        ("ERROR", "election storm term {a}"),
    ]),
    ("disk_full", [
        ("ERROR", "disk usage exceeded threshold {a} percent"),
        ("WARN", "write stall device {a}"),
        ("ERROR", "journal append failed offset {a}"),
    ]),
    ("overload", [
        ("ERROR", "admission rate limit breached {a} rps"),
        ("WARN", "thread pool saturated {a}"),
        ("ERROR", "timeout budget exhausted route {a}"),
    ]),
    ("crash", [
        ("ERROR", "segfault in module {a}"),
        ("WARN", "core dump truncated {a}"),
        ("ERROR", "supervisor gave up after {a} restarts"),
    ]),
    ("disk_full", [
        ("ERROR", "inode exhaustion volume {a}"),
        ("WARN", "tmp cleanup lagging {a} files"),
        ("ERROR", "snapshot write aborted {a}"),
    ]),
]

_BASE_TIME = datetime(2024, 1, 1, tzinfo=timezone.utc)


@dataclass
class SequenceLabel:
    sequence: int
    start_line: int
    length: int
    root_cause_index: int  # within the sequence
    chain: list[int]  # within the sequence
    fault_kind: str
    pattern: int


def _render(pattern: str, rng: np.random.Generator) -> str:
    msg = pattern
    for key in ("a", "b"):
        if "{" + key + "}" in msg:
            msg = msg.replace("{" + key + "}", str(int(rng.integers(1, 100_000))))
    return msg


def generate_sequences(
    n_sequences: int,
    length: int = 32,
    n_patterns: int = 8,
    seed: int = 13,
    n_services: int = 6,
) -> tuple[list[str], list[SequenceLabel]]:
    """(log lines, labels) for a labeled corpus of fault-chain sequences."""
    if not 1 <= n_patterns <= len(CHAIN_PATTERNS):
        raise ValueError(f"n_patterns must be in 1..{len(CHAIN_PATTERNS)}")
    rng = np.random.default_rng(seed)
    lines: list[str] = []
    labels: list[SequenceLabel] = []
    clock = 0
    for s in range(n_sequences):
        pattern_id = int(rng.integers(n_patterns))
        kind, chain_msgs = CHAIN_PATTERNS[pattern_id]
        chain_len = len(chain_msgs)
        max_span = length - 2
        if chain_len * 2 > max_span:
            raise ValueError(f"length {length} too short for chain of {chain_len}")
        # place chain events in order with gaps of 1..2 positions
        gaps = rng.integers(1, 3, size=chain_len - 1)
        while 1 + int(gaps.sum()) > max_span - 1:
            gaps = rng.integers(1, 3, size=chain_len - 1)
        span = 1 + int(gaps.sum())
        root_pos = int(rng.integers(1, length - span))
        positions = [root_pos]
        for g in gaps:
            positions.append(positions[-1] + int(g))

        chain_iter = dict(zip(positions, chain_msgs))
        source = f"svc{int(rng.integers(n_services))}"
        start_line = len(lines)
        for i in range(length):
            if i in chain_iter:
                level, msg = chain_iter[i]
            else:
                level, msg = BACKGROUND_PATTERNS[int(rng.integers(len(BACKGROUND_PATTERNS)))]
            stamp = (_BASE_TIME + timedelta(seconds=clock)).strftime("%Y-%m-%d %H:%M:%S")
            clock += 1
            lines.append(f"{stamp} {level} {source} {_render(msg, rng)}")
        labels.append(
            SequenceLabel(
                sequence=s,
                start_line=start_line,
                length=length,
                root_cause_index=root_pos,
                chain=positions,
                fault_kind=kind,
                pattern=pattern_id,
            )
        )
    return lines, labels


def generate_plain_corpus(n_records: int, seed: int = 0) -> list[str]:
    """Unlabeled background-plus-chain traffic for throughput measurement."""
    length = 32
    n_sequences = (n_records + length - 1) // length
    lines, _ = generate_sequences(n_sequences, length=length, seed=seed)
    return lines[:n_records]


def write_corpus(
    out_dir: str | Path,
    n_sequences: int,
    length: int = 32,
    n_patterns: int = 8,
    seed: int = 13,
    n_services: int = 6,
) -> dict[str, Path]:
    """Write corpus.log + labels.jsonl (+ campaign.jsonl aligned with the
    label fault kinds) into out_dir; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines, labels = generate_sequences(n_sequences, length, n_patterns, seed, n_services)
    corpus_path = out_dir / "corpus.log"
    corpus_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    labels_path = out_dir / "labels.jsonl"
    with open(labels_path, "w", encoding="utf-8") as fh:
        for lab in labels:
            fh.write(json.dumps({
                "sequence": lab.sequence,
                "start_line": lab.start_line,
                "length": lab.length,
                "root_cause_index": lab.root_cause_index,
                "chain": lab.chain,
                "fault_kind": lab.fault_kind,
                "pattern": lab.pattern,
            }) + "\n")
    # a recovery campaign whose episode faults mirror the label kinds
    rng = np.random.default_rng(seed + 1)
    campaign_path = out_dir / "campaign.jsonl"
    with open(campaign_path, "w", encoding="utf-8") as fh:
        for episode, lab in enumerate(labels):
            fh.write(json.dumps({
                "episode": episode,
                "kind": lab.fault_kind,
                "target": int(rng.integers(n_services)),
                "severity": float(rng.uniform(0.3, 1.0)),
            }) + "\n")
    return {"corpus": corpus_path, "labels": labels_path, "campaign": campaign_path}


def read_labels(path: str | Path) -> list[SequenceLabel]:
    labels = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            labels.append(SequenceLabel(
                sequence=int(row["sequence"]),
                start_line=int(row["start_line"]),
                length=int(row["length"]),
                root_cause_index=int(row["root_cause_index"]),
                chain=[int(i) for i in row["chain"]],
                fault_kind=str(row["fault_kind"]),
                pattern=int(row["pattern"]),
            ))
    return labels


def unknown_kinds(labels: list[SequenceLabel]) -> set[str]:
    return {lab.fault_kind for lab in labels} - set(FAULT_KINDS)
