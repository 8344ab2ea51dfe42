"""Deterministic simulated cluster with fault injection.

One fault is active per episode. Each fault kind has a remedial action that
heals its target service; any other targeted action is disruptive and damages
the service it touches. Episodes end when the fault clears or the horizon is
reached. All randomness flows from the reset seed, so fixed (seed, actions)
always reproduce the same trajectory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

FAULT_KINDS = ("crash", "config_drift", "mem_leak", "net_partition", "disk_full", "overload")
ACTION_KINDS = ("restart", "rollback", "scale_up", "clear_cache", "reroute")

DEFAULT_SERVICES = 6
DEFAULT_HORIZON = 32
CLEAR_THRESHOLD = 0.95
STEP_PENALTY = -0.05
CLEAR_REWARD = 1.0
DISRUPTION_PENALTY = -0.2
DISRUPTION_DAMAGE = 0.1

# remedial action per fault kind; mem_leak also heals under restart at half rate
REMEDY = {
    "crash": "restart",
    "config_drift": "rollback",
    "overload": "scale_up",
    "mem_leak": "clear_cache",
    "net_partition": "reroute",
    "disk_full": "clear_cache",
}
SECONDARY_REMEDY = {"mem_leak": "restart"}


@dataclass(frozen=True)
class FaultSpec:
    kind: str
    target: int
    severity: float

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise ValueError(f"unknown fault kind {self.kind!r}")
        if not 0.0 < self.severity <= 1.0:
            raise ValueError(f"severity must be in (0, 1], got {self.severity}")


@dataclass(frozen=True)
class RecoveryAction:
    kind: str  # one of ACTION_KINDS or "noop"
    target: int = 0

    def __post_init__(self):
        if self.kind != "noop" and self.kind not in ACTION_KINDS:
            raise ValueError(f"unknown action kind {self.kind!r}")


@dataclass(frozen=True)
class ClusterState:
    service_health: tuple[float, ...]
    resource_load: tuple[float, ...]
    active_fault: Optional[FaultSpec]
    step_count: int

    @property
    def done(self) -> bool:
        return self.active_fault is None


def action_space(n_services: int = DEFAULT_SERVICES) -> list[RecoveryAction]:
    """Every targeted action for every service, plus noop, in a fixed order."""
    actions = [
        RecoveryAction(kind=k, target=t) for k in ACTION_KINDS for t in range(n_services)
    ]
    actions.append(RecoveryAction(kind="noop"))
    return actions


def observation_size(n_services: int = DEFAULT_SERVICES, psi_features: int = 0) -> int:
    return 2 * n_services + len(FAULT_KINDS) + psi_features


def healing_amount(severity: float, health: float) -> float:
    """Per-step recovery under the matched action; never below 0.25."""
    return 0.5 * (1.0 + severity) * (1.0 - health) + 0.25


class ClusterSim:
    """Fault-injection environment over `n_services` services.

    Faults come from an explicit campaign (episode -> FaultSpec) when given,
    otherwise they are derived from the reset seed.
    """

    def __init__(
        self,
        n_services: int = DEFAULT_SERVICES,
        horizon: int = DEFAULT_HORIZON,
        campaign: Optional[dict[int, FaultSpec]] = None,
        use_psi_features: bool = False,
    ):
        self.n_services = n_services
        self.horizon = horizon
        self.campaign = campaign or {}
        self.use_psi_features = use_psi_features
        self._psi_features = np.zeros(n_services)
        self.actions = action_space(n_services)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def obs_size(self) -> int:
        return observation_size(self.n_services, self.n_services if self.use_psi_features else 0)

    def _seeded_fault(self, rng: np.random.Generator) -> FaultSpec:
        return FaultSpec(
            kind=FAULT_KINDS[int(rng.integers(len(FAULT_KINDS)))],
            target=int(rng.integers(self.n_services)),
            severity=float(rng.uniform(0.3, 1.0)),
        )

    def reset(self, seed: int, psi_features: Optional[np.ndarray] = None) -> ClusterState:
        """Healthy cluster with one injected fault; the fault target's health
        starts at 1 - severity."""
        rng = np.random.default_rng(seed)
        load = rng.uniform(0.2, 0.5, size=self.n_services)
        fault = self.campaign.get(seed)
        if fault is None:
            fault = self._seeded_fault(rng)
        if fault.target >= self.n_services:
            raise ValueError(f"fault target {fault.target} out of range for {self.n_services} services")
        health = np.ones(self.n_services)
        health[fault.target] = max(0.0, 1.0 - fault.severity)
        if self.use_psi_features:
            self._psi_features = (
                np.zeros(self.n_services) if psi_features is None
                else np.asarray(psi_features, dtype=float)[: self.n_services]
            )
        return ClusterState(
            service_health=tuple(health),
            resource_load=tuple(load),
            active_fault=fault,
            step_count=0,
        )

    def observe(self, state: ClusterState) -> np.ndarray:
        """health ++ load ++ one-hot fault kind (++ psi features when enabled)."""
        kind_onehot = np.zeros(len(FAULT_KINDS))
        if state.active_fault is not None:
            kind_onehot[FAULT_KINDS.index(state.active_fault.kind)] = 1.0
        parts = [np.array(state.service_health), np.array(state.resource_load), kind_onehot]
        if self.use_psi_features:
            parts.append(self._psi_features)
        return np.concatenate(parts)

    def _heal_rate(self, fault: FaultSpec, action: RecoveryAction) -> float | None:
        """1.0 for the remedial action, 0.5 for a secondary remedy, None if
        the action does not treat this fault."""
        if action.kind == "noop" or action.target != fault.target:
            return None
        if REMEDY[fault.kind] == action.kind:
            return 1.0
        if SECONDARY_REMEDY.get(fault.kind) == action.kind:
            return 0.5
        return None

    def step(self, state: ClusterState, action: RecoveryAction) -> tuple[ClusterState, float, bool]:
        if state.done or state.step_count >= self.horizon:
            raise ValueError("step() called on a terminal state")
        if action.kind != "noop" and action.target >= self.n_services:
            raise ValueError(f"action target {action.target} out of range")

        fault = state.active_fault
        health = np.array(state.service_health)
        reward = STEP_PENALTY
        rate = self._heal_rate(fault, action)
        cleared = False
        if rate is not None:
            gain = rate * healing_amount(fault.severity, health[fault.target])
            health[fault.target] = min(1.0, health[fault.target] + gain)
            if health[fault.target] >= CLEAR_THRESHOLD:
                cleared = True
                reward += CLEAR_REWARD
        elif action.kind != "noop":
            health[action.target] = max(0.0, health[action.target] - DISRUPTION_DAMAGE)
            reward += DISRUPTION_PENALTY

        next_state = ClusterState(
            service_health=tuple(health),
            resource_load=state.resource_load,
            active_fault=None if cleared else fault,
            step_count=state.step_count + 1,
        )
        done = cleared or next_state.step_count >= self.horizon
        return next_state, reward, done


def min_steps_to_clear(fault: FaultSpec, horizon: int = DEFAULT_HORIZON) -> int:
    """Steps the remedial action needs to clear the fault; the environment's
    analytic optimum for an episode."""
    health = max(0.0, 1.0 - fault.severity)
    steps = 0
    while health < CLEAR_THRESHOLD and steps < horizon:
        health = min(1.0, health + healing_amount(fault.severity, health))
        steps += 1
    return steps


# --- campaign files ----------------------------------------------------------

def save_campaign(path: str | Path, faults: dict[int, FaultSpec]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for episode in sorted(faults):
            f = faults[episode]
            fh.write(
                json.dumps(
                    {"episode": episode, "kind": f.kind, "target": f.target, "severity": f.severity}
                )
                + "\n"
            )


def load_campaign(path: str | Path) -> dict[int, FaultSpec]:
    faults: dict[int, FaultSpec] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            faults[int(row["episode"])] = FaultSpec(
                kind=row["kind"], target=int(row["target"]), severity=float(row["severity"])
            )
    return faults


def generate_campaign(n_episodes: int, seed: int, n_services: int = DEFAULT_SERVICES) -> dict[int, FaultSpec]:
    rng = np.random.default_rng(seed)
    return {
        ep: FaultSpec(
            kind=FAULT_KINDS[int(rng.integers(len(FAULT_KINDS)))],
            target=int(rng.integers(n_services)),
            severity=float(rng.uniform(0.3, 1.0)),
        )
        for ep in range(n_episodes)
    }
