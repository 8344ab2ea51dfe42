"""Joint optimization: localization loss, causal-chain contrast, recovery
policy loss, and the confidence KL regularizer.

Each epoch runs a supervised pass over labeled template sequences (fault +
causal + KL terms), then a rollout phase in the simulated cluster (recovery
term). Early stopping watches the supervised composite on a held-out split,
and the best parameter snapshot is restored at the end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import planner as pl
from .envsim import ClusterSim
from .reasoner import FaultReasoner


class DivergenceError(RuntimeError):
    """Training loss exploded or went non-finite; carries the partial result
    so callers can still persist the restored checkpoint and history."""

    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result


# --- optimizers ----------------------------------------------------------------

class SGD:
    def __init__(self, params: list[ad.Tensor], lr: float):
        self.params = [p for p in params if p.requires_grad]
        self.lr = lr

    def step(self) -> None:
        for p in self.params:
            if p.grad is not None:
                p.values -= self.lr * p.grad


class Adam:
    def __init__(self, params: list[ad.Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = [p for p in params if p.requires_grad]
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m[...] = b1 * m + (1 - b1) * p.grad
            v[...] = b2 * v + (1 - b2) * p.grad * p.grad
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            p.values -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(name: str, params: list[ad.Tensor], lr: float):
    if name == "adam":
        return Adam(params, lr)
    if name == "sgd":
        return SGD(params, lr)
    raise ValueError(f"unknown optimizer {name!r}")


# --- supervision format ----------------------------------------------------------

@dataclass
class LabeledSequence:
    """A template sequence with its fault-chain supervision."""

    templates: np.ndarray  # (T, d)
    root_cause_index: int
    chain: list[int]

    def __post_init__(self):
        if not self.chain:
            raise ValueError("chain must be non-empty")
        if self.chain[0] != self.root_cause_index:
            raise ValueError("root_cause_index must be the first chain entry")
        if max(self.chain) >= self.templates.shape[0]:
            raise ValueError("chain index outside the sequence")


# --- loss terms -------------------------------------------------------------------

def fault_loss(psi: np.ndarray, root_cause_index: int) -> float:
    """Class-balanced binary cross-entropy over events: target 1 at the root
    cause, 0 elsewhere, positive term weighted by T-1, mean over events."""
    psi = np.clip(np.asarray(psi, dtype=float), 1e-12, 1.0 - 1e-12)
    t = psi.size
    if not 0 <= root_cause_index < t:
        raise ValueError(f"root_cause_index {root_cause_index} outside 0..{t - 1}")
    weight = float(t - 1) if t > 1 else 1.0
    loss = -weight * math.log(psi[root_cause_index])
    for i in range(t):
        if i != root_cause_index:
            loss -= math.log(1.0 - psi[i])
    return loss / t


def fault_loss_graph(logits: ad.Tensor, root_cause_index: int) -> ad.Tensor:
    """Same loss from the readout logits (T, 1), using softplus for stability."""
    t = logits.shape[0]
    pos = np.zeros((t, 1))
    pos[root_cause_index, 0] = 1.0
    neg = 1.0 - pos
    weight = float(t - 1) if t > 1 else 1.0
    per_event = ad.add(
        ad.mul(ad.softplus(ad.mul(logits, -1.0)), pos * weight),
        ad.mul(ad.softplus(logits), neg),
    )
    return ad.mean(per_event)


def causal_contrast_loss(states: np.ndarray, chain: list[int], temperature: float = 0.1) -> tuple[float, int]:
    """InfoNCE over adjacent chain pairs with cosine similarity.

    For each consecutive (u, v) the positive is cos(h_u, h_v)/temperature and
    the negatives are cos(h_u, h_w)/temperature over events w outside the
    chain. Returns (mean pair loss, skipped pair count); pairs without any
    negative are skipped.
    """
    if len(chain) < 2:
        raise ValueError("chain must have at least 2 events")
    states = np.asarray(states, dtype=float)
    norms = np.maximum(np.linalg.norm(states, axis=1), 1e-12)
    unit = states / norms[:, None]
    cos = unit @ unit.T
    outside = [w for w in range(states.shape[0]) if w not in set(chain)]
    if not outside:
        return 0.0, len(chain) - 1
    losses = []
    for u, v in zip(chain[:-1], chain[1:]):
        scores = np.array([cos[u, v]] + [cos[u, w] for w in outside]) / temperature
        shifted = scores - scores.max()
        log_softmax0 = shifted[0] - math.log(np.exp(shifted).sum())
        losses.append(-log_softmax0)
    return float(np.mean(losses)), 0


def causal_contrast_loss_graph(
    states: ad.Tensor, chain: list[int], temperature: float = 0.1
) -> tuple[ad.Tensor | None, int]:
    """Differentiable InfoNCE; returns (loss tensor or None when every pair
    lacks negatives, skipped count)."""
    if len(chain) < 2:
        raise ValueError("chain must have at least 2 events")
    t = states.shape[0]
    outside = [w for w in range(t) if w not in set(chain)]
    if not outside:
        return None, len(chain) - 1
    norms = ad.sqrt(ad.clip_min(ad.rowsum(ad.mul(states, states)), 1e-24))
    unit = ad.div(states, norms)
    cos = ad.matmul(unit, unit.T)
    first = np.zeros((len(outside) + 1, 1))
    first[0, 0] = 1.0
    total = None
    for u, v in zip(chain[:-1], chain[1:]):
        pick_row = np.zeros((1, t))
        pick_row[0, u] = 1.0
        gather = np.zeros((t, len(outside) + 1))
        gather[v, 0] = 1.0
        for col, w in enumerate(outside, start=1):
            gather[w, col] = 1.0
        candidates = ad.matmul(ad.matmul(ad.Tensor(pick_row), cos), ad.Tensor(gather))
        probs = ad.softmax_row(ad.mul(candidates, 1.0 / temperature))
        pair_loss = ad.mul(ad.log(ad.matmul(probs, ad.Tensor(first))), -1.0)
        total = pair_loss if total is None else ad.add(total, pair_loss)
    loss = ad.mul(ad.mean(total), 1.0 / (len(chain) - 1))
    return loss, 0


# --- composition -------------------------------------------------------------------

@dataclass
class LossBundle:
    l_fault: float
    l_causal: float
    l_rl: float
    kl: float
    total: float
    lambdas: tuple[float, float, float]

    def verify(self, tol: float = 1e-12) -> bool:
        l1, l2, l3 = self.lambdas
        recomposed = self.l_fault + l1 * self.l_causal + l2 * self.l_rl + l3 * self.kl
        return abs(recomposed - self.total) <= tol


def total_loss(
    l_fault: float, l_causal: float, l_rl: float, kl: float,
    lambdas: tuple[float, float, float] = (0.5, 1.0, 0.01),
) -> LossBundle:
    """Weighted composite of the four training terms."""
    parts = {"l_fault": l_fault, "l_causal": l_causal, "l_rl": l_rl, "kl": kl}
    for name, value in parts.items():
        if not math.isfinite(value):
            raise DivergenceError(f"loss term {name} is non-finite: {value!r}")
    l1, l2, l3 = lambdas
    total = l_fault + l1 * l_causal + l2 * l_rl + l3 * kl
    bundle = LossBundle(l_fault, l_causal, l_rl, kl, total, tuple(lambdas))
    assert bundle.verify()
    return bundle


# --- trainer -------------------------------------------------------------------------

@dataclass
class TrainerConfig:
    epochs: int = 50
    patience: int = 5
    batch_size: int = 64
    lr: float = 5e-5
    optimizer: str = "adam"
    gamma: float = 0.99
    entropy_coef: float = 0.01
    lambda_causal: float = 0.5
    lambda_rl: float = 1.0
    lambda_kl: float = 0.01
    causal_temperature: float = 0.1
    rl_episodes: int = 8
    kl_probe_states: int = 64
    val_fraction: float = 0.2
    seed: int = 0
    prior_grad: str = "both"
    shape_in_loss: bool = True
    divergence_limit: float = 1e6


@dataclass
class EpochRow:
    epoch: int
    l_fault: float
    l_causal: float
    l_rl: float
    kl: float
    total: float
    val_total: float


@dataclass
class EpisodeRow:
    episode: int
    ret: float
    steps: int
    actor_loss: float
    critic_loss: float
    kl: float


@dataclass
class TrainingResult:
    history: list[EpochRow] = field(default_factory=list)
    rl_curve: list[EpisodeRow] = field(default_factory=list)
    best_epoch: int = -1
    best_val_total: float = math.inf
    stopped_early: bool = False
    diverged: bool = False
    skipped_causal_pairs: int = 0


class JointTrainer:
    """Owns the parameter set during fit; see module docstring for the loop."""

    def __init__(
        self,
        reasoner: FaultReasoner,
        bundle: pl.PolicyBundle | None = None,
        env: ClusterSim | None = None,
        config: TrainerConfig | None = None,
    ):
        self.reasoner = reasoner
        self.bundle = bundle
        self.env = env
        self.config = config or TrainerConfig()
        self._skipped_pairs = 0

    # -- building blocks ----------------------------------------------------

    @property
    def parameters(self) -> list[ad.Tensor]:
        params = list(self.reasoner.parameters)
        if self.bundle is not None:
            params += self.bundle.parameters
        return params

    def _sequence_loss(self, seq: LabeledSequence) -> tuple[ad.Tensor, ad.Tensor | None]:
        """(fault term, causal term or None) for one sequence."""
        templates = ad.Tensor(seq.templates)
        _, states, _ = self.reasoner.graph(templates)
        logits = ad.matmul(states[-1], self.reasoner.readout_)
        fault = fault_loss_graph(logits, seq.root_cause_index)
        causal = None
        if len(seq.chain) >= 2:
            causal, skipped = causal_contrast_loss_graph(
                states[-1], seq.chain, self.config.causal_temperature
            )
            self._skipped_pairs += skipped
        return fault, causal

    def _kl_term(self, probe_obs: np.ndarray | None) -> ad.Tensor | None:
        if probe_obs is None or self.bundle is None or not self.bundle.shaping:
            return None
        if self.config.prior_grad == "rl":
            with ad.no_grad():
                alpha, beta = self.bundle.prior_graph(ad.Tensor(probe_obs))
                return pl.kl_graph(alpha, beta)
        alpha, beta = self.bundle.prior_graph(ad.Tensor(probe_obs))
        return pl.kl_graph(alpha, beta)

    def _supervised_batch_loss(
        self, batch: list[LabeledSequence], probe_obs: np.ndarray | None
    ) -> tuple[ad.Tensor, dict]:
        cfg = self.config
        fault_terms = []
        causal_terms = []
        for seq in batch:
            fault, causal = self._sequence_loss(seq)
            fault_terms.append(fault)
            if causal is not None:
                causal_terms.append(causal)
        fault_mean = _mean_of(fault_terms)
        causal_mean = _mean_of(causal_terms) if causal_terms else ad.Tensor(0.0)
        kl_term = self._kl_term(probe_obs)
        kl_value = kl_term if kl_term is not None else ad.Tensor(0.0)
        loss = ad.add(
            ad.add(fault_mean, ad.mul(causal_mean, cfg.lambda_causal)),
            ad.mul(kl_value, cfg.lambda_kl),
        )
        stats = {
            "l_fault": fault_mean.item(),
            "l_causal": causal_mean.item(),
            "kl": kl_value.item(),
        }
        return loss, stats

    def _probe_observations(self) -> np.ndarray | None:
        cfg = self.config
        if self.env is None or self.bundle is None or cfg.kl_probe_states <= 0:
            return None
        rows = [
            self.env.observe(self.env.reset(seed=cfg.seed * 100_003 + i))
            for i in range(cfg.kl_probe_states)
        ]
        return np.stack(rows)

    def _rollout_episode(self, seed: int, rng: np.random.Generator) -> tuple[list[pl.Transition], float, int]:
        env, bundle = self.env, self.bundle
        state = env.reset(seed=seed)
        obs = env.observe(state)
        transitions: list[pl.Transition] = []
        total = 0.0
        while True:
            dist = bundle.distribution(obs)
            action_idx = pl.select_action(dist, "sample", rng)
            state, reward, done = env.step(state, env.actions[action_idx])
            next_obs = env.observe(state)
            transitions.append(pl.Transition(obs, action_idx, reward, next_obs, done))
            total += reward
            obs = next_obs
            if done:
                return transitions, total, len(transitions)

    # -- main loop -----------------------------------------------------------

    def fit(self, dataset: list[LabeledSequence]) -> TrainingResult:
        cfg = self.config
        if not dataset:
            raise ValueError("fit needs a non-empty dataset")
        rng = np.random.default_rng(cfg.seed)
        order = rng.permutation(len(dataset))
        n_val = int(round(len(dataset) * cfg.val_fraction))
        val_idx = order[:n_val]
        train_idx = order[n_val:]
        if len(train_idx) == 0:
            raise ValueError("validation fraction leaves no training data")
        train = [dataset[i] for i in train_idx]
        val = [dataset[i] for i in val_idx]

        params = self.parameters
        optimizer = make_optimizer(cfg.optimizer, params, cfg.lr)
        hyper = pl.Hyper(
            lr=cfg.lr, gamma=cfg.gamma, entropy_coef=cfg.entropy_coef,
            batch_size=cfg.batch_size,
        )
        probe_obs = self._probe_observations()
        run_rl = (
            self.bundle is not None and self.env is not None
            and cfg.lambda_rl != 0.0 and cfg.rl_episodes > 0
        )

        result = TrainingResult()
        self._skipped_pairs = 0
        self._rl_buffer: list[pl.Transition] = []
        self._last_rl_stats: pl.UpdateStats | None = None
        best_snapshot = [p.values.copy() for p in params]
        patience_left = cfg.patience
        episode_counter = 0
        try:
            for epoch in range(cfg.epochs):
                # supervised phase
                epoch_order = rng.permutation(len(train))
                sums = {"l_fault": 0.0, "l_causal": 0.0, "kl": 0.0}
                n_batches = 0
                for start in range(0, len(train), cfg.batch_size):
                    batch = [train[i] for i in epoch_order[start : start + cfg.batch_size]]
                    ad.zero_grads(params)
                    loss, stats = self._supervised_batch_loss(batch, probe_obs)
                    ad.backward(loss)
                    optimizer.step()
                    for key in sums:
                        sums[key] += stats[key]
                    n_batches += 1
                epoch_stats = {k: v / n_batches for k, v in sums.items()}

                # recovery phase: updates stream every batch_size transitions
                # while episodes run, so the data stays on-policy
                l_rl = 0.0
                if run_rl:
                    update_stats = []
                    last_stats = self._last_rl_stats
                    for _ in range(cfg.rl_episodes):
                        transitions, ret, steps = self._rollout_episode(episode_counter, rng)
                        self._rl_buffer.extend(transitions)
                        while len(self._rl_buffer) >= cfg.batch_size:
                            chunk = self._rl_buffer[: cfg.batch_size]
                            del self._rl_buffer[: cfg.batch_size]
                            ad.zero_grads(params)
                            rl_loss, stats = pl.actor_critic_update(
                                chunk, self.bundle, hyper,
                                prior_grad=cfg.prior_grad,
                                shape_in_loss=cfg.shape_in_loss,
                            )
                            ad.backward(ad.mul(rl_loss, cfg.lambda_rl))
                            optimizer.step()
                            update_stats.append(stats)
                            last_stats = stats
                        result.rl_curve.append(
                            EpisodeRow(
                                episode_counter, ret, steps,
                                last_stats.actor_loss if last_stats else 0.0,
                                last_stats.critic_loss if last_stats else 0.0,
                                epoch_stats["kl"],
                            )
                        )
                        episode_counter += 1
                    self._last_rl_stats = last_stats
                    if update_stats:
                        l_rl = float(np.mean([s.rl_loss for s in update_stats]))
                    elif last_stats is not None:
                        l_rl = last_stats.rl_loss

                bundle_row = total_loss(
                    epoch_stats["l_fault"], epoch_stats["l_causal"], l_rl,
                    epoch_stats["kl"],
                    (cfg.lambda_causal, cfg.lambda_rl, cfg.lambda_kl),
                )
                if abs(bundle_row.total) > cfg.divergence_limit:
                    raise DivergenceError(f"total loss {bundle_row.total!r} exceeds limit")

                val_total = self._validation_loss(val, probe_obs)
                if math.isnan(val_total):  # no held-out data: stop on train total
                    val_total = bundle_row.total
                result.history.append(
                    EpochRow(epoch, bundle_row.l_fault, bundle_row.l_causal,
                             bundle_row.l_rl, bundle_row.kl, bundle_row.total, val_total)
                )
                if val_total < result.best_val_total:
                    result.best_val_total = val_total
                    result.best_epoch = epoch
                    best_snapshot = [p.values.copy() for p in params]
                    patience_left = cfg.patience
                else:
                    patience_left -= 1
                    if patience_left <= 0:
                        result.stopped_early = True
                        break
        except (DivergenceError, FloatingPointError):
            result.diverged = True
        finally:
            for p, snap in zip(params, best_snapshot):
                p.values[...] = snap
            ad.clear_tape()
            result.skipped_causal_pairs = self._skipped_pairs
        if result.diverged:
            raise DivergenceError(
                f"training diverged; best checkpoint from epoch {result.best_epoch} restored",
                result=result,
            )
        return result

    def _validation_loss(self, val: list[LabeledSequence], probe_obs: np.ndarray | None) -> float:
        """Supervised composite on the held-out split (the recovery term has
        no validation analogue)."""
        if not val:
            return math.nan
        cfg = self.config
        with ad.no_grad():
            fault_sum = 0.0
            causal_sum = 0.0
            for seq in val:
                fault, causal = self._sequence_loss(seq)
                fault_sum += fault.item()
                if causal is not None:
                    causal_sum += causal.item()
            kl_term = self._kl_term(probe_obs)
            kl_value = kl_term.item() if kl_term is not None else 0.0
        return (
            fault_sum / len(val)
            + cfg.lambda_causal * causal_sum / len(val)
            + cfg.lambda_kl * kl_value
        )


def _mean_of(terms: list[ad.Tensor]) -> ad.Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.mul(total, 1.0 / len(terms))

