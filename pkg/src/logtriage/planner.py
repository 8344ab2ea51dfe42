"""Actor-critic recovery policy with Beta-confidence policy shaping.

A small prior network maps each observation to per-action Beta parameters;
the policy's action probabilities are multiplied by the Beta means and
renormalized. A KL penalty against Beta(1,1) keeps the confidence heads from
drifting to extremes, and the actor/critic learn from one-step TD advantages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special as _sp

from . import autodiff as ad

BETA_PARAM_FLOOR = 1e-3  # softplus+1 keeps alpha, beta > 1, well above this


@dataclass
class Hyper:
    """Update hyperparameters; defaults follow the training setup."""

    lr: float = 5e-5
    gamma: float = 0.99
    entropy_coef: float = 0.01
    batch_size: int = 64
    critic_weight: float = 0.5


class MLP:
    """Two-layer perceptron with tanh hidden activation."""

    def __init__(self, n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator):
        self.w1 = ad.parameter(rng.standard_normal((n_in, n_hidden)) / np.sqrt(n_in))
        self.b1 = ad.parameter(np.zeros((1, n_hidden)))
        self.w2 = ad.parameter(rng.standard_normal((n_hidden, n_out)) / np.sqrt(n_hidden))
        self.b2 = ad.parameter(np.zeros((1, n_out)))

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        hidden = ad.tanh(ad.add(ad.matmul(x, self.w1), self.b1))
        return ad.add(ad.matmul(hidden, self.w2), self.b2)

    @property
    def parameters(self) -> list[ad.Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]


class PolicyBundle:
    """Actor, critic, and confidence-prior networks over one observation space."""

    def __init__(self, obs_size: int, n_actions: int, hidden: int = 64, seed: int = 0,
                 shaping: bool = True):
        rng = np.random.default_rng(seed)
        self.obs_size = obs_size
        self.n_actions = n_actions
        self.hidden = hidden
        self.shaping = shaping
        self.actor = MLP(obs_size, hidden, n_actions, rng)
        self.critic = MLP(obs_size, hidden, 1, rng)
        self.prior = MLP(obs_size, hidden, 2 * n_actions, rng)

    @property
    def parameters(self) -> list[ad.Tensor]:
        return self.actor.parameters + self.critic.parameters + self.prior.parameters

    # --- differentiable pieces -------------------------------------------

    def prior_graph(self, obs: ad.Tensor) -> tuple[ad.Tensor, ad.Tensor]:
        """(alpha, beta) tensors, each (n, n_actions), via softplus(raw) + 1."""
        raw = self.prior(obs)
        pick_a = np.zeros((2 * self.n_actions, self.n_actions))
        pick_b = np.zeros((2 * self.n_actions, self.n_actions))
        pick_a[: self.n_actions], pick_b[self.n_actions :] = np.eye(self.n_actions), np.eye(self.n_actions)
        alpha = ad.add(ad.softplus(ad.matmul(raw, ad.Tensor(pick_a))), 1.0)
        beta = ad.add(ad.softplus(ad.matmul(raw, ad.Tensor(pick_b))), 1.0)
        return alpha, beta

    def policy_graph(self, obs: ad.Tensor, detach_confidence: bool = False) -> ad.Tensor:
        """Shaped action distribution (n, n_actions); base softmax times the
        Beta confidence means, renormalized. With shaping off the means are
        fixed at 0.5 and cancel."""
        base = ad.softmax_row(self.actor(obs))
        if not self.shaping:
            return base
        alpha, beta = self.prior_graph(obs)
        mean = ad.div(alpha, ad.add(alpha, beta))
        if detach_confidence:
            mean = mean.detach()
        unnorm = ad.mul(base, mean)
        return ad.div(unnorm, ad.rowsum(unnorm))

    # --- numpy-facing inference -------------------------------------------

    def distribution(self, obs: np.ndarray) -> "ShapedDistribution":
        obs2d = np.atleast_2d(np.asarray(obs, dtype=float))
        with ad.no_grad():
            base = ad.softmax_row(self.actor(ad.Tensor(obs2d))).values[0]
            alpha, beta = self.prior_graph(ad.Tensor(obs2d))
        if self.shaping:
            return shape_policy(base, alpha.values[0], beta.values[0])
        fixed = np.full(self.n_actions, 0.5)
        return shape_policy(base, 2.0 * fixed, 2.0 * (1.0 - fixed))

    def value(self, obs: np.ndarray) -> float:
        obs2d = np.atleast_2d(np.asarray(obs, dtype=float))
        with ad.no_grad():
            return float(self.critic(ad.Tensor(obs2d)).values[0, 0])

    # --- persistence -------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {
            "policy.meta": np.array(
                [self.obs_size, self.n_actions, self.hidden, 1.0 if self.shaping else 0.0]
            )
        }
        for name, net in (("actor", self.actor), ("critic", self.critic), ("prior", self.prior)):
            out[f"policy.{name}.w1"] = net.w1.values
            out[f"policy.{name}.b1"] = net.b1.values
            out[f"policy.{name}.w2"] = net.w2.values
            out[f"policy.{name}.b2"] = net.b2.values
        return out

    @classmethod
    def from_state_arrays(cls, arrays: dict[str, np.ndarray]) -> "PolicyBundle":
        obs_size, n_actions, hidden, shaping = arrays["policy.meta"]
        bundle = cls(int(obs_size), int(n_actions), int(hidden), shaping=bool(shaping))
        for name, net in (("actor", bundle.actor), ("critic", bundle.critic), ("prior", bundle.prior)):
            net.w1 = ad.parameter(arrays[f"policy.{name}.w1"].copy())
            net.b1 = ad.parameter(arrays[f"policy.{name}.b1"].copy())
            net.w2 = ad.parameter(arrays[f"policy.{name}.w2"].copy())
            net.b2 = ad.parameter(arrays[f"policy.{name}.b2"].copy())
        return bundle


@dataclass
class ShapedDistribution:
    base: np.ndarray
    confidence_mean: np.ndarray
    shaped: np.ndarray


def confidence_prior(obs: np.ndarray, bundle: PolicyBundle) -> tuple[np.ndarray, np.ndarray]:
    """Per-action Beta parameters for one observation."""
    obs2d = np.atleast_2d(np.asarray(obs, dtype=float))
    with ad.no_grad():
        alpha, beta = bundle.prior_graph(ad.Tensor(obs2d))
    return alpha.values[0], beta.values[0]


def shape_with_means(base: np.ndarray, means: np.ndarray) -> ShapedDistribution:
    """Renormalized product of base probabilities and positive confidence
    means; multiplying all means by one positive constant changes nothing."""
    base = np.asarray(base, dtype=float)
    means = np.asarray(means, dtype=float)
    if np.any(means <= 0.0):
        raise ValueError("confidence means must be positive")
    unnorm = base * means
    total = unnorm.sum()
    assert total > 0.0, "shaping cannot zero the distribution (means are positive)"
    return ShapedDistribution(base=base, confidence_mean=means, shaped=unnorm / total)


def shape_policy(base: np.ndarray, alpha: np.ndarray, beta: np.ndarray) -> ShapedDistribution:
    """Multiply base probabilities by Beta means alpha/(alpha+beta), then
    renormalize. Positive means keep the support identical to base."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if np.any(alpha <= BETA_PARAM_FLOOR) or np.any(beta <= BETA_PARAM_FLOOR):
        raise ValueError("Beta parameters must exceed the positivity floor")
    return shape_with_means(base, alpha / (alpha + beta))


def select_action(dist: ShapedDistribution, mode: str, rng: np.random.Generator | None = None) -> int:
    """Draw from the shaped distribution, or take its argmax (ties to the
    lowest index)."""
    if mode == "greedy":
        return int(np.argmax(dist.shaped))
    if mode == "sample":
        if rng is None:
            raise ValueError("sample mode needs an rng")
        return int(rng.choice(dist.shaped.size, p=dist.shaped / dist.shaped.sum()))
    raise ValueError(f"unknown selection mode {mode!r}")


# --- KL regularizer ----------------------------------------------------------

def beta_kl_uniform(alpha, beta):
    """Closed-form KL(Beta(alpha, beta) || Beta(1, 1)), elementwise.

    -ln B(a,b) + (a-1)(psi(a)-psi(a+b)) + (b-1)(psi(b)-psi(a+b))
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if np.any(alpha <= 0) or np.any(beta <= 0):
        raise ValueError("Beta parameters must be positive")
    log_b = _sp.gammaln(alpha) + _sp.gammaln(beta) - _sp.gammaln(alpha + beta)
    dig_ab = _sp.digamma(alpha + beta)
    return (
        -log_b
        + (alpha - 1.0) * (_sp.digamma(alpha) - dig_ab)
        + (beta - 1.0) * (_sp.digamma(beta) - dig_ab)
    )


def kl_conf_uniform(alpha, beta) -> float:
    """KL against the uniform confidence prior, summed over actions."""
    return float(np.sum(beta_kl_uniform(alpha, beta)))


def kl_graph(alpha: ad.Tensor, beta: ad.Tensor) -> ad.Tensor:
    """Differentiable mean (over states and actions) of the per-action KL."""
    total = ad.add(alpha, beta)
    log_b = ad.sub(ad.add(ad.lgamma(alpha), ad.lgamma(beta)), ad.lgamma(total))
    dig_ab = ad.digamma(total)
    term_a = ad.mul(ad.sub(alpha, 1.0), ad.sub(ad.digamma(alpha), dig_ab))
    term_b = ad.mul(ad.sub(beta, 1.0), ad.sub(ad.digamma(beta), dig_ab))
    return ad.mean(ad.add(ad.sub(term_a, log_b), term_b))


# --- actor-critic update -------------------------------------------------------

@dataclass
class Transition:
    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    done: bool


@dataclass
class UpdateStats:
    actor_loss: float
    critic_loss: float
    rl_loss: float
    entropy: float
    mean_advantage: float


def td_targets(batch: list[Transition], bundle: PolicyBundle, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """(bootstrap targets, advantages) as plain data from the current critic:
    target = r + gamma * V(s') * (1 - done), advantage = target - V(s)."""
    obs = np.stack([t.obs for t in batch])
    next_obs = np.stack([t.next_obs for t in batch])
    rewards = np.array([[t.reward] for t in batch])
    not_done = np.array([[0.0 if t.done else 1.0] for t in batch])
    with ad.no_grad():
        values = bundle.critic(ad.Tensor(obs)).values
        next_values = bundle.critic(ad.Tensor(next_obs)).values
    target = rewards + gamma * next_values * not_done
    return target, target - values


def rl_loss_graph(
    batch: list[Transition],
    bundle: PolicyBundle,
    hyper: Hyper,
    target: np.ndarray,
    advantage: np.ndarray,
    prior_grad: str = "both",
    shape_in_loss: bool = True,
) -> tuple[ad.Tensor, UpdateStats]:
    """Recovery loss as a pure function of the parameters, with the bootstrap
    target and the actor's advantage held fixed as data.

    actor = -mean(log pi(a|s) * advantage) - entropy_coef * entropy(pi)
    critic = mean((target - V(s))^2); loss = actor + critic_weight * critic.
    The log-probability is the shaped policy's unless shape_in_loss is off;
    prior_grad='kl' detaches the confidence means inside the loss.
    """
    if not batch:
        raise ValueError("rl_loss_graph needs a non-empty batch")
    if prior_grad not in ("rl", "kl", "both"):
        raise ValueError(f"prior_grad must be rl|kl|both, got {prior_grad!r}")
    obs = ad.Tensor(np.stack([t.obs for t in batch]))
    onehot = np.zeros((len(batch), bundle.n_actions))
    onehot[np.arange(len(batch)), [t.action for t in batch]] = 1.0

    values = bundle.critic(obs)
    residual = ad.sub(ad.Tensor(target), values)
    critic_loss = ad.mean(ad.mul(residual, residual))

    if shape_in_loss:
        policy = bundle.policy_graph(obs, detach_confidence=(prior_grad == "kl"))
    else:
        policy = ad.softmax_row(bundle.actor(obs))
    log_policy = ad.log(policy)
    log_prob = ad.rowsum(ad.mul(log_policy, ad.Tensor(onehot)))
    # mean over the batch of per-state entropies -sum_a p log p
    entropy = ad.mul(ad.mean(ad.rowsum(ad.mul(policy, log_policy))), -1.0)
    actor_loss = ad.sub(
        ad.mul(ad.mean(ad.mul(log_prob, ad.Tensor(advantage))), -1.0),
        ad.mul(entropy, hyper.entropy_coef),
    )
    rl_loss = ad.add(actor_loss, ad.mul(critic_loss, hyper.critic_weight))
    stats = UpdateStats(
        actor_loss=actor_loss.item(),
        critic_loss=critic_loss.item(),
        rl_loss=rl_loss.item(),
        entropy=entropy.item(),
        mean_advantage=float(np.mean(advantage)),
    )
    if not np.isfinite(stats.rl_loss):
        raise FloatingPointError(
            f"non-finite recovery loss: actor={stats.actor_loss} critic={stats.critic_loss}"
        )
    return rl_loss, stats


def actor_critic_update(
    batch: list[Transition],
    bundle: PolicyBundle,
    hyper: Hyper,
    prior_grad: str = "both",
    shape_in_loss: bool = True,
) -> tuple[ad.Tensor, UpdateStats]:
    """One-step-TD actor-critic loss for a batch; the caller runs backward
    and the optimizer step."""
    target, advantage = td_targets(batch, bundle, hyper.gamma)
    return rl_loss_graph(
        batch, bundle, hyper, target, advantage,
        prior_grad=prior_grad, shape_in_loss=shape_in_loss,
    )
