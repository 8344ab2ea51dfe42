"""Attention-graph reasoning over template sequences.

Events attend to each other through a normalized bilinear similarity; the
row-stochastic graph is re-derived from the current node states each round
(unless frozen), states propagate through it with a ReLU, and a sigmoid
readout turns the final states into per-event root-cause scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator

from . import autodiff as ad
from .validation import check_matrix, check_vector

NORM_FLOOR = 1e-8  # ReLU can zero a row; similarity denominators stay finite


@dataclass
class AttentionGraph:
    matrix: np.ndarray  # (T, T), rows sum to 1
    round: int


@dataclass
class ReasonerTrace:
    """Per-round node states H^(0..R) and the graphs that produced them."""

    states: list[np.ndarray]
    graphs: list[AttentionGraph]


@dataclass
class RootCauseScores:
    psi: np.ndarray  # (T,) in (0, 1)
    ranking: np.ndarray  # event indices, descending psi, ties to lower index

    @property
    def top(self) -> int:
        return int(self.ranking[0])


def similarity(h_i: np.ndarray, h_j: np.ndarray, pair_weights: np.ndarray) -> float:
    """Normalized bilinear similarity h_i^T W h_j / (||h_i|| ||h_j||)."""
    h_i = check_vector(h_i, "h_i")
    h_j = check_vector(h_j, "h_j", size=h_i.size)
    w = check_matrix(pair_weights, "pair_weights", n_cols=h_i.size)
    denom = max(np.linalg.norm(h_i), NORM_FLOOR) * max(np.linalg.norm(h_j), NORM_FLOOR)
    return float(h_i @ w @ h_j / denom)


def _graph_step(states: ad.Tensor, pair_weights: ad.Tensor) -> ad.Tensor:
    """Row-stochastic attention matrix from the current states (T, T)."""
    # clamp before the sqrt (same values, sqrt is monotone) so zero-norm rows
    # cannot poison the backward pass
    norms = ad.sqrt(ad.clip_min(ad.rowsum(ad.mul(states, states)), NORM_FLOOR**2))  # (T,1)
    scores = ad.div(ad.matmul(ad.matmul(states, pair_weights), states.T),
                    ad.matmul(norms, norms.T))
    return ad.softmax_row(scores)


def build_attention_graph(states: np.ndarray, pair_weights: np.ndarray, round_index: int = 0) -> AttentionGraph:
    """Attention graph over node states; a single node yields [[1.0]]."""
    states = check_matrix(states, "states")
    pair_weights = check_matrix(pair_weights, "pair_weights", n_cols=states.shape[1])
    with ad.no_grad():
        matrix = _graph_step(ad.Tensor(states), ad.Tensor(pair_weights)).values
    return AttentionGraph(matrix=matrix, round=round_index)


def reasoning_graph(
    templates: ad.Tensor,
    pair_weights: ad.Tensor,
    readout: ad.Tensor,
    rounds: int = 3,
    static_graph: bool = False,
) -> tuple[ad.Tensor, list[ad.Tensor], list[ad.Tensor]]:
    """Differentiable multi-hop reasoning.

    Returns (psi (T,1), states per round [H^(0..R)], graphs per round).
    With static_graph the round-0 graph is reused for every update.
    """
    if rounds < 1:
        raise ValueError(f"rounds must be >= 1, got {rounds}")
    states = [templates]
    graphs: list[ad.Tensor] = []
    frozen = None
    for _ in range(rounds):
        graph = frozen if static_graph and frozen is not None else _graph_step(states[-1], pair_weights)
        if static_graph and frozen is None:
            frozen = graph
        graphs.append(graph)
        states.append(ad.relu(ad.matmul(graph, states[-1])))
    psi = ad.sigmoid(ad.matmul(states[-1], readout))
    return psi, states, graphs


def multi_hop_update(
    templates: np.ndarray,
    pair_weights: np.ndarray,
    rounds: int = 3,
    static_graph: bool = False,
) -> ReasonerTrace:
    """Run the update rounds, retaining every intermediate state and graph."""
    templates = check_matrix(templates, "templates")
    pair_weights = check_matrix(pair_weights, "pair_weights", n_cols=templates.shape[1])
    dummy_readout = np.zeros((templates.shape[1], 1))
    with ad.no_grad():
        _, states, graphs = reasoning_graph(
            ad.Tensor(templates), ad.Tensor(pair_weights), ad.Tensor(dummy_readout),
            rounds=rounds, static_graph=static_graph,
        )
    return ReasonerTrace(
        states=[s.values for s in states],
        graphs=[AttentionGraph(matrix=g.values, round=r) for r, g in enumerate(graphs)],
    )


def root_cause_scores(final_states: np.ndarray, readout: np.ndarray) -> RootCauseScores:
    """Sigmoid readout of the final states, ranked descending with ties
    broken toward the lower event index."""
    final_states = check_matrix(final_states, "final_states")
    readout = check_vector(readout, "readout", size=final_states.shape[1])
    psi = expit(final_states @ readout)
    order = np.lexsort((np.arange(psi.size), -psi))
    return RootCauseScores(psi=psi, ranking=order)


class FaultReasoner(BaseEstimator):
    """Estimator wrapper around the reasoning parameters.

    The bilinear form starts at a scaled identity plus small seeded noise:
    cosine structure, amplified so the initial attention over a sequence is
    informative rather than near-uniform. Without the gain, repeated
    row-stochastic averaging contracts all node states to one point and the
    zero-initialized readout then sits at an exact zero-gradient saddle.
    """

    def __init__(
        self,
        embed_dim: int = 64,
        rounds: int = 3,
        static_graph: bool = False,
        init_noise: float = 0.01,
        init_gain: float = 16.0,
        seed: int = 0,
    ):
        self.embed_dim = embed_dim
        self.rounds = rounds
        self.static_graph = static_graph
        self.init_noise = init_noise
        self.init_gain = init_gain
        self.seed = seed

    def init_params(self) -> "FaultReasoner":
        rng = np.random.default_rng(self.seed)
        self.pair_weights_ = ad.parameter(
            self.init_gain
            * (np.eye(self.embed_dim) + self.init_noise * rng.standard_normal((self.embed_dim, self.embed_dim)))
        )
        self.readout_ = ad.parameter(np.zeros((self.embed_dim, 1)))
        return self

    def _ensure_params(self) -> None:
        if not hasattr(self, "pair_weights_"):
            self.init_params()

    @property
    def parameters(self) -> list[ad.Tensor]:
        self._ensure_params()
        return [self.pair_weights_, self.readout_]

    def graph(self, templates: ad.Tensor):
        """Differentiable forward for the trainer."""
        self._ensure_params()
        return reasoning_graph(
            templates, self.pair_weights_, self.readout_,
            rounds=self.rounds, static_graph=self.static_graph,
        )

    def trace(self, templates: np.ndarray) -> ReasonerTrace:
        self._ensure_params()
        return multi_hop_update(
            templates, self.pair_weights_.values,
            rounds=self.rounds, static_graph=self.static_graph,
        )

    def score_events(self, templates: np.ndarray) -> RootCauseScores:
        trace = self.trace(templates)
        return root_cause_scores(trace.states[-1], self.readout_.values[:, 0])

    def predict(self, sequences: list[np.ndarray]) -> np.ndarray:
        """Top root-cause event index per template sequence."""
        return np.array([self.score_events(t).top for t in sequences], dtype=int)

    def state_arrays(self) -> dict[str, np.ndarray]:
        self._ensure_params()
        return {
            "reasoner.pair_weights": self.pair_weights_.values,
            "reasoner.readout": self.readout_.values,
        }

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> "FaultReasoner":
        self.pair_weights_ = ad.parameter(arrays["reasoner.pair_weights"].copy())
        self.readout_ = ad.parameter(arrays["reasoner.readout"].copy())
        self.embed_dim = self.pair_weights_.values.shape[0]
        return self
