"""Multi-scale window abstraction of event streams into template embeddings.

Each window's mean embedding is softly assigned to the prototype codebook by
a distance softmax with temperature, and a position's template is the mean
(over usable scales) of its window's prototype mixture. The position -> window
map uses the window starting at that position; trailing positions past the
last window start reuse the final window of each scale so every position is
a convex combination of prototypes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import autodiff as ad
from .embedding import PrototypeCodebook, embed_stream, fit_prototypes
from .validation import check_matrix, check_vector

DEFAULT_SCALES = (3, 5, 7)


class DegenerateWindowError(ValueError):
    """Stream shorter than every requested scale; retry with scales={1}."""


@dataclass(frozen=True)
class WindowSet:
    """All contiguous windows of one scale: window i covers starts[i]..starts[i]+scale-1."""

    scale: int
    starts: tuple[int, ...]
    skipped_scales: tuple[int, ...] = ()


def extract_windows(stream_length: int, scales: tuple[int, ...] = DEFAULT_SCALES) -> list[WindowSet]:
    """All contiguous windows per usable scale.

    A scale s yields stream_length - s + 1 windows with starts 0..T-s; scales
    longer than the stream are skipped and reported on each WindowSet. When
    every scale is skipped the stream is unusable at these scales.
    """
    if stream_length < 1:
        raise ValueError("stream_length must be >= 1")
    usable = []
    skipped = []
    for s in sorted(set(scales)):
        if s < 1:
            raise ValueError(f"window scale must be >= 1, got {s}")
        if s > stream_length:
            skipped.append(s)
        else:
            usable.append(s)
    if not usable:
        raise DegenerateWindowError(
            f"stream of length {stream_length} is shorter than every scale "
            f"{tuple(sorted(set(scales)))}; fall back to scales=(1,)"
        )
    return [
        WindowSet(
            scale=s,
            starts=tuple(range(stream_length - s + 1)),
            skipped_scales=tuple(skipped),
        )
        for s in usable
    ]


def window_mean(events: np.ndarray) -> np.ndarray:
    """Arithmetic mean of the event vectors in one window."""
    events = check_matrix(events, "window events")
    return events.mean(axis=0)


def fuzzy_attention(wbar: np.ndarray, codebook: PrototypeCodebook) -> np.ndarray:
    """Soft assignment of a window mean to prototypes.

    softmax over prototypes of -||wbar - p_k||^2 / temperature, computed
    with max-subtraction; weights are nonnegative and sum to 1.
    """
    wbar = check_vector(wbar, "wbar", size=codebook.dim)
    diffs = codebook.prototypes - wbar[None, :]
    scores = -(diffs * diffs).sum(axis=1) / codebook.temperature
    scores -= scores.max()
    e = np.exp(scores)
    return e / e.sum()


@lru_cache(maxsize=256)
def _scale_operators(stream_length: int, scale: int) -> tuple[np.ndarray, np.ndarray]:
    """(averaging, placement) constants for one (T, s).

    averaging: (T-s+1, T) row-stochastic matrix turning the event matrix into
    window means. placement: (T, T-s+1) selector mapping each position to the
    window starting there, clamped to the last window for trailing positions.
    """
    n_windows = stream_length - scale + 1
    averaging = np.zeros((n_windows, stream_length))
    for i in range(n_windows):
        averaging[i, i : i + scale] = 1.0 / scale
    placement = np.zeros((stream_length, n_windows))
    for i in range(stream_length):
        placement[i, min(i, n_windows - 1)] = 1.0
    averaging.setflags(write=False)
    placement.setflags(write=False)
    return averaging, placement


def template_graph(
    events: ad.Tensor,
    prototypes: ad.Tensor,
    temperature: float,
    scales: tuple[int, ...] = DEFAULT_SCALES,
    scale_normalize: bool = True,
) -> tuple[ad.Tensor, list[tuple[int, ad.Tensor]]]:
    """Differentiable template pipeline; returns (templates (T,d), per-scale
    attention weights [(scale, (T-s+1, K))])."""
    stream_length = events.shape[0]
    window_sets = extract_windows(stream_length, scales)
    proto_sq = ad.rowsum(ad.mul(prototypes, prototypes)).T  # (1, K)
    contributions = None
    weights = []
    for wset in window_sets:
        s = wset.scale
        averaging, placement = _scale_operators(stream_length, s)
        wbar = ad.matmul(ad.Tensor(averaging), events)  # (W, d)
        wbar_sq = ad.rowsum(ad.mul(wbar, wbar))  # (W, 1)
        cross = ad.matmul(wbar, prototypes.T)  # (W, K)
        sq_dist = ad.add(ad.sub(wbar_sq, ad.mul(cross, 2.0)), proto_sq)
        alpha = ad.softmax_row(ad.mul(sq_dist, -1.0 / temperature))  # (W, K)
        weights.append((s, alpha))
        mixed = ad.matmul(ad.Tensor(placement), ad.matmul(alpha, prototypes))  # (T, d)
        contributions = mixed if contributions is None else ad.add(contributions, mixed)
    if scale_normalize:
        contributions = ad.mul(contributions, 1.0 / len(window_sets))
    return contributions, weights


def template_embed(
    events: np.ndarray,
    codebook: PrototypeCodebook,
    scales: tuple[int, ...] = DEFAULT_SCALES,
    scale_normalize: bool = True,
) -> np.ndarray:
    """Template sequence (T, d) for a stream of event vectors."""
    events = check_matrix(events, "events", n_cols=codebook.dim)
    with ad.no_grad():
        templates, _ = template_graph(
            ad.Tensor(events),
            ad.Tensor(codebook.prototypes),
            codebook.temperature,
            scales,
            scale_normalize,
        )
    return templates.values


def template_weights(
    events: np.ndarray,
    codebook: PrototypeCodebook,
    scales: tuple[int, ...] = DEFAULT_SCALES,
) -> list[tuple[int, np.ndarray]]:
    """Per-scale attention weight matrices for inspection/export."""
    events = check_matrix(events, "events", n_cols=codebook.dim)
    with ad.no_grad():
        _, weights = template_graph(
            ad.Tensor(events), ad.Tensor(codebook.prototypes), codebook.temperature, scales
        )
    return [(s, w.values) for s, w in weights]


def position_prototype_weights(
    events: np.ndarray,
    codebook: PrototypeCodebook,
    scales: tuple[int, ...] = DEFAULT_SCALES,
    scale_normalize: bool = True,
) -> np.ndarray:
    """Aggregate per-position prototype coefficients (T, K): the mixture
    weights whose product with the prototypes gives the templates."""
    events = check_matrix(events, "events", n_cols=codebook.dim)
    stream_length = events.shape[0]
    total = np.zeros((stream_length, codebook.size))
    per_scale = template_weights(events, codebook, scales)
    for s, alpha in per_scale:
        _, placement = _scale_operators(stream_length, s)
        total += placement @ alpha
    if scale_normalize:
        total /= len(per_scale)
    return total


class TemplateEncoder(BaseEstimator, TransformerMixin):
    """Learns a prototype codebook from token sequences and encodes each
    sequence into a template embedding matrix.

    Parameters mirror the config file: embedding dimension, prototype count,
    temperature, window scales, whether templates are averaged over scales,
    and whether k-means fits on raw event vectors or on window means.
    """

    def __init__(
        self,
        embed_dim: int = 64,
        n_prototypes: int = 32,
        temperature: float = 0.5,
        scales: tuple[int, ...] = DEFAULT_SCALES,
        scale_normalize: bool = True,
        fit_on: str = "events",
        seed: int = 0,
        kmeans_max_iter: int = 100,
        kmeans_tol: float = 1e-6,
    ):
        self.embed_dim = embed_dim
        self.n_prototypes = n_prototypes
        self.temperature = temperature
        self.scales = scales
        self.scale_normalize = scale_normalize
        self.fit_on = fit_on
        self.seed = seed
        self.kmeans_max_iter = kmeans_max_iter
        self.kmeans_tol = kmeans_tol

    def _embed_sequences(self, sequences: list[list[list[str]]]) -> list[np.ndarray]:
        return [embed_stream(seq, self.embed_dim) for seq in sequences]

    def fit(self, sequences: list[list[list[str]]], y=None) -> "TemplateEncoder":
        """Fit the codebook. `sequences` is a list of sequences, each a list
        of token lists."""
        if self.fit_on not in ("events", "window_means"):
            raise ValueError(f"fit_on must be 'events' or 'window_means', got {self.fit_on!r}")
        event_mats = self._embed_sequences(sequences)
        if self.fit_on == "events":
            pool = np.vstack(event_mats)
        else:
            means = []
            for mat in event_mats:
                for wset in extract_windows(mat.shape[0], self.scales):
                    averaging, _ = _scale_operators(mat.shape[0], wset.scale)
                    means.append(averaging @ mat)
            pool = np.vstack(means)
        self.codebook_ = fit_prototypes(
            pool,
            k=self.n_prototypes,
            seed=self.seed,
            temperature=self.temperature,
            max_iter=self.kmeans_max_iter,
            tol=self.kmeans_tol,
        )
        return self

    def transform(self, sequences: list[list[list[str]]]) -> list[np.ndarray]:
        """Template matrix (T, embed_dim) per input sequence."""
        if not hasattr(self, "codebook_"):
            raise RuntimeError("TemplateEncoder.transform called before fit")
        return [
            template_embed(mat, self.codebook_, self.scales, self.scale_normalize)
            for mat in self._embed_sequences(sequences)
        ]
