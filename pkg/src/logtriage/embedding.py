"""Token-list embedding via feature hashing, and prototype learning by k-means.

Hashing is vocabulary-free and deterministic across platforms (keyed blake2b,
not Python's salted hash), so identical corpora always embed identically.
"""

from __future__ import annotations

from dataclasses import dataclass
from hashlib import blake2b
from pathlib import Path

import numpy as np

from . import container
from .validation import check_matrix, check_positive

MIN_EMBED_DIM = 8


class CodebookError(ValueError):
    """Prototype fitting asked for more clusters than distinct inputs."""


_hash_cache: dict[str, tuple[int, int]] = {}


def _token_slot(token: str) -> tuple[int, int]:
    """(bucket64, sign) for a token; bucket is reduced mod d by the caller."""
    slot = _hash_cache.get(token)
    if slot is None:
        digest = blake2b(token.encode("utf-8"), digest_size=9).digest()
        bucket = int.from_bytes(digest[:8], "little")
        sign = 1 if digest[8] & 1 else -1
        slot = (bucket, sign)
        if len(_hash_cache) < 1_000_000:
            _hash_cache[token] = slot
    return slot


def embed_event(tokens: list[str], dim: int = 64) -> np.ndarray:
    """L2-normalized signed-count hashing embedding of a token list.

    An empty token list maps to the zero vector, the one allowed
    zero-norm case.
    """
    if dim < MIN_EMBED_DIM:
        raise ValueError(f"embedding dimension must be >= {MIN_EMBED_DIM}, got {dim}")
    vec = np.zeros(dim)
    for token in tokens:
        bucket, sign = _token_slot(token)
        vec[bucket % dim] += sign
    norm = np.linalg.norm(vec)
    if norm > 0:
        vec /= norm
    return vec


def embed_stream(token_lists: list[list[str]], dim: int = 64) -> np.ndarray:
    """Stack embed_event over a sequence; shape (T, dim)."""
    out = np.zeros((len(token_lists), dim))
    for i, tokens in enumerate(token_lists):
        out[i] = embed_event(tokens, dim)
    return out


@dataclass
class PrototypeCodebook:
    """K fitted prototype vectors plus the soft-assignment temperature."""

    prototypes: np.ndarray  # (K, d)
    temperature: float
    seed: int = 0

    def __post_init__(self):
        self.prototypes = check_matrix(self.prototypes, "prototypes")
        self.temperature = check_positive(self.temperature, "temperature")

    @property
    def size(self) -> int:
        return self.prototypes.shape[0]

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]

    def save(self, path: str | Path) -> None:
        container.write_codebook(path, self.prototypes, self.temperature)

    @classmethod
    def load(cls, path: str | Path) -> "PrototypeCodebook":
        prototypes, temperature = container.read_codebook(path)
        return cls(prototypes=prototypes, temperature=temperature)


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Standard D^2-weighted seeding; never picks a duplicate of an existing
    center because those carry zero weight."""
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            raise CodebookError("fewer distinct vectors than requested prototypes")
        probs = d2 / total
        centers[j] = x[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, np.sum((x - centers[j]) ** 2, axis=1))
    return centers


def _sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, (N, K), without the N*K*d blowup."""
    d2 = (
        (x * x).sum(axis=1)[:, None]
        + (centers * centers).sum(axis=1)[None, :]
        - 2.0 * (x @ centers.T)
    )
    return np.maximum(d2, 0.0)


def kmeans_objective(x: np.ndarray, centers: np.ndarray) -> float:
    return float(_sq_dists(x, centers).min(axis=1).sum())


def fit_prototypes(
    vectors: np.ndarray,
    k: int = 32,
    seed: int = 0,
    temperature: float = 0.5,
    max_iter: int = 100,
    tol: float = 1e-6,
) -> PrototypeCodebook:
    """Lloyd's k-means with k-means++ seeding over event vectors.

    Stops after max_iter sweeps or when the largest centroid shift drops
    below tol. Requires at least k distinct input vectors.
    """
    x = check_matrix(vectors, "vectors", min_rows=1)
    if np.unique(x, axis=0).shape[0] < k:
        raise CodebookError(
            f"need at least {k} distinct vectors to fit {k} prototypes"
        )
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(x, k, rng)
    for _ in range(max_iter):
        assign = _sq_dists(x, centers).argmin(axis=1)
        new_centers = centers.copy()  # empty clusters keep their centroid
        for j in range(k):
            members = x[assign == j]
            if members.shape[0] > 0:
                new_centers[j] = members.mean(axis=0)
        shift = np.linalg.norm(new_centers - centers, axis=1).max()
        centers = new_centers
        if shift < tol:
            break
    _check_separation(centers)
    return PrototypeCodebook(prototypes=centers, temperature=temperature, seed=seed)


def _check_separation(centers: np.ndarray, min_gap: float = 1e-8) -> None:
    k = centers.shape[0]
    if k < 2:
        return
    d2 = _sq_dists(centers, centers)
    d2[np.arange(k), np.arange(k)] = np.inf
    if d2.min() < min_gap**2:
        raise CodebookError("k-means produced coincident prototypes; lower k")
