import math

import numpy as np
import pytest

from logtriage import autodiff as ad
from logtriage import templates
from logtriage.embedding import PrototypeCodebook


def make_codebook(rng, k, d, temperature=0.5):
    return PrototypeCodebook(prototypes=rng.standard_normal((k, d)), temperature=temperature)


# --- independent straight-line oracle -------------------------------------

def oracle_templates(events, prototypes, temperature, scales, scale_normalize=True):
    """Loop reimplementation of the window/attention/mixture pipeline using
    scalar math only. Positions past the last window start of a scale reuse
    that scale's final window."""
    T, d = events.shape
    K = prototypes.shape[0]
    usable = [s for s in sorted(set(scales)) if s <= T]
    out = [[0.0] * d for _ in range(T)]
    for s in usable:
        n_windows = T - s + 1
        alphas = []
        for w in range(n_windows):
            wbar = [sum(events[w + j][c] for j in range(s)) / s for c in range(d)]
            scores = []
            for kk in range(K):
                dist = sum((wbar[c] - prototypes[kk][c]) ** 2 for c in range(d))
                scores.append(-dist / temperature)
            m = max(scores)
            exps = [math.exp(v - m) for v in scores]
            z = sum(exps)
            alphas.append([e / z for e in exps])
        for i in range(T):
            alpha = alphas[min(i, n_windows - 1)]
            for c in range(d):
                out[i][c] += sum(alpha[kk] * prototypes[kk][c] for kk in range(K))
    if scale_normalize:
        out = [[v / len(usable) for v in row] for row in out]
    return np.array(out)


# --- windows ----------------------------------------------------------------

def test_window_counts():
    sets = templates.extract_windows(10, (3,))
    assert len(sets) == 1
    assert sets[0].starts == tuple(range(8))
    assert sets[0].starts[0] == 0 and sets[0].starts[-1] == 7


def test_short_stream_skips_large_scales():
    sets = templates.extract_windows(3, (3, 5, 7))
    assert [w.scale for w in sets] == [3]
    assert sets[0].skipped_scales == (5, 7)
    assert len(sets[0].starts) == 1


def test_all_scales_skipped_is_degenerate():
    with pytest.raises(templates.DegenerateWindowError, match="scales=\\(1,\\)"):
        templates.extract_windows(2, (3, 5, 7))


def test_window_mean_of_identical_vectors():
    v = np.arange(6.0)
    assert np.allclose(templates.window_mean(np.tile(v, (3, 1))), v)


def test_window_mean_cancellation():
    v = np.arange(1.0, 7.0)
    assert np.allclose(templates.window_mean(np.vstack([v, -v])), 0.0)


def test_window_mean_matches_direct_sum():
    rng = np.random.default_rng(0)
    w = rng.standard_normal((5, 8))
    expected = sum(w[i] for i in range(5)) / 5
    assert np.allclose(templates.window_mean(w), expected, atol=1e-15)


# --- attention --------------------------------------------------------------

def test_single_prototype_gets_all_weight():
    rng = np.random.default_rng(1)
    book = make_codebook(rng, 1, 8)
    alpha = templates.fuzzy_attention(rng.standard_normal(8), book)
    assert np.allclose(alpha, [1.0])


def test_equidistant_prototypes_split_evenly():
    protos = np.zeros((2, 8))
    protos[0, 0] = 1.0
    protos[1, 0] = -1.0
    book = PrototypeCodebook(prototypes=protos, temperature=0.5)
    alpha = templates.fuzzy_attention(np.zeros(8), book)
    assert np.allclose(alpha, [0.5, 0.5])


def test_attention_value_against_hand_softmax():
    # distances (0, 1) at temperature 0.5 give softmax of (0, -2)
    protos = np.zeros((2, 8))
    protos[1, 0] = 1.0
    book = PrototypeCodebook(prototypes=protos, temperature=0.5)
    alpha = templates.fuzzy_attention(np.zeros(8), book)
    assert abs(alpha[0] - 1.0 / (1.0 + math.exp(-2.0))) < 1e-12
    assert abs(alpha[0] - 0.8808) < 1e-4


def test_attention_weights_sum_to_one():
    rng = np.random.default_rng(2)
    book = make_codebook(rng, 5, 8)
    for _ in range(50):
        alpha = templates.fuzzy_attention(rng.standard_normal(8), book)
        assert abs(alpha.sum() - 1.0) < 1e-12
        assert np.all(alpha >= 0)


def test_smaller_temperature_concentrates_weights():
    rng = np.random.default_rng(3)
    protos = rng.standard_normal((4, 8))
    w = rng.standard_normal(8)
    hot = templates.fuzzy_attention(w, PrototypeCodebook(prototypes=protos, temperature=1.0))
    cold = templates.fuzzy_attention(w, PrototypeCodebook(prototypes=protos, temperature=0.2))
    assert cold.max() >= hot.max() - 1e-12


# --- template sequences -------------------------------------------------------

def test_single_prototype_single_scale_everywhere():
    rng = np.random.default_rng(4)
    book = make_codebook(rng, 1, 8)
    events = rng.standard_normal((6, 8))
    t = templates.template_embed(events, book, scales=(3,))
    for i in range(6):
        assert np.allclose(t[i], book.prototypes[0], atol=1e-12)


def test_sharp_temperature_snaps_to_prototype():
    rng = np.random.default_rng(5)
    protos = rng.standard_normal((4, 8)) * 3
    book = PrototypeCodebook(prototypes=protos, temperature=1e-3)
    events = np.tile(protos[2], (5, 1))
    t = templates.template_embed(events, book, scales=(3,))
    assert np.max(np.abs(t - protos[2])) < 1e-6


def test_pipeline_matches_oracle_small():
    rng = np.random.default_rng(6)
    protos = rng.standard_normal((2, 8))
    book = PrototypeCodebook(prototypes=protos, temperature=0.5)
    events = rng.standard_normal((5, 8))
    ours = templates.template_embed(events, book, scales=(3,))
    ref = oracle_templates(events, protos, 0.5, (3,))
    assert np.max(np.abs(ours - ref)) < 1e-10


def test_pipeline_matches_oracle_multiscale():
    rng = np.random.default_rng(7)
    for trial in range(10):
        T = int(rng.integers(3, 12))
        K = int(rng.integers(2, 5))
        protos = rng.standard_normal((K, 8))
        book = PrototypeCodebook(prototypes=protos, temperature=0.7)
        events = rng.standard_normal((T, 8))
        ours = templates.template_embed(events, book)
        ref = oracle_templates(events, protos, 0.7, templates.DEFAULT_SCALES)
        assert np.max(np.abs(ours - ref)) < 1e-10


def test_convex_hull_bound_per_coordinate():
    rng = np.random.default_rng(8)
    protos = rng.standard_normal((4, 8))
    book = PrototypeCodebook(prototypes=protos, temperature=0.5)
    events = rng.standard_normal((9, 8))
    t = templates.template_embed(events, book)
    lo = protos.min(axis=0) - 1e-9
    hi = protos.max(axis=0) + 1e-9
    assert np.all(t >= lo[None, :])
    assert np.all(t <= hi[None, :])


def test_scale_normalize_off_sums_contributions():
    rng = np.random.default_rng(9)
    book = make_codebook(rng, 3, 8)
    events = rng.standard_normal((10, 8))
    avg = templates.template_embed(events, book, scale_normalize=True)
    raw = templates.template_embed(events, book, scale_normalize=False)
    assert np.allclose(raw, avg * 3, atol=1e-12)


def test_pipeline_deterministic():
    rng = np.random.default_rng(10)
    book = make_codebook(rng, 3, 8)
    events = rng.standard_normal((10, 8))
    a = templates.template_embed(events, book)
    b = templates.template_embed(events, book)
    assert np.array_equal(a, b)


def test_position_weights_reproduce_templates():
    rng = np.random.default_rng(11)
    book = make_codebook(rng, 4, 8)
    events = rng.standard_normal((9, 8))
    coeffs = templates.position_prototype_weights(events, book)
    rebuilt = coeffs @ book.prototypes
    direct = templates.template_embed(events, book)
    assert np.max(np.abs(rebuilt - direct)) < 1e-12
    assert np.allclose(coeffs.sum(axis=1), 1.0, atol=1e-12)


def test_template_graph_gradients():
    rng = np.random.default_rng(12)
    protos = ad.parameter(rng.standard_normal((2, 8)))
    events = ad.Tensor(rng.standard_normal((5, 8)))

    def closure():
        t, _ = templates.template_graph(events, protos, 0.5, (3,))
        return ad.mean(ad.mul(t, t))

    report = ad.check_gradients(closure, [protos])
    assert report["max_rel_err"] < 1e-5


def test_encoder_fit_transform_shapes():
    rng = np.random.default_rng(13)
    vocab = [f"word{i}" for i in range(30)]
    seqs = [
        [[vocab[int(rng.integers(30))] for _ in range(4)] for _ in range(12)]
        for _ in range(6)
    ]
    enc = templates.TemplateEncoder(embed_dim=16, n_prototypes=4, seed=0)
    mats = enc.fit(seqs).transform(seqs)
    assert len(mats) == 6
    assert all(m.shape == (12, 16) for m in mats)
    params = enc.get_params()
    assert params["n_prototypes"] == 4


def test_encoder_window_means_mode():
    rng = np.random.default_rng(14)
    vocab = [f"word{i}" for i in range(30)]
    seqs = [
        [[vocab[int(rng.integers(30))] for _ in range(4)] for _ in range(12)]
        for _ in range(6)
    ]
    enc = templates.TemplateEncoder(embed_dim=16, n_prototypes=4, seed=0, fit_on="window_means")
    mats = enc.fit(seqs).transform(seqs)
    assert all(m.shape == (12, 16) for m in mats)
