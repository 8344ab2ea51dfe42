import numpy as np
import pytest

from logtriage import bench, synth
from logtriage.envsim import ClusterSim, FaultSpec, RecoveryAction, REMEDY, min_steps_to_clear
from logtriage.planner import PolicyBundle
from logtriage.reasoner import FaultReasoner, RootCauseScores
from logtriage.templates import TemplateEncoder


@pytest.fixture(scope="module")
def pipeline():
    messages = [line.split(" ", 4)[-1] for line in synth.generate_plain_corpus(1500, seed=3)]
    encoder = TemplateEncoder(embed_dim=16, n_prototypes=8, temperature=0.1, scales=(1, 3), seed=0)
    encoder.fit(bench.chunk_messages(messages, 64))
    reasoner = FaultReasoner(embed_dim=16, rounds=2, seed=0).init_params()
    return messages, encoder, reasoner


def test_measure_lat_reports_positive_rate(pipeline):
    messages, encoder, reasoner = pipeline
    out = bench.measure_lat(messages, encoder, reasoner, sequence_length=64, repetitions=3)
    assert out["records_per_second"] > 0
    assert out["records"] == len(messages)


def test_measure_lat_median_within_bounds(pipeline):
    messages, encoder, reasoner = pipeline
    out = bench.measure_lat(messages, encoder, reasoner, sequence_length=64, repetitions=3)
    assert min(out["rates"]) <= out["records_per_second"] <= max(out["rates"])


def test_ingest_stage_at_least_as_fast_as_full(pipeline):
    messages, encoder, reasoner = pipeline
    fast = bench.measure_lat(messages, encoder, reasoner, repetitions=2, stage="ingest")
    full = bench.measure_lat(messages, encoder, reasoner, repetitions=2, stage="full")
    assert fast["records_per_second"] >= full["records_per_second"]


def test_throughput_size_stable(pipeline):
    messages, encoder, reasoner = pipeline
    single = bench.measure_lat(messages, encoder, reasoner, repetitions=3)
    double = bench.measure_lat(messages * 2, encoder, reasoner, repetitions=3)
    ratio = double["records_per_second"] / single["records_per_second"]
    assert 0.8 < ratio < 1.25


def test_measure_lat_rejects_small_corpus(pipeline):
    _, encoder, reasoner = pipeline
    with pytest.raises(bench.BenchConfigError):
        bench.measure_lat(["a"] * 10, encoder, reasoner)


def test_chunk_tokens_folds_short_tail():
    tokens = [["a"]] * 130
    chunks = bench.chunk_tokens(tokens, 64)
    assert [len(c) for c in chunks] == [64, 66]


def test_perfect_policy_hits_analytic_minimum():
    env = ClusterSim(campaign={s: FaultSpec("overload", 3, 0.7) for s in range(40)})

    def perfect(obs):
        kind = "overload"
        return env.actions.index(RecoveryAction(REMEDY[kind], 3))

    steps, cleared, _ = bench.run_episode(env, 0, perfect)
    assert cleared
    assert steps == min_steps_to_clear(FaultSpec("overload", 3, 0.7))


def test_measure_recovery_pairs_deterministic():
    env = ClusterSim()
    bundle = PolicyBundle(env.obs_size, env.n_actions, hidden=8, seed=0)
    seeds = list(range(100, 120))
    a = bench.measure_recovery(env, bundle, seeds)
    b = bench.measure_recovery(env, bundle, seeds)
    assert a == b
    assert len(a) == 20


def test_measure_recovery_needs_twenty_seeds():
    env = ClusterSim()
    bundle = PolicyBundle(env.obs_size, env.n_actions, hidden=8, seed=0)
    with pytest.raises(bench.BenchConfigError):
        bench.measure_recovery(env, bundle, list(range(5)))


def test_uncapped_episodes_count_horizon():
    env = ClusterSim(campaign={s: FaultSpec("crash", 0, 0.9) for s in range(200)})
    noop = env.actions.index(RecoveryAction("noop"))
    steps, cleared, _ = bench.run_episode(env, 0, lambda obs: noop)
    assert not cleared
    assert steps == env.horizon


def make_scores(ranking):
    psi = np.linspace(0.9, 0.1, len(ranking))
    order = np.array(ranking)
    full = np.empty(len(ranking))
    full[order] = psi
    return RootCauseScores(psi=full, ranking=order)


def test_localization_all_correct():
    scores = [make_scores([2, 0, 1]) for _ in range(5)]
    top1, top3 = bench.localization_accuracy(scores, [2] * 5)
    assert top1 == 1.0
    assert top3 == 1.0


def test_localization_topk_monotone():
    rng = np.random.default_rng(0)
    scores = []
    labels = []
    for _ in range(50):
        ranking = rng.permutation(10)
        scores.append(make_scores(list(ranking)))
        labels.append(int(rng.integers(10)))
    top1, top3 = bench.localization_accuracy(scores, labels)
    assert top3 >= top1


def test_random_scores_match_chance_rate():
    rng = np.random.default_rng(1)
    n, t = 4000, 10
    scores = []
    labels = []
    for _ in range(n):
        ranking = rng.permutation(t)
        scores.append(make_scores(list(ranking)))
        labels.append(int(rng.integers(t)))
    top1, _ = bench.localization_accuracy(scores, labels)
    assert abs(top1 - 0.1) < 0.02
