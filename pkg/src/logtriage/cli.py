"""Command-line interface: corpus generation, parsing, training, inference,
recovery simulation, and benchmarking.

Exit codes are stable API: 0 ok, 1 I/O failure, 2 configuration or data
error, 3 training divergence, 4 artifact/version mismatch. Every command
writes a manifest (inputs, hashes, versions) next to its outputs and echoes
the fully resolved configuration.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import bench as bench_mod
from . import container, envsim, synth
from . import planner as pl
from .bench import BenchReport
from .config import ConfigError, RunConfig, load_config
from .container import ArtifactError
from .embedding import CodebookError, PrototypeCodebook, embed_stream
from .ingest import CorpusError, load_corpus, tokenize
from .reasoner import FaultReasoner
from .templates import DegenerateWindowError, TemplateEncoder, position_prototype_weights
from .training import DivergenceError, JointTrainer, LabeledSequence, TrainerConfig

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_ARTIFACT = 4

SIM_SEED_BASE = 1000  # evaluation episodes live in their own seed range


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def _write_manifest(out_dir: Path, command: str, cfg: RunConfig | None,
                    inputs: list[Path], outputs: list[str], extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "config_hash": cfg.config_hash() if cfg else None,
        "inputs": {str(p): _sha256(p) for p in inputs if p.exists()},
        "outputs": sorted(outputs),
    }
    if extra:
        manifest.update(extra)
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _format_float(x: float) -> str:
    return repr(float(x))


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_format_float(v) if isinstance(v, float) else str(v) for v in row) + "\n")


# --- shared builders -----------------------------------------------------------

def _encoder_from_config(cfg: RunConfig) -> TemplateEncoder:
    return TemplateEncoder(
        embed_dim=cfg.get("codebook", "dim"),
        n_prototypes=cfg.get("codebook", "prototypes"),
        temperature=cfg.get("codebook", "temperature"),
        scales=cfg.get("templates", "scales"),
        scale_normalize=cfg.get("templates", "scale_normalize"),
        fit_on=cfg.get("codebook", "fit_on"),
        seed=cfg.get("run", "seed"),
        kmeans_max_iter=cfg.get("codebook", "kmeans_max_iter"),
        kmeans_tol=cfg.get("codebook", "kmeans_tol"),
    )


def _reasoner_from_config(cfg: RunConfig) -> FaultReasoner:
    return FaultReasoner(
        embed_dim=cfg.get("codebook", "dim"),
        rounds=cfg.get("reasoner", "rounds"),
        static_graph=cfg.get("reasoner", "static_graph"),
        init_noise=cfg.get("reasoner", "init_noise"),
        init_gain=cfg.get("reasoner", "init_gain"),
        seed=cfg.get("run", "seed"),
    ).init_params()


def _env_from_config(cfg: RunConfig, data_dir: Path | None = None) -> envsim.ClusterSim:
    campaign = None
    campaign_path = cfg.get("env", "campaign")
    if campaign_path is None and data_dir is not None:
        candidate = data_dir / "campaign.jsonl"
        campaign_path = str(candidate) if candidate.exists() else None
    if campaign_path:
        campaign = envsim.load_campaign(campaign_path)
    return envsim.ClusterSim(
        n_services=cfg.get("env", "services"),
        horizon=cfg.get("env", "horizon"),
        campaign=campaign,
        use_psi_features=cfg.get("env", "use_psi_features"),
    )


def _trainer_config(cfg: RunConfig) -> TrainerConfig:
    return TrainerConfig(
        epochs=cfg.get("trainer", "epochs"),
        patience=cfg.get("trainer", "patience"),
        batch_size=cfg.get("trainer", "batch_size"),
        lr=cfg.get("trainer", "lr"),
        optimizer=cfg.get("trainer", "optimizer"),
        gamma=cfg.get("trainer", "gamma"),
        entropy_coef=cfg.get("trainer", "entropy_coef"),
        lambda_causal=cfg.get("trainer", "lambda_causal"),
        lambda_rl=cfg.get("trainer", "lambda_rl"),
        lambda_kl=cfg.get("trainer", "lambda_kl"),
        causal_temperature=cfg.get("trainer", "causal_temperature"),
        rl_episodes=cfg.get("trainer", "rl_episodes"),
        kl_probe_states=cfg.get("trainer", "kl_probe_states"),
        val_fraction=cfg.get("trainer", "val_fraction"),
        seed=cfg.get("run", "seed"),
        prior_grad=cfg.get("planner", "prior_grad"),
        shape_in_loss=cfg.get("planner", "shape_in_loss"),
    )


def _load_labeled_corpus(cfg: RunConfig, data_dir: Path):
    corpus_path = data_dir / "corpus.log"
    labels_path = data_dir / "labels.jsonl"
    if not corpus_path.exists() or not labels_path.exists():
        raise ConfigError(
            f"dataset directory {data_dir} must contain corpus.log and labels.jsonl"
        )
    stream = load_corpus(corpus_path, cfg.header_format())
    labels = synth.read_labels(labels_path)
    tokens = [tokenize(r.message) for r in stream.records]
    sequences = []
    for lab in labels:
        if lab.start_line + lab.length > len(tokens):
            raise ConfigError(f"label for sequence {lab.sequence} exceeds corpus length")
        sequences.append(tokens[lab.start_line : lab.start_line + lab.length])
    return stream, labels, sequences, [corpus_path, labels_path]


def _save_model(path: Path, reasoner: FaultReasoner, bundle: pl.PolicyBundle | None) -> None:
    arrays = reasoner.state_arrays()
    if bundle is not None:
        arrays.update(bundle.state_arrays())
    container.write_arrays(path, arrays)


def _load_model(path: Path) -> tuple[FaultReasoner, pl.PolicyBundle | None]:
    arrays = container.read_arrays(path)
    reasoner = FaultReasoner().load_state_arrays(arrays)
    bundle = pl.PolicyBundle.from_state_arrays(arrays) if "policy.meta" in arrays else None
    return reasoner, bundle


# --- subcommands -----------------------------------------------------------------

def cmd_gen_corpus(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    out_dir = Path(args.out or cfg.get("run", "out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    n_sequences = args.sequences
    if args.records is not None:
        n_sequences = (args.records + args.length - 1) // args.length
    paths = synth.write_corpus(
        out_dir,
        n_sequences=n_sequences,
        length=args.length,
        n_patterns=args.patterns,
        seed=args.seed if args.seed is not None else cfg.get("run", "seed"),
        n_services=cfg.get("env", "services"),
    )
    cfg.echo(out_dir)
    _write_manifest(out_dir, "gen-corpus", cfg, [], [p.name for p in paths.values()],
                    {"sequences": n_sequences, "length": args.length})
    print(f"wrote {n_sequences} sequences ({n_sequences * args.length} records) to {out_dir}")
    return EXIT_OK


def cmd_parse(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    out_dir = Path(args.out or cfg.get("run", "out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    input_path = Path(args.input)
    stream = load_corpus(input_path, cfg.header_format())
    tokens = [tokenize(r.message) for r in stream.records]
    seq_len = cfg.get("run", "sequence_length")
    chunks = bench_mod.chunk_tokens(tokens, seq_len)

    encoder = _encoder_from_config(cfg)
    if args.artifacts:
        encoder.codebook_ = PrototypeCodebook.load(Path(args.artifacts) / "codebook.lidc")
    else:
        encoder.fit(chunks)
    encoder.codebook_.save(out_dir / "codebook.lidc")

    templates_path = out_dir / "templates.jsonl"
    with open(templates_path, "w", encoding="utf-8") as fh:
        position = 0
        for chunk in chunks:
            events = embed_stream(chunk, encoder.embed_dim)
            mats = encoder.transform([chunk])[0]
            weights = position_prototype_weights(
                events, encoder.codebook_, encoder.scales, encoder.scale_normalize
            )
            for local, vec in enumerate(mats):
                top = np.argsort(-weights[local])[:3]
                fh.write(json.dumps({
                    "index": position,
                    "values": [round(float(v), 9) for v in vec],
                    "top_prototypes": [[int(k), round(float(weights[local][k]), 9)] for k in top],
                }) + "\n")
                position += 1

    stats_path = out_dir / "stats.json"
    stats_path.write_text(json.dumps(stream.stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    cfg.echo(out_dir)
    _write_manifest(out_dir, "parse", cfg, [input_path],
                    ["templates.jsonl", "stats.json", "codebook.lidc"], {"records": len(stream)})
    print(f"parsed {len(stream)} records ({stream.unmatched} unmatched, {stream.blank} blank) -> {out_dir}")
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    out_dir = Path(args.out or cfg.get("run", "out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    data_dir = Path(args.data)
    stream, labels, sequences, inputs = _load_labeled_corpus(cfg, data_dir)

    encoder = _encoder_from_config(cfg)
    mats = encoder.fit(sequences).transform(sequences)
    encoder.codebook_.save(out_dir / "codebook.lidc")
    dataset = [
        LabeledSequence(mat, lab.root_cause_index, lab.chain)
        for mat, lab in zip(mats, labels)
    ]

    env = _env_from_config(cfg, data_dir)
    reasoner = _reasoner_from_config(cfg)
    bundle = pl.PolicyBundle(
        env.obs_size, env.n_actions,
        hidden=cfg.get("planner", "hidden"),
        seed=cfg.get("run", "seed"),
        shaping=cfg.get("planner", "shaping"),
    )
    trainer = JointTrainer(reasoner, bundle, env, _trainer_config(cfg))

    diverged = False
    try:
        result = trainer.fit(dataset)
    except DivergenceError as exc:
        if exc.result is None:
            raise
        result = exc.result
        diverged = True

    _save_model(out_dir / "model.lidp", reasoner, bundle)
    _write_csv(
        out_dir / "history.csv",
        ["epoch", "l_fault", "l_causal", "l_rl", "kl", "total", "val_total"],
        [[r.epoch, r.l_fault, r.l_causal, r.l_rl, r.kl, r.total, r.val_total] for r in result.history],
    )
    _write_csv(
        out_dir / "rl_curve.csv",
        ["episode", "return", "steps", "actor_loss", "critic_loss", "kl"],
        [[r.episode, r.ret, r.steps, r.actor_loss, r.critic_loss, r.kl] for r in result.rl_curve],
    )
    cfg.echo(out_dir)
    _write_manifest(out_dir, "fit", cfg, inputs,
                    ["model.lidp", "codebook.lidc", "history.csv", "rl_curve.csv", "report.txt"],
                    {"epochs_run": len(result.history), "best_epoch": result.best_epoch,
                     "stopped_early": result.stopped_early, "diverged": diverged})

    if diverged:
        print(f"training diverged; last good checkpoint written to {out_dir / 'model.lidp'}")
        return EXIT_DIVERGED

    report = _fit_report(cfg, stream, labels, dataset, encoder, reasoner, bundle, env)
    (out_dir / "report.txt").write_text(_report_text(report), encoding="utf-8")
    print(_report_text(report), end="")
    return EXIT_OK


def _fit_report(cfg, stream, labels, dataset, encoder, reasoner, bundle, env) -> BenchReport:
    import time

    start = time.perf_counter()
    messages = [r.message for r in stream.records]
    lat = bench_mod.measure_lat(
        messages, encoder, reasoner,
        sequence_length=cfg.get("run", "sequence_length"),
        repetitions=cfg.get("bench", "repetitions"),
    )
    # held-out split accuracy, mirroring the trainer's seeded shuffle
    rng = np.random.default_rng(cfg.get("run", "seed"))
    order = rng.permutation(len(dataset))
    n_val = int(round(len(dataset) * cfg.get("trainer", "val_fraction")))
    val_idx = order[:n_val] if n_val else order
    scores = [reasoner.score_events(dataset[i].templates) for i in val_idx]
    top1, top3 = bench_mod.localization_accuracy(
        scores, [dataset[i].root_cause_index for i in val_idx]
    )
    pairs = bench_mod.measure_recovery(
        env, bundle, [SIM_SEED_BASE + i for i in range(20)], mode="greedy"
    )
    return BenchReport(
        records_per_second=lat["records_per_second"],
        config_hash=cfg.config_hash(),
        wall_clock=time.perf_counter() - start,
        mean_recovery_steps=float(np.mean([p.policy_steps for p in pairs])),
        baseline_recovery_steps=float(np.mean([p.baseline_steps for p in pairs])),
        localization_top1=top1,
        localization_top3=top3,
    )


def _report_text(report: BenchReport) -> str:
    lines = [
        "== run report ==",
        f"note: {report.notes}",
    ]
    for key, value in report.rows().items():
        if isinstance(value, float):
            value = f"{value:.4f}"
        lines.append(f"{key}: {value}")
    return "\n".join(lines) + "\n"


def cmd_infer(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    art_dir = Path(args.artifacts)
    resolved = art_dir / "config.resolved.ini"
    if resolved.exists() and args.config is None:
        cfg = load_config(resolved, _overrides(args))
    out_dir = Path(args.out or cfg.get("run", "out"))
    out_dir.mkdir(parents=True, exist_ok=True)

    codebook = PrototypeCodebook.load(art_dir / "codebook.lidc")
    reasoner, _ = _load_model(art_dir / "model.lidp")
    encoder = _encoder_from_config(cfg)
    encoder.codebook_ = codebook

    input_path = Path(args.input)
    stream = load_corpus(input_path, cfg.header_format())
    tokens = [tokenize(r.message) for r in stream.records]
    seq_len = cfg.get("run", "sequence_length")
    chunks = bench_mod.chunk_tokens(tokens, seq_len)

    report_path = out_dir / "rootcause.jsonl"
    with open(report_path, "w", encoding="utf-8") as fh:
        for seq_index, chunk in enumerate(chunks):
            mat = encoder.transform([chunk])[0]
            trace = reasoner.trace(mat)
            scores = reasoner.score_events(mat)
            attention = trace.graphs[-1].matrix
            rank_of = np.empty(scores.psi.size, dtype=int)
            rank_of[scores.ranking] = np.arange(scores.psi.size)
            for i in range(scores.psi.size):
                incoming = np.argsort(-attention[i])[:3]
                fh.write(json.dumps({
                    "sequence": seq_index,
                    "index": i,
                    "psi": round(float(scores.psi[i]), 9),
                    "rank": int(rank_of[i]),
                    "top_edges": [[int(j), round(float(attention[i][j]), 9)] for j in incoming],
                }) + "\n")

    cfg.echo(out_dir)
    _write_manifest(out_dir, "infer", cfg, [input_path, art_dir / "model.lidp"],
                    ["rootcause.jsonl"], {"sequences": len(chunks)})
    print(f"scored {len(chunks)} sequences -> {report_path}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    art_dir = Path(args.artifacts)
    resolved = art_dir / "config.resolved.ini"
    if resolved.exists() and args.config is None:
        cfg = load_config(resolved, _overrides(args))
    out_dir = Path(args.out or cfg.get("run", "out"))
    out_dir.mkdir(parents=True, exist_ok=True)

    _, bundle = _load_model(art_dir / "model.lidp")
    if bundle is None:
        raise ArtifactError(f"{art_dir / 'model.lidp'} holds no policy arrays")
    env = _env_from_config(cfg)
    seeds = [SIM_SEED_BASE + i for i in range(args.episodes)]

    pairs = bench_mod.measure_recovery(env, bundle, seeds, mode=args.mode)
    outputs = ["paired.csv"]
    for seed in seeds:
        if args.mode == "greedy":
            select = bench_mod.greedy_selector(bundle)
        else:
            select = bench_mod.sampling_selector(bundle, np.random.default_rng(seed + 101))
        _, _, trace = bench_mod.run_episode(env, seed, select, collect_trace=True)
        trace_path = out_dir / f"trace_{seed}.jsonl"
        with open(trace_path, "w", encoding="utf-8") as fh:
            for row in trace:
                fh.write(json.dumps(row) + "\n")
        outputs.append(trace_path.name)

    _write_csv(
        out_dir / "paired.csv",
        ["seed", "policy_steps", "baseline_steps", "policy_cleared", "baseline_cleared"],
        [[p.seed, p.policy_steps, p.baseline_steps, int(p.policy_cleared), int(p.baseline_cleared)] for p in pairs],
    )
    cfg.echo(out_dir)
    _write_manifest(out_dir, "simulate", cfg, [art_dir / "model.lidp"], outputs,
                    {"episodes": args.episodes, "mode": args.mode})
    mean_policy = float(np.mean([p.policy_steps for p in pairs]))
    mean_base = float(np.mean([p.baseline_steps for p in pairs]))
    print(f"{args.episodes} episodes: policy mean {mean_policy:.2f} steps, uniform baseline {mean_base:.2f}")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    out_dir = Path(args.out or cfg.get("run", "out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus_path = Path(args.corpus)
    if not corpus_path.exists():
        raise ConfigError(f"bench corpus {corpus_path} does not exist")
    stream = load_corpus(corpus_path, cfg.header_format())
    messages = [r.message for r in stream.records]
    seq_len = cfg.get("run", "sequence_length")

    dims = list(cfg.get("bench", "sweep_dims")) or [cfg.get("codebook", "dim")]
    if args.sweep:
        sweep = args.sweep[2:] if args.sweep.startswith("d=") else args.sweep
        dims = [int(tok) for tok in sweep.split(",")]

    rows = []
    import time
    for dim in dims:
        start = time.perf_counter()
        encoder = TemplateEncoder(
            embed_dim=dim,
            n_prototypes=cfg.get("codebook", "prototypes"),
            temperature=cfg.get("codebook", "temperature"),
            scales=cfg.get("templates", "scales"),
            scale_normalize=cfg.get("templates", "scale_normalize"),
            fit_on=cfg.get("codebook", "fit_on"),
            seed=cfg.get("run", "seed"),
        )
        sample = [tokenize(m) for m in messages[: min(len(messages), 20_000)]]
        chunks = [sample[i : i + seq_len] for i in range(0, len(sample), seq_len)]
        encoder.fit(chunks)
        reasoner = FaultReasoner(
            embed_dim=dim,
            rounds=cfg.get("reasoner", "rounds"),
            init_gain=cfg.get("reasoner", "init_gain"),
            seed=cfg.get("run", "seed"),
        ).init_params()
        lat = bench_mod.measure_lat(
            messages, encoder, reasoner,
            sequence_length=seq_len,
            repetitions=cfg.get("bench", "repetitions"),
        )
        wall = time.perf_counter() - start
        rows.append([dim, lat["records_per_second"], cfg.config_hash(), wall])
        print(f"dim={dim}: {lat['records_per_second']:.1f} records/s ({lat['records']} records, "
              f"{lat['repetitions']} repetitions)")

    _write_csv(out_dir / "bench.csv",
               ["dim", "records_per_second", "config_hash", "wall_clock"], rows)
    summary = ["== throughput report =="]
    summary.append("note: single-thread measurement; median of repetitions, warm-up excluded")
    for dim, rps, chash, wall in rows:
        summary.append(f"dim={dim}: {rps:.1f} records/s (wall {wall:.1f}s, config {chash})")
    (out_dir / "bench.txt").write_text("\n".join(summary) + "\n", encoding="utf-8")
    cfg.echo(out_dir)
    _write_manifest(out_dir, "bench", cfg, [corpus_path], ["bench.csv", "bench.txt"],
                    {"dims": dims})
    return EXIT_OK


# --- argument plumbing ---------------------------------------------------------

def _overrides(args) -> dict:
    out: dict[tuple[str, str], object] = {}
    if getattr(args, "seed", None) is not None:
        out[("run", "seed")] = args.seed
    if getattr(args, "out", None) is not None:
        out[("run", "out")] = args.out
    if getattr(args, "epochs", None) is not None:
        out[("trainer", "epochs")] = args.epochs
    if getattr(args, "scales", None) is not None:
        out[("templates", "scales")] = tuple(int(t) for t in args.scales.split(","))
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="logtriage",
        description="Log template abstraction, root-cause localization, and recovery simulation",
    )
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="configuration file (INI)")
    common.add_argument("--seed", type=int, help="override [run] seed")
    common.add_argument("--out", help="override [run] out directory")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", parents=[common], help="write a synthetic labeled corpus")
    p.add_argument("--sequences", type=int, default=500)
    p.add_argument("--records", type=int, help="total record budget (overrides --sequences)")
    p.add_argument("--length", type=int, default=32)
    p.add_argument("--patterns", type=int, default=8)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("parse", parents=[common], help="parse a corpus into templates")
    p.add_argument("--input", required=True)
    p.add_argument("--artifacts", help="reuse the codebook from a previous fit")
    p.add_argument("--scales", help="comma-separated window scales, e.g. 3 or 1,3,5")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("fit", parents=[common], help="train on a labeled corpus")
    p.add_argument("--data", required=True, help="directory with corpus.log + labels.jsonl")
    p.add_argument("--epochs", type=int, help="override [trainer] epochs")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("infer", parents=[common], help="score root causes for a corpus")
    p.add_argument("--artifacts", required=True, help="fit output directory")
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("simulate", parents=[common], help="run recovery episodes")
    p.add_argument("--artifacts", required=True, help="fit output directory")
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--mode", choices=("greedy", "sample"), default="greedy")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", parents=[common], help="measure analysis throughput")
    p.add_argument("--corpus", required=True)
    p.add_argument("--sweep", help="comma-separated reasoner dims, e.g. 16,32,64")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CorpusError, CodebookError, DegenerateWindowError,
            bench_mod.BenchConfigError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ArtifactError as exc:
        print(f"artifact error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
