"""Command-line driver: ``crlso <command> --config run.ini --out DIR``."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .checkpoint import CheckpointError, load_bundle, save_bundle
from .config import ConfigError, RunConfig, load_config
from .graphspace import InvalidGraphError, RecordParseError, read_records, write_records
from .gvae import PackedGraphs, posterior_means
from .ndgrad import NumericalError
from .oracle import IntegrityError, OracleLookupError, SyntheticBench, load_tabular
from .predictor import correlation_metrics
from .search import LabeledSet, SearchConfig, make_rng, run_crlso, train_latent_space, write_curve, write_trace
from .toy import run_toy_study, write_toy_csv

log = logging.getLogger("crlso")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class DataError(RuntimeError):
    pass


def _limit_threads(n: int | None) -> None:
    if not n:
        return
    # BLAS reads these when it first spins up its pool; the numba kernels are serial
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ[var] = str(n)


def make_oracle(cfg: RunConfig):
    if cfg.oracle == "tabular":
        return load_tabular(cfg.oracle_path, cfg.space)
    return SyntheticBench.for_space(cfg.space, cfg.oracle_seed)


def _labeled_start(cfg: RunConfig, oracle, q_start: int, seed: int) -> LabeledSet:
    """Initial labeled set: from the configured dataset file, else uniform samples scored by the oracle."""
    if cfg.dataset:
        recs = [(g, s) for g, s in read_records(cfg.dataset, cfg.space) if s is not None]
        if len(recs) < 2:
            raise DataError(f"{cfg.dataset} holds fewer than two labeled architectures")
        return LabeledSet(recs)
    rng = make_rng(seed, 0)
    D = LabeledSet()
    while len(D) < q_start:
        g = cfg.space.sample(rng)
        if g not in D:
            D.add(g, oracle(g))
    return D


def _write_manifest(out: Path) -> None:
    entries = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            entries[str(p.relative_to(out))] = hashlib.sha256(p.read_bytes()).hexdigest()
    (out / "manifest.json").write_text(json.dumps({"files": entries}, indent=1, sort_keys=True) + "\n")


def cmd_enumerate(cfg: RunConfig, out: Path, args) -> None:
    scores = None
    if args.scores:
        oracle = make_oracle(cfg)
        if not isinstance(oracle, SyntheticBench):
            raise ConfigError("--scores needs the synthetic oracle")
        scores = oracle.all_scores.tolist()
    graphs = cfg.space.enumerate()
    n = write_records(out / "space.jsonl", zip(graphs, scores) if scores else ((g, None) for g in graphs))
    log.info("wrote %d architectures", n)


def cmd_train(cfg: RunConfig, out: Path, args) -> None:
    mode = args.mode or cfg.search.mode
    if mode == "random":
        raise ConfigError("train needs mode cr or unconstrained; random search trains no model")
    oracle = None if cfg.dataset else make_oracle(cfg)
    D = _labeled_start(cfg, oracle, cfg.search.Q_start, cfg.seed)
    models = train_latent_space(D, cfg.space, cfg.train, mode, make_rng(cfg.seed, 1))
    write_curve(out / "training_curve.csv", models.history)
    write_curve(out / "predictor_curve.csv", [{"epoch": i + 1, "loss": v} for i, v in enumerate(models.predictor.curve)])
    write_records(out / "labeled.jsonl", iter(D))
    save_bundle(out / "model.npz", models, cfg.train)


def _search_one(cfg: RunConfig, oracle, seed: int, mode: str, out: Path, tag: str) -> dict:
    sc = SearchConfig(**{**cfg.search.__dict__, "seed": seed, "mode": mode})
    ckpt_dir = out / "checkpoints"

    def on_ckpt(models, n):
        ckpt_dir.mkdir(exist_ok=True)
        save_bundle(ckpt_dir / f"{tag}_q{n}.npz", models, cfg.train)

    if isinstance(oracle, SyntheticBench):
        oracle.calls = 0
    res = run_crlso(cfg.space, oracle, sc, cfg.train, on_ckpt)
    write_trace(out / f"trace_{tag}.csv", res.trace)
    summary = {
        "mode": mode,
        "seed": seed,
        "best": res.best.to_record(res.best_score),
        "best_hash": res.best.arch_hash(),
        "best_score": res.best_score,
        "oracle_calls": res.oracle_calls,
        "fallback_iterations": res.fallbacks,
    }
    if isinstance(oracle, SyntheticBench):
        summary["rank"] = oracle.rank(res.best)
    (out / f"best_{tag}.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    if res.models is not None:
        save_bundle(out / f"model_{tag}.npz", res.models, cfg.train)
    return summary


def cmd_search(cfg: RunConfig, out: Path, args) -> None:
    oracle = make_oracle(cfg)
    modes = args.modes.split(",") if args.modes else [cfg.search.mode]
    seeds = cfg.seeds or [cfg.seed]
    rows = []
    for mode in modes:
        for seed in seeds:
            tag = f"{mode}_seed{seed}"
            rows.append(_search_one(cfg, oracle, seed, mode, out, tag))
            log.info("%s: best %.4f (%s)", tag, rows[-1]["best_score"], rows[-1].get("rank", "-"))
    with open(out / "summary.csv", "w") as fh:
        ranked = "rank" in rows[0]
        fh.write("mode,seed,best_hash,best_score,oracle_calls" + (",rank" if ranked else "") + "\n")
        for r in rows:
            fh.write(f"{r['mode']},{r['seed']},{r['best_hash']},{r['best_score']!r},{r['oracle_calls']}"
                     + (f",{r['rank']}" if ranked else "") + "\n")


def cmd_toy(cfg: RunConfig, out: Path, args) -> None:
    write_toy_csv(out / "toy.csv", run_toy_study(cfg.toy))


def eval_predictors(cfg: RunConfig, oracle, log_fn=None) -> list[dict]:
    """Per (N, repeat): train the semi-supervised pipeline from N labels once with the ICNN head and once
    with a same-shaped MLP head, then score each head on held-out architectures it never saw."""
    if not cfg.space.size():
        raise ConfigError("eval-predictor needs an enumerable space")
    graphs = list(cfg.space.enumerate())
    ev = cfg.eval
    if max(ev.sizes) + ev.heldout > len(graphs):
        raise ConfigError(f"[eval] largest size plus heldout exceeds the {len(graphs)} architectures of the space")
    results: list[dict] = []
    for N in ev.sizes:
        for rep in range(ev.repeats):
            perm = make_rng(cfg.seed, 10, N, rep).permutation(len(graphs))
            train_idx, test_idx = perm[:N], perm[N: N + ev.heldout]
            D = LabeledSet((graphs[i], oracle(graphs[i])) for i in train_idx)
            pool = [graphs[i] for i in perm[N + ev.heldout:]]
            test = PackedGraphs.from_graphs([graphs[i] for i in test_idx], cfg.space)
            true = np.array([oracle(graphs[i]) for i in test_idx])
            for name, mode in (("ICNN", "cr"), ("MLP", "unconstrained")):
                # same stream for both heads: identical split, predictor and pseudo-labels
                models = train_latent_space(D, cfg.space, cfg.train, mode, make_rng(cfg.seed, 11, N, rep), pool)
                pred = models.predict_latent(posterior_means(test, models.encoder))
                r, tau = correlation_metrics(pred, true)
                results.append({"model": name, "N": N, "repeat": rep, "pearson": r, "kendall": tau})
                if log_fn:
                    log_fn(results[-1])
    return results


def summarize_eval(results: list[dict]) -> list[dict]:
    rows = []
    for name in ("ICNN", "MLP"):
        for N in sorted({r["N"] for r in results}):
            sel = [r for r in results if r["model"] == name and r["N"] == N]
            p = np.array([r["pearson"] for r in sel])
            k = np.array([r["kendall"] for r in sel])
            rows.append({"model": name, "N": N, "repeats": len(sel), "pearson_mean": p.mean(), "pearson_std": p.std(),
                         "kendall_mean": k.mean(), "kendall_std": k.std()})
    return rows


def cmd_eval_predictor(cfg: RunConfig, out: Path, args) -> None:
    oracle = make_oracle(cfg)
    rows = summarize_eval(eval_predictors(cfg, oracle, lambda r: log.info("%s", r)))
    cols = ["model", "N", "repeats", "pearson_mean", "pearson_std", "kendall_mean", "kendall_std"]
    with open(out / "predictor_comparison.csv", "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(repr(float(r[c])) if isinstance(r[c], float | np.floating) else str(r[c])
                              for c in cols) + "\n")


def viz_dataset(cfg: RunConfig, path: str | None):
    if path:
        recs = [(g, s) for g, s in read_records(path, cfg.space) if s is not None]
        if not recs:
            raise DataError(f"{path} has no labeled architectures")
        return [g for g, _ in recs], np.array([s for _, s in recs])
    oracle = make_oracle(cfg)
    if not isinstance(oracle, SyntheticBench):
        raise ConfigError("viz needs --dataset unless the oracle is the synthetic benchmark")
    return list(cfg.space.enumerate()), oracle.all_scores.copy()


def cmd_viz(cfg: RunConfig, out: Path, args) -> None:
    graphs, scores = viz_dataset(cfg, args.dataset or cfg.viz.dataset)
    order = np.lexsort((np.arange(scores.size), -scores))
    ranks = np.empty(scores.size, dtype=np.int64)
    ranks[order] = np.arange(1, scores.size + 1)
    packed = PackedGraphs.from_graphs(graphs, cfg.space)
    reports = {}
    many = len(args.checkpoint) > 1
    for i, path in enumerate(args.checkpoint):
        models, _ = load_bundle(path, cfg.space)
        Z = posterior_means(packed, models.encoder)
        label = models.mode if models.mode not in reports else f"{models.mode}{i}"
        suffix = f"_{label}" if many else ""
        proj, _, _ = analysis.pca_project(Z, 2)
        analysis.write_pca_csv(out / f"pca{suffix}.csv", proj, scores, ranks)
        rep = analysis.separation_report(Z, scores, cfg.viz.top_n, cfg.viz.worst_n)
        groups = np.concatenate([rep.top_index, rep.worst_index])
        analysis.write_cossim_csv(out / f"cossim{suffix}.csv", analysis.cosine_similarity_matrix(Z[groups], Z[groups]))
        reports[label] = rep
    analysis.write_separation_csv(out / "separation.csv", reports)


COMMANDS = {
    "train": cmd_train,
    "search": cmd_search,
    "toy": cmd_toy,
    "eval-predictor": cmd_eval_predictor,
    "viz": cmd_viz,
    "enumerate": cmd_enumerate,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crlso", description="Convexity-regularized latent space optimization")
    p.add_argument("--threads", type=int, default=None, help="cap worker threads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="INI run configuration")
        sp.add_argument("--out", required=True, help="output directory")
        if name == "train":
            sp.add_argument("--mode", choices=("cr", "unconstrained"))
        if name == "search":
            sp.add_argument("--modes", help="comma-separated modes overriding [search] mode")
        if name == "viz":
            sp.add_argument("--checkpoint", action="append", required=True, help="model checkpoint (repeatable)")
            sp.add_argument("--dataset", help="labeled JSON-lines file; default: full synthetic enumeration")
        if name == "enumerate":
            sp.add_argument("--scores", action="store_true", help="attach synthetic oracle scores")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    _limit_threads(args.threads)
    try:
        cfg = load_config(args.config)
        if args.command == "search" and args.modes:
            bad = [m for m in args.modes.split(",") if m not in ("cr", "unconstrained", "random")]
            if bad:
                raise ConfigError(f"unknown mode(s) {bad}; accepted values: cr, unconstrained, random")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, out, args)
        _write_manifest(out)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (DataError, RecordParseError, InvalidGraphError, IntegrityError, OracleLookupError, CheckpointError,
            FileNotFoundError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
