"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading
from dataclasses import replace
from pathlib import Path

from . import dataset as ds
from . import orchestrator, stats
from .config import ToyConfig, load_run_config, load_toy_config
from .errors import CapforgeError, ConfigError
from .gateway import CaptionerPool
from .shear import DEFAULT_TOKENIZER, Fallback, ShearPolicy, compute_shear_limit, shear_caption
from .toyclip import ablation
from .toyclip.features import read_features
from .toyclip.synthetic import make_corpus
from .toyclip.train import EncoderParams, ViewPolicy, eval_retrieval, train

log = logging.getLogger("capforge")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# enhance / plan / shear


def cmd_enhance(args) -> int:
    cfg = load_run_config(args.config)
    overrides = {k: getattr(args, k) for k in ("shards", "workers", "drop_policy", "seed") if getattr(args, k) is not None}
    if args.input:
        overrides["input"] = Path(args.input)
    if args.output_dir:
        overrides["output_dir"] = Path(args.output_dir)
    cfg = replace(cfg, **overrides)
    cfg.validate()

    policy = cfg.shear
    if cfg.shear_limit == "auto":
        limit = compute_shear_limit((e.caption for e in ds.read_annotations(cfg.input)), cfg.tokenizer)
        policy = replace(policy, max_tokens=limit)
    elif cfg.shear_limit is not None:
        policy = replace(policy, max_tokens=cfg.shear_limit)
    log.info("shear limit T=%d", policy.max_tokens)

    stop = threading.Event()

    def on_signal(signum, frame):
        log.warning("signal %d received, finishing the current entries", signum)
        stop.set()

    previous = {s: signal.signal(s, on_signal) for s in (signal.SIGINT, signal.SIGTERM)} if threading.current_thread() is threading.main_thread() else {}
    try:
        with CaptionerPool(cfg.members()) as pool:
            manifest, report = orchestrator.run_pipeline(
                cfg.input,
                cfg.output_dir,
                cfg.output_dir / "enhanced.jsonl",
                pool,
                policy,
                shard_count=cfg.shards,
                workers=cfg.workers,
                spec=cfg.tokenizer,
                drop_policy=cfg.drop_policy,
                resume=args.resume,
                created_at=cfg.created_at,
                stop=stop,
            )
    finally:
        for s, h in previous.items():
            signal.signal(s, h)

    print(json.dumps({"entries": manifest.entry_count, "pool": list(manifest.pool_ids), "report": report.to_dict()}, sort_keys=True))
    if report.dropped_lines or report.per_model_failures:
        for model_id, n in report.per_model_failures.items():
            print(f"failures {model_id}: {n}", file=sys.stderr)
        if report.dropped_lines:
            print(f"dropped lines: {report.dropped_lines}", file=sys.stderr)
        if args.strict:
            return EXIT_RUNTIME
    return EXIT_OK


def cmd_plan(args) -> int:
    path = Path(args.input)
    if not path.is_file():
        raise ConfigError(f"input {path} does not exist")
    print(json.dumps(orchestrator.plan_shards(path, args.shards).to_dict()))
    return EXIT_OK


def cmd_shear(args) -> int:
    src = Path(args.input)
    if not src.is_file():
        raise ConfigError(f"input {src} does not exist")
    if args.auto_limit:
        limit = compute_shear_limit(e.caption for e in ds.read_annotations(args.auto_limit))
    else:
        limit = args.max_tokens
    policy = ShearPolicy(max_tokens=limit, min_clause_chars=args.min_clause_chars, fallback=Fallback(args.fallback))
    lines = src.read_text(encoding="utf-8").splitlines()
    out = [shear_caption(line, policy).text for line in lines]
    text = "\n".join(out) + ("\n" if out else "")
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# stats


def _load_dataset(path: Path) -> list:
    with path.open("r", encoding="utf-8") as fh:
        first = next((json.loads(line) for line in fh if line.strip()), None)
    if first is not None and "generated" in first:
        return list(ds.read_enhanced(path))
    return list(ds.read_annotations(path))


def cmd_stats(args) -> int:
    path = Path(args.dataset)
    if not path.is_file():
        raise ConfigError(f"dataset {path} does not exist")
    if not (args.lengths or args.wordfreq or args.similarity):
        raise ConfigError("choose at least one of --lengths, --wordfreq, --similarity")
    out_dir = Path(args.out) if args.out else path.parent
    entries = _load_dataset(path)
    out_dir.mkdir(parents=True, exist_ok=True)
    report: dict = {"dataset": str(path)}

    if args.lengths:
        report["lengths"] = stats.length_stats(entries, DEFAULT_TOKENIZER).to_dict()
    if args.wordfreq:
        stop = stats.STOPWORDS
        if args.stopwords:
            stop = Path(args.stopwords).read_text(encoding="utf-8").split()
        lexicon = Path(args.lexicon).read_text(encoding="utf-8").split() if args.lexicon else None
        table = stats.word_frequency(entries, args.top, stop, lexicon)
        report["word_frequency"] = table.to_dict()
        report["wordcloud_csv"] = [str(p) for p in stats.export_wordcloud_counts(table, out_dir / "wordcloud")]
    if args.similarity:
        if args.provider == "hasher":
            provider = stats.DeterministicHasher(args.dim, args.seed)
        else:
            if not args.provider_url:
                raise ConfigError("--provider http needs --provider-url")
            provider = stats.HttpEmbeddingService(args.provider_url, args.dim)
        base = Path(args.image_root) if args.image_root else path.parent

        def load_image(entry):
            ref = Path(entry.image_ref)
            return (ref if ref.is_absolute() else base / ref).read_bytes()

        export = out_dir / "embeddings.jsonl" if args.export_embeddings else None
        dist = stats.similarity_distribution(entries, provider, load_image, args.pairing.replace("-", "_"), export_path=export)
        report["similarity"] = {"pairing": args.pairing, "provider": provider.kind, **dist.to_dict()}

    _write_json(out_dir / "stats.json", report)
    print(out_dir / "stats.json")
    return EXIT_OK


# ---------------------------------------------------------------------------
# toy trainer


def _toy_config(args) -> ToyConfig:
    cfg = load_toy_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = ToyConfig(cfg.corpus.with_(seed=args.seed), replace(cfg.train, seed=args.seed), cfg.views)
    if getattr(args, "views", None):
        try:
            cfg = ToyConfig(cfg.corpus, cfg.train, ViewPolicy.parse(args.views))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return cfg


def cmd_train_toy(args) -> int:
    cfg = _toy_config(args)
    corpus = read_features(args.features) if args.features else make_corpus(cfg.corpus).train
    result = train(corpus, cfg.train, cfg.views)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result.params.save(out / "params.npz")
    _write_json(out / "train.json", {
        "config": result.config,
        "corpus": cfg.corpus.__dict__ if not args.features else {"features": str(args.features)},
        "loss_trace": result.loss_trace,
    })
    first, last = (result.loss_trace[0], result.loss_trace[-1]) if result.loss_trace else (None, None)
    print(json.dumps({"steps": len(result.loss_trace), "first_loss": first, "last_loss": last}))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _toy_config(args)
    params_path = Path(args.params)
    if not params_path.is_file():
        raise ConfigError(f"params file {params_path} does not exist")
    params = EncoderParams.load(params_path)
    eval_set = read_features(args.features) if args.features else make_corpus(cfg.corpus).eval
    reports = {d: eval_retrieval(params, eval_set, d).to_dict() for d in ("i2t", "t2i")}
    out = Path(args.out) if args.out else params_path.parent
    _write_json(out / "retrieval.json", reports)
    print(json.dumps(reports, sort_keys=True))
    return EXIT_OK


def _int_list(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            a, b = part.split("..")
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    return out


def cmd_ablate(args) -> int:
    cfg = _toy_config(args)
    try:
        grid = _int_list(args.grid)
        seeds = _int_list(args.seeds)
        axis = ablation.Axis(args.axis)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    directions = [d.strip() for d in args.directions.split(",") if d.strip()]
    if not grid or not seeds or not directions:
        raise ConfigError("grid, seeds and directions must be non-empty")
    if set(directions) - {"i2t", "t2i"}:
        raise ConfigError(f"directions must be i2t and/or t2i, got {args.directions!r}")
    rows = ablation.ablation_sweep(axis, grid, cfg.train, corpus_config=cfg.corpus, policy=cfg.views, seeds=seeds,
                                   directions=directions)
    path = ablation.write_ablation_csv(rows, args.out)
    print(json.dumps({"csv": str(path), "mean_i2t_r1": ablation.mean_by_setting(rows)}))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="capforge", description="Multi-captioner dataset enhancement and toy contrastive training.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("enhance", help="caption, shear and merge an annotation file")
    e.add_argument("config")
    e.add_argument("--input")
    e.add_argument("--output-dir")
    e.add_argument("--shards", type=int)
    e.add_argument("--workers", type=int)
    e.add_argument("--drop-policy", choices=[orchestrator.DROP, orchestrator.KEEP])
    e.add_argument("--seed", type=int)
    e.add_argument("--resume", action="store_true", help="continue from existing shard checkpoints")
    e.add_argument("--strict", action="store_true", help="exit 1 when any image or caption failed")
    e.set_defaults(func=cmd_enhance)

    pl = sub.add_parser("plan", help="print the shard plan without running it")
    pl.add_argument("input")
    pl.add_argument("--shards", type=int, default=1)
    pl.set_defaults(func=cmd_plan)

    sh = sub.add_parser("shear", help="shear a file of captions, one per line")
    sh.add_argument("input")
    sh.add_argument("-o", "--output")
    g = sh.add_mutually_exclusive_group()
    g.add_argument("--max-tokens", type=int, default=30)
    g.add_argument("--auto-limit", metavar="ANNOTATIONS", help="use the mean raw-caption length of this file as T")
    sh.add_argument("--min-clause-chars", type=int, default=5)
    sh.add_argument("--fallback", choices=[f.value for f in Fallback], default=Fallback.HARD_TRUNCATE.value)
    sh.set_defaults(func=cmd_shear)

    st = sub.add_parser("stats", help="length, word-frequency and similarity statistics")
    st.add_argument("dataset")
    st.add_argument("--out")
    st.add_argument("--lengths", action="store_true")
    st.add_argument("--wordfreq", action="store_true")
    st.add_argument("--top", type=int, default=50)
    st.add_argument("--stopwords", help="whitespace-separated stopword file (default: built-in English list)")
    st.add_argument("--lexicon", help="only count words listed in this file")
    st.add_argument("--similarity", action="store_true")
    st.add_argument("--provider", choices=["hasher", "http"], default="hasher")
    st.add_argument("--provider-url")
    st.add_argument("--dim", type=int, default=64)
    st.add_argument("--seed", type=int, default=0)
    st.add_argument("--pairing", choices=["raw-only", "all-generated"], default="raw-only")
    st.add_argument("--export-embeddings", action="store_true")
    st.add_argument("--image-root", help="directory relative image refs resolve against (default: the dataset's directory)")
    st.set_defaults(func=cmd_stats)

    for name, func, helptext in (
        ("train-toy", cmd_train_toy, "train the toy dual encoder"),
        ("eval", cmd_eval, "retrieval evaluation of trained toy parameters"),
        ("ablate", cmd_ablate, "sweep one axis and write a CSV"),
    ):
        t = sub.add_parser(name, help=helptext)
        t.add_argument("--config", help="toy config file (corpus / train / views)")
        t.add_argument("--seed", type=int)
        t.add_argument("--views", help="raw-only or multi:K")
        t.set_defaults(func=func)
        if name == "train-toy":
            t.add_argument("--features", help="train on a feature file instead of the synthetic corpus")
            t.add_argument("--out", default="toy_run")
        elif name == "eval":
            t.add_argument("--params", required=True)
            t.add_argument("--features", help="evaluate on a feature file instead of the synthetic eval split")
            t.add_argument("--out")
        else:
            t.add_argument("--axis", required=True, choices=[a.value for a in ablation.Axis])
            t.add_argument("--grid", required=True, help="comma list, ranges as a..b")
            t.add_argument("--seeds", default="0")
            t.add_argument("--directions", default="i2t", help="i2t, t2i or i2t,t2i (one CSV row each)")
            t.add_argument("--out", default="ablation.csv")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"capforge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"capforge: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CapforgeError, OSError, ValueError) as exc:
        print(f"capforge: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
