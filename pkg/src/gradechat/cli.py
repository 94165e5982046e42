"""Command-line entry point tying the pipeline together.

Subcommands: build-vocab, train, chat, selfchat-eval, score, report, serve.
Every run writes a manifest (resolved config, input digests, seed, version,
planned outputs) into its --out directory before producing any artifact, so
reruns can be compared input-for-input. All randomness fans out from the
single --seed flag.

Exit codes: 0 success, 2 validation, 3 missing dependency/capability, 4 IO.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .util import file_digest, write_stable_json

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_CAPABILITY = 3
EXIT_IO = 4


class CliError(Exception):
    def __init__(self, code: int, message: str) -> None:
        super().__init__(message)
        self.code = code


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise CliError(EXIT_IO, f"config file not found: {p}")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_VALIDATION, f"bad config JSON in {p}: {exc}") from exc


def _manifest_config(args) -> dict:
    return {
        key: value
        for key, value in sorted(vars(args).items())
        if key not in ("func", "config", "subcommand")
        and isinstance(value, (str, int, float, bool, type(None)))
    }


def _write_manifest(out_dir: Path, subcommand: str, config: dict, inputs: dict, seed, outputs) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_stable_json(
        out_dir / "manifest.json",
        {
            "subcommand": subcommand,
            "config": config,
            "inputs": inputs,
            "seed": seed,
            "tool_version": __version__,
            "outputs": [str(p) for p in outputs],
        },
    )


def _require_out(args) -> Path:
    if not getattr(args, "out", None):
        raise CliError(EXIT_VALIDATION, "--out is required")
    return Path(args.out)


def _input_digests(paths) -> dict:
    return {str(p): file_digest(p) for p in paths}


# --------------------------------------------------------------------------
# build-vocab
# --------------------------------------------------------------------------


def cmd_build_vocab(args) -> int:
    from .lexicon import (
        LexiconError,
        accumulate_corpus_stats,
        build_gold_lexicon_from_dir,
        derive_heuristic_bins,
        read_level_tagged_dir,
        save_lexicon,
    )

    out_dir = _require_out(args)
    if args.decks is None and args.corpus is None:
        raise CliError(EXIT_VALIDATION, "need --decks (gold) or --corpus (heuristic)")
    try:
        if args.decks is not None:
            deck_dir = Path(args.decks)
            if not deck_dir.is_dir():
                raise CliError(EXIT_IO, f"deck directory not found: {deck_dir}")
            inputs = _input_digests(sorted(deck_dir.glob("*")))
            _write_manifest(out_dir, "build-vocab", _manifest_config(args), inputs, None, [out_dir])
            lexicon = build_gold_lexicon_from_dir(deck_dir)
        else:
            corpus_dir = Path(args.corpus)
            if not corpus_dir.is_dir():
                raise CliError(EXIT_IO, f"corpus directory not found: {corpus_dir}")
            inputs = _input_digests(sorted(corpus_dir.glob("*.txt")))
            _write_manifest(out_dir, "build-vocab", _manifest_config(args), inputs, None, [out_dir])
            tokenizer = _tokenizer_for(args)
            stats = accumulate_corpus_stats(read_level_tagged_dir(corpus_dir), tokenizer)
            lexicon = derive_heuristic_bins(
                stats,
                global_floor=args.global_floor,
                level_floor=args.level_floor,
                assign_threshold=args.assign_threshold,
            )
        paths = save_lexicon(lexicon, out_dir)
    except LexiconError as exc:
        raise CliError(EXIT_VALIDATION, str(exc)) from exc
    print(f"wrote {len(paths)} files to {out_dir} ({len(lexicon)} lemmas)")
    return EXIT_OK


def _tokenizer_for(args):
    """Resolve the tokenizer.backend config key: builtin | external:<name>.

    The builtin backend segments over the provided --lexicon (or the bundled
    synthetic vocabulary); external backends must have been registered by
    embedding code.
    """
    from .tokenizer import BackendError, DictionaryTokenizer, resolve_backend

    backend = getattr(args, "tokenizer_backend", "builtin") or "builtin"
    if backend != "builtin":
        try:
            return resolve_backend(backend)
        except BackendError as exc:
            raise CliError(EXIT_CAPABILITY, str(exc)) from exc
    if getattr(args, "lexicon", None):
        from .lexicon import load_lexicon

        lex = load_lexicon(Path(args.lexicon))
        return DictionaryTokenizer(lemmas=lex.entries.keys())
    from .synthcorpus import register_tokenizer

    return register_tokenizer()


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------


def cmd_train(args) -> int:
    from .classifier import ClassifierError, TrainingConfig, train_from_corpus
    from .lexicon import LexiconError, read_level_tagged_dir
    from .lm import train_ngram

    out_dir = _require_out(args)
    corpus_dir = Path(args.corpus)
    if not corpus_dir.is_dir():
        raise CliError(EXIT_IO, f"corpus directory not found: {corpus_dir}")
    inputs = _input_digests(sorted(corpus_dir.glob("*.txt")))
    predictor_path = out_dir / "predictor.npz"
    ngram_path = out_dir / "ngram.json"
    _write_manifest(
        out_dir, "train", _manifest_config(args), inputs, args.seed, [predictor_path, ngram_path]
    )
    tokenizer = _tokenizer_for(args)
    try:
        sentences = list(read_level_tagged_dir(corpus_dir))
    except LexiconError as exc:
        raise CliError(EXIT_IO, str(exc)) from exc
    from .levels import LEVELS

    present = {level for _, level in sentences}
    missing = [level.label for level in LEVELS if level not in present]
    if missing:
        raise CliError(EXIT_VALIDATION, f"corpus missing level(s): {', '.join(missing)}")
    config = TrainingConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        embedding_dim=args.embedding_dim,
        seed=args.seed,
    )
    try:
        predictor = train_from_corpus(sentences, tokenizer, config)
    except ClassifierError as exc:
        raise CliError(EXIT_VALIDATION, str(exc)) from exc
    predictor.save(predictor_path)
    stream = [lemma for text, _ in sentences for lemma in tokenizer.tokenize(text).lemmas]
    train_ngram(stream, order=args.order, smoothing=args.delta).save(ngram_path)
    print(f"wrote {predictor_path} and {ngram_path}")
    return EXIT_OK


# --------------------------------------------------------------------------
# chat
# --------------------------------------------------------------------------


def cmd_chat(args) -> int:
    from .control import METHODS
    from .levels import Level
    from .lm import STUDENT, TUTOR, ChatContext, GenerationConfig
    from .selfchat import TRANSCRIPT_SCHEMA_VERSION
    from .util import derive_seed

    if args.method not in METHODS:
        raise CliError(
            EXIT_VALIDATION, f"unknown method {args.method!r}; valid: {', '.join(METHODS)}"
        )
    try:
        level = Level.parse(args.level)
        target = Level.parse(args.target_level) if args.target_level else level
    except ValueError as exc:
        raise CliError(EXIT_VALIDATION, str(exc)) from exc
    engine = _demo_engine(args)
    context = ChatContext(
        system_prompt=engine.tutor_system_prompt(args.method, level, args.seed),
        speaker=TUTOR,
        generation=GenerationConfig.tutor_default(max_tokens=engine.max_tokens),
    )
    transcript_fh = open(args.transcript, "a", encoding="utf-8") if args.transcript else None
    print(f"chatting with method={args.method} level={level.label}; empty line quits")
    turn = 0
    try:
        for line in sys.stdin:
            text = line.strip()
            if not text:
                break
            turn += 1
            context.add_turn(STUDENT, text)
            seed = derive_seed(args.seed, "chat", turn)
            reply = engine.generate_tutor(
                args.method,
                context.with_generation(context.generation.with_seed(seed)),
                target,
            )
            context.add_turn(TUTOR, reply)
            print(f"tutor> {reply}")
            if transcript_fh:
                record = {
                    "schema_version": TRANSCRIPT_SCHEMA_VERSION,
                    "turn_index": turn,
                    "student_text": text,
                    "tutor_text": reply,
                    "method": args.method,
                    "level": level.label,
                }
                transcript_fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
                transcript_fh.flush()
    finally:
        if transcript_fh:
            transcript_fh.close()
    return EXIT_OK


def _demo_engine(args):
    from .selfchat import SelfChatEngine
    from .synthcorpus import build_demo_bundle

    bundle = build_demo_bundle(seed=getattr(args, "seed", 0) or 0)
    return SelfChatEngine(
        lm=bundle.lm,
        predictor=bundle.predictor,
        tokenizer=bundle.tokenizer,
        gold_lexicon=bundle.gold_lexicon,
        heuristic_lexicon=bundle.heuristic_lexicon,
        fudge_lambda=getattr(args, "fudge_lambda", 0.8),
        fudge_top_k=getattr(args, "top_k", 50),
    )


# --------------------------------------------------------------------------
# selfchat-eval / score / report
# --------------------------------------------------------------------------


def cmd_selfchat_eval(args) -> int:
    from .control import METHODS
    from .metrics import report_rows_to_csv
    from .selfchat import (
        SuiteError,
        aggregate_suite,
        drift_to_csv,
        plan_suite,
        run_suite,
        suite_report_to_dict,
        write_transcripts_jsonl,
    )

    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise CliError(
            EXIT_VALIDATION, f"unknown method(s) {', '.join(bad)}; valid: {', '.join(METHODS)}"
        )
    out_dir = _require_out(args)
    transcripts_path = out_dir / "transcripts.jsonl"
    report_json = out_dir / "report.json"
    report_csv = out_dir / "report.csv"
    drift_csv = out_dir / "drift.csv"
    _write_manifest(
        out_dir,
        "selfchat-eval",
        _manifest_config(args),
        {},
        args.seed,
        [transcripts_path, report_json, report_csv, drift_csv],
    )
    engine = _demo_engine(args)
    try:
        specs = plan_suite(methods, turns=args.turns, seed=args.seed)
    except SuiteError as exc:
        raise CliError(EXIT_VALIDATION, str(exc)) from exc
    transcripts = run_suite(specs, engine)
    if transcripts_path.exists():
        transcripts_path.unlink()
    write_transcripts_jsonl(transcripts_path, transcripts)
    report = aggregate_suite(transcripts)
    write_stable_json(report_json, suite_report_to_dict(report))
    report_csv.write_text(report_rows_to_csv(report.reports), encoding="utf-8")
    drift_csv.write_text(drift_to_csv(report), encoding="utf-8")
    print(f"{len(transcripts)} dialogues -> {report_json}")
    return EXIT_OK


def cmd_score(args) -> int:
    """Fold an exported study file into a per-method human-eval table."""
    export_path = Path(args.export)
    if not export_path.exists():
        raise CliError(EXIT_IO, f"export file not found: {export_path}")
    out_dir = _require_out(args)
    out_path = out_dir / "human_eval.json"
    _write_manifest(
        out_dir, "score", _manifest_config(args), _input_digests([export_path]), None, [out_path]
    )
    sessions = json.loads(export_path.read_text(encoding="utf-8"))
    by_method: dict[str, dict] = {}
    for session in sessions:
        row = by_method.setdefault(
            session["method"],
            {"rounds": 0, "not_understood": 0, "tmrs": [], "surveys": []},
        )
        latest: dict[int, dict] = {}
        for ann in session.get("annotations", []):
            if not ann.get("superseded"):
                latest[ann["turn_index"]] = ann
        for ann in latest.values():
            row["rounds"] += 1
            row["tmrs"].append(ann["tmr"])
            if not ann["understood_overall"]:
                row["not_understood"] += 1
        if session.get("survey"):
            row["surveys"].append(session["survey"])
    table = []
    for method in sorted(by_method):
        row = by_method[method]
        surveys = row["surveys"]
        means = {
            key: (sum(s[key] for s in surveys) / len(surveys) if surveys else None)
            for key in ("understand", "effort", "comfort", "natural", "again")
        }
        table.append(
            {
                "Model": method,
                "%Rounds Not Understood": (
                    100.0 * row["not_understood"] / row["rounds"] if row["rounds"] else None
                ),
                "TMR": (
                    100.0 * sum(row["tmrs"]) / len(row["tmrs"]) if row["tmrs"] else None
                ),
                "Understood?": means["understand"],
                "Effortful?": means["effort"],
                "Comfort?": means["comfort"],
                "Natural?": means["natural"],
                "Chat Again?": means["again"],
            }
        )
    write_stable_json(out_path, table)
    print(f"wrote {out_path}")
    return EXIT_OK


def cmd_report(args) -> int:
    """Re-aggregate a transcripts file into report + drift series."""
    from .metrics import REPORT_COLUMNS

    transcripts_path = Path(args.transcripts)
    if not transcripts_path.exists():
        raise CliError(EXIT_IO, f"transcripts file not found: {transcripts_path}")
    out_dir = _require_out(args)
    report_json = out_dir / "report.json"
    drift_csv = out_dir / "drift.csv"
    _write_manifest(
        out_dir,
        "report",
        _manifest_config(args),
        _input_digests([transcripts_path]),
        None,
        [report_json, drift_csv],
    )
    rows: dict[str, dict] = {}
    drift: dict[str, dict[int, list[float]]] = {}
    aborted: dict[str, int] = {}
    for line in transcripts_path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        method = record["spec"]["method"]
        if record["status"] != "complete":
            aborted[method] = aborted.get(method, 0) + 1
            continue
        row = rows.setdefault(
            method,
            {"length": [], "ppl": [], "div3": [], "tmr": [], "control_error": []},
        )
        tutor_i = 0
        for turn in record["turns"]:
            metrics = turn.get("metrics")
            if turn["role"] != "tutor" or metrics is None:
                continue
            tutor_i += 1
            row["length"].append(metrics["length"])
            if isinstance(metrics["ppl"], (int, float)):
                row["ppl"].append(metrics["ppl"])
            row["div3"].append(metrics["div3"])
            row["tmr"].append(metrics["tmr"])
            row["control_error"].append(metrics["control_error"])
            drift.setdefault(method, {}).setdefault(tutor_i, []).append(metrics["tmr"])

    def mean(vals):
        return sum(vals) / len(vals) if vals else None

    table = [
        {
            "Model": method,
            "Avg. Length": mean(row["length"]),
            "Avg. PPL": mean(row["ppl"]),
            "div@3": mean(row["div3"]),
            "Readability": None,
            "TMR": 100.0 * mean(row["tmr"]) if row["tmr"] else None,
            "ControlError": mean(row["control_error"]),
        }
        for method, row in sorted(rows.items())
    ]
    write_stable_json(report_json, {"columns": list(REPORT_COLUMNS), "rows": table, "aborted": aborted})
    lines = ["method,turn_index,mean_tmr,n"]
    for method, series in sorted(drift.items()):
        for turn_index, vals in sorted(series.items()):
            lines.append(f"{method},{turn_index},{mean(vals)},{len(vals)}")
    drift_csv.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {report_json} and {drift_csv}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import os

    import uvicorn

    from .selfchat import SelfChatEngine
    from .service import ENV_BIND, ServiceConfig, SessionStore, StudyService, create_app
    from .synthcorpus import build_demo_bundle

    bind = os.environ.get(ENV_BIND)
    if bind and args.host == "127.0.0.1" and args.port == 8000:
        host, _, port = bind.partition(":")
        args.host = host or args.host
        args.port = int(port) if port else args.port
    bundle = build_demo_bundle(seed=args.seed)
    engine = SelfChatEngine(
        lm=bundle.lm,
        predictor=bundle.predictor,
        tokenizer=bundle.tokenizer,
        gold_lexicon=bundle.gold_lexicon,
        heuristic_lexicon=bundle.heuristic_lexicon,
    )
    data_dir = Path(args.data_dir)
    service = StudyService(
        engine,
        SessionStore(data_dir),
        ServiceConfig(data_dir=data_dir, turn_limit=args.turn_limit, seed=args.seed),
    )
    uvicorn.run(create_app(service), host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


# --------------------------------------------------------------------------
# argument wiring
# --------------------------------------------------------------------------


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="gradechat", description=__doc__)
    parser.add_argument("--config", help="JSON config file; flags override it")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    commands: dict[str, argparse.ArgumentParser] = {}

    p = commands["build-vocab"] = sub.add_parser(
        "build-vocab", help="build gold or heuristic lexicon files"
    )
    p.add_argument("--decks", help="directory of n5..n1 deck files (json/tsv)")
    p.add_argument("--corpus", help="directory of level-tagged n5..n1 .txt files")
    p.add_argument("--lexicon", help="existing lexicon dir driving the tokenizer")
    p.add_argument("--tokenizer-backend", default="builtin", help="builtin | external:<name>")
    p.add_argument("--global-floor", type=float, default=1e-6)
    p.add_argument("--level-floor", type=float, default=1e-6)
    p.add_argument("--assign-threshold", type=float, default=1e-6)
    p.add_argument("--out")
    p.set_defaults(func=cmd_build_vocab)

    p = commands["train"] = sub.add_parser(
        "train", help="train the difficulty predictor and n-gram model"
    )
    p.add_argument("--corpus", required=True)
    p.add_argument("--lexicon", help="lexicon dir driving the tokenizer")
    p.add_argument("--tokenizer-backend", default="builtin", help="builtin | external:<name>")
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--learning-rate", type=float, default=5e-5)
    p.add_argument("--embedding-dim", type=int, default=16)
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--delta", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = commands["chat"] = sub.add_parser(
        "chat", help="interactive terminal chat against the demo engine"
    )
    p.add_argument("--method", required=True)
    p.add_argument("--level", required=True)
    p.add_argument("--target-level", help="control target; defaults to --level")
    p.add_argument("--lambda", dest="fudge_lambda", type=float, default=0.8)
    p.add_argument("--top-k", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--transcript", help="append turns to this JSONL file")
    p.set_defaults(func=cmd_chat)

    p = commands["selfchat-eval"] = sub.add_parser(
        "selfchat-eval", help="run the self-chat evaluation suite"
    )
    p.add_argument("--methods", default="baseline")
    p.add_argument("--turns", type=int, default=6)
    p.add_argument("--pairs", default="all", help="reserved; all 25 level pairs")
    p.add_argument("--lambda", dest="fudge_lambda", type=float, default=0.8)
    p.add_argument("--top-k", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_selfchat_eval)

    p = commands["score"] = sub.add_parser(
        "score", help="summarize an exported study file per method"
    )
    p.add_argument("--export", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_score)

    p = commands["report"] = sub.add_parser(
        "report", help="re-aggregate a transcripts.jsonl file"
    )
    p.add_argument("--transcripts", required=True)
    p.add_argument("--plot", action="store_true", help="also emit the drift CSV (always on)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = commands["serve"] = sub.add_parser(
        "serve", help="run the study HTTP service on the demo engine"
    )
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--data-dir", default="./gradechat-data")
    p.add_argument("--turn-limit", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_serve)

    return parser, commands


def _config_path_from(argv: list[str]) -> str | None:
    for i, arg in enumerate(argv):
        if arg == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if arg.startswith("--config="):
            return arg.split("=", 1)[1]
    return None


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, commands = build_parser()
    try:
        config = _load_config(_config_path_from(argv))
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    # Config seeds the per-subcommand defaults before parsing, so explicit
    # flags always win.
    for name, section in config.items():
        if name in commands and isinstance(section, dict):
            commands[name].set_defaults(
                **{key.replace("-", "_"): value for key, value in section.items()}
            )
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
