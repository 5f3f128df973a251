"""Command-line interface: train, parse, evaluate, verify and bench."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .corpus import DataError, Record, read_corpus, read_sentences
from .decoder import (
    Certificate,
    DecodeLimits,
    decode_astar,
    decode_beam,
    decode_best_first,
    decode_local,
    decode_rerank,
    nbest_local,
)
from .evaluation import evaluate
from .global_model import ModelConfigError, ModelDims, ParameterStore
from .grammar import DEFAULT_CONFIG, GrammarConfig, GrammarError, Lexicon, load_unary_table
from .hypergraph import from_bracket, to_bracket
from .learning import GoldUnreachable, TrainConfig, TrainingDiverged, UpdateKind, train
from .local_model import SupertagTable, read_supertag_file
from .oracle import OracleRefused, cky_viterbi, enumerate_parses

log = logging.getLogger("globalastar")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# configuration


def parse_limits(text: str) -> DecodeLimits:
    parts = text.split(",")
    if len(parts) != 3:
        raise UsageError("--limits expects forest,agenda,units")
    try:
        return DecodeLimits(*(int(p) for p in parts))
    except ValueError as exc:
        raise UsageError(f"--limits: {exc}") from None


def parse_decoder(text: str, beam: int, nbest: int):
    """'astar' | 'best_first' | 'local' | 'beam[:N]' | 'rerank[:N]' -> (name, width)."""
    name, _, arg = text.partition(":")
    if name not in ("astar", "best_first", "local", "beam", "rerank"):
        raise UsageError(f"unknown decoder {text!r}")
    if name in ("beam", "rerank"):
        try:
            width = int(arg) if arg else (beam if name == "beam" else nbest)
        except ValueError:
            raise UsageError(f"bad decoder width in {text!r}") from None
        if width < 1:
            raise UsageError(f"decoder width must be >= 1 in {text!r}")
        return name, width
    if arg:
        raise UsageError(f"decoder {name} takes no width")
    return name, None


def grammar_config(args) -> GrammarConfig:
    kw = {}
    if args.unary_rules:
        kw["unary_table"] = load_unary_table(args.unary_rules)
    if args.roots:
        kw["roots"] = tuple(r for r in args.roots.split(",") if r)
    if args.composition:
        kw["composition"] = True
    return dataclasses.replace(DEFAULT_CONFIG, **kw)


def load_lexicon(args) -> Lexicon | None:
    return Lexicon.load(args.lexicon) if args.lexicon else None


def tables_for(args, sentences, lexicon):
    """Supertag tables aligned with ``sentences``; entries are exceptions for untaggable ones."""
    if args.supertags:
        tables = read_supertag_file(args.supertags)
        if sentences is None:
            return [t.words for t in tables], tables
        if len(tables) != len(sentences):
            raise DataError(f"{args.supertags}: {len(tables)} sentences, input has {len(sentences)}")
        for k, (t, words) in enumerate(zip(tables, sentences)):
            if list(t.words) != list(words):
                raise DataError(f"{args.supertags}: sentence {k} does not match the input")
        return sentences, tables
    if lexicon is None:
        raise UsageError("one of --lexicon or --supertags is required")
    if sentences is None:
        raise UsageError("an input file is required with --lexicon")
    out = []
    for words in sentences:
        try:
            out.append(SupertagTable.from_lexicon(lexicon, words))
        except GrammarError as exc:
            out.append(exc)
    return sentences, out


def model_for(args, lexicon, tables):
    if args.model_in:
        return ParameterStore.load(args.model_in)
    if getattr(args, "random_model", False):
        words = set(lexicon.entries) if lexicon else set()
        cats = set(lexicon.categories()) if lexicon else set()
        for t in tables:
            if isinstance(t, SupertagTable):
                words.update(t.words)
                cats.update(c for row in t.rows for c, _ in row)
        return ParameterStore.initialize(words, cats, dims_from(args), seed=args.seed)
    return None


def dims_from(args) -> ModelDims:
    return ModelDims(word=args.word_dim, category=args.cat_dim, hidden=args.hidden,
                     leaf_input=args.leaf_input)


# ---------------------------------------------------------------------------
# parallel decoding

_STATE: dict = {}


def _init_worker(state):
    _STATE.clear()
    _STATE.update(state)


def _run_tasks(fn, tasks, jobs: int, state: dict) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        _init_worker(state)
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(state,)) as ex:
        return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


def _decode(table, name, width, params, config, limits, lazy, candidates=None):
    if name == "astar":
        return decode_astar(table, params, config, limits, lazy=lazy)
    if name == "local":
        return decode_local(table, config)
    if name == "best_first":
        return decode_best_first(table, params, config, limits, lazy=lazy)
    if name == "beam":
        return decode_beam(table, params, width, config)
    return decode_rerank(table, params, width, config, candidates=candidates)


def _stats(res, timing: bool) -> dict:
    s = {"nodes_explored": res.stats.nodes_explored, "edges_pushed": res.stats.edges_pushed,
         "global_evals": res.stats.global_evals}
    if timing:
        s["wall_time"] = res.stats.wall_time
    return s


def _parse_task(task) -> dict:
    index, words, table = task
    st = _STATE
    rec = {"index": index, "words": list(words)}
    if isinstance(table, Exception):
        rec.update(status="FAILED", certificate=Certificate.FAILED.value, error=str(table))
        return rec
    try:
        res = _decode(table, st["decoder"], st["width"], st["params"], st["config"],
                      st["limits"], st["lazy"])
    except GrammarError as exc:
        rec.update(status="FAILED", certificate=Certificate.FAILED.value, error=str(exc))
        return rec
    if res.parse is None:
        rec.update(status="FAILED", certificate=Certificate.FAILED.value,
                   error=res.note or "no parse", stats=_stats(res, st["timing"]))
        return rec
    rec.update(status="ok", tree=to_bracket(res.parse), score=res.score,
               certificate=res.certificate.value, backoff=res.backoff,
               stats=_stats(res, st["timing"]))
    if res.note:
        rec["note"] = res.note
    return rec


# ---------------------------------------------------------------------------
# subcommands


def _open_out(path):
    return open(path, "w", encoding="utf-8") if path and path != "-" else None


def _emit(lines, path) -> None:
    f = _open_out(path)
    try:
        out = f or sys.stdout
        for line in lines:
            out.write(line + "\n")
    finally:
        if f:
            f.close()


def cmd_parse(args) -> int:
    name, width = parse_decoder(args.decoder, args.beam, args.nbest)
    limits = parse_limits(args.limits)
    config = grammar_config(args)
    lexicon = load_lexicon(args)
    sentences = read_sentences(args.input) if args.input else None
    sentences, tables = tables_for(args, sentences, lexicon)
    params = model_for(args, lexicon, tables)
    state = dict(decoder=name, width=width, params=params, config=config,
                 limits=limits, lazy=args.lazy, timing=args.timing)
    tasks = [(k, w, t) for k, (w, t) in enumerate(zip(sentences, tables))]
    records = _run_tasks(_parse_task, tasks, args.jobs, state)
    _emit((json.dumps(r) for r in records), args.output)
    return EXIT_OK


def read_predictions(path) -> list:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: {exc.msg}") from None
    return out


def cmd_evaluate(args) -> int:
    gold = read_corpus(args.gold)
    preds = read_predictions(args.predictions)
    for k in range(max(len(gold), len(preds))):
        if k >= len(gold) or k >= len(preds):
            raise DataError(f"files diverge at sentence {k}: {len(preds)} predictions, {len(gold)} gold")
        if list(preds[k].get("words", [])) != list(gold[k].words):
            raise DataError(f"files diverge at sentence {k}: tokens differ")
        if gold[k].gold is None:
            raise DataError(f"{args.gold}: sentence {k} has no gold tree")
    trees = [from_bracket(p["tree"]) if p.get("tree") else None for p in preds]
    m = evaluate(trees, [g.gold for g in gold])
    n = len(preds)
    m["optimal_pct"] = 100.0 * sum(p.get("certificate") == "OPTIMAL" for p in preds) / n if n else 0.0
    explored = [p["stats"]["nodes_explored"] for p in preds if "stats" in p]
    m["mean_explored"] = sum(explored) / len(explored) if explored else 0.0
    if args.json:
        lines = [json.dumps(m)]
    else:
        lines = [f"{k}\t{v}" if isinstance(v, int) else f"{k}\t{v:.2f}" for k, v in m.items()]
    _emit(lines, args.output)
    return EXIT_OK


def cmd_verify(args) -> int:
    config = grammar_config(args)
    lexicon = load_lexicon(args)
    sentences = read_sentences(args.input) if args.input else None
    sentences, tables = tables_for(args, sentences, lexicon)
    args.random_model = True
    params = model_for(args, lexicon, tables)
    tol = args.tolerance
    lines = ["index\tstatus\tastar\tenumeration\tcky\tlocal_astar\tlazy_eager"]
    failures = 0
    for k, table in enumerate(tables):
        if isinstance(table, Exception):
            lines.append(f"{k}\tDATA_ERROR\t{table}")
            failures += 1
            continue
        try:
            enum = enumerate_parses(table, config, params, cap=args.cap)
        except OracleRefused as exc:
            lines.append(f"{k}\tSKIPPED\t{exc}")
            continue
        lazy = decode_astar(table, params, config, lazy=True, h_scale=args.fault_h_scale,
                            h_offset=args.fault_h_offset)
        eager = decode_astar(table, params, config, lazy=False, h_scale=args.fault_h_scale,
                             h_offset=args.fault_h_offset)
        local = decode_astar(table, None, config, h_scale=args.fault_h_scale, h_offset=args.fault_h_offset)
        _, cky = cky_viterbi(table, config)
        best = max((score for _, score in enum), default=-math.inf)
        problems = []
        if not _close(lazy.score, best, tol):
            problems.append("astar!=enumeration")
        if not _close(local.score, cky, tol):
            problems.append("cky!=local_astar")
        same_tree = (lazy.parse is None) == (eager.parse is None) and (
            lazy.parse is None or to_bracket(lazy.parse) == to_bracket(eager.parse))
        if not same_tree or not _close(lazy.score, eager.score, tol):
            problems.append("lazy!=eager")
        failures += bool(problems)
        status = ",".join(problems) if problems else "ok"
        lines.append(f"{k}\t{status}\t{lazy.score:.12g}\t{best:.12g}\t{cky:.12g}\t{local.score:.12g}\t"
                     f"{'yes' if 'lazy!=eager' not in problems else 'no'}")
    lines.append(f"# {len(tables)} sentences, {failures} discrepancies")
    _emit(lines, args.output)
    return EXIT_VERIFY if failures else EXIT_OK


def _close(a, b, tol) -> bool:
    if math.isinf(a) or math.isinf(b):
        return a == b
    return abs(a - b) <= tol


def _has_trees(path) -> bool:
    with open(path, encoding="utf-8") as f:
        return any(line.lstrip().startswith("(") for line in f)


def cmd_bench(args) -> int:
    config = grammar_config(args)
    lexicon = load_lexicon(args)
    sentences = read_sentences(args.input)
    records = read_corpus(args.input) if _has_trees(args.input) else [Record(w) for w in sentences]
    has_gold = bool(records) and all(r.gold is not None for r in records)
    sentences, tables = tables_for(args, sentences, lexicon)
    args.random_model = args.model_in is None
    params = model_for(args, lexicon, tables)
    limits = parse_limits(args.limits)
    decoders = [parse_decoder(d, args.beam, args.nbest) for d in args.decoders.split(",") if d]
    # one n-best list per sentence at the largest N keeps rerank lists nested
    max_n = max((w for n, w in decoders if n == "rerank"), default=0)
    lists = [nbest_local(t, max_n, config) if max_n and isinstance(t, SupertagTable) else None
             for t in tables]
    rows, astar_time, astar_scores = [], None, None
    for name, width in decoders:
        label = name if width is None else f"{name}:{width}"
        t0 = time.perf_counter()
        results = []
        for table, cands in zip(tables, lists):
            if isinstance(table, Exception):
                results.append(None)
                continue
            try:
                results.append(_decode(table, name, width, params, config, limits, args.lazy, cands))
            except Exception as exc:  # a decoder failure is recorded; the run continues
                log.warning("%s failed: %s", label, exc)
                results.append(None)
        elapsed = time.perf_counter() - t0
        ok = [r for r in results if r is not None]
        scores = [r.score if r is not None else -math.inf for r in results]
        if name == "astar" and astar_time is None:
            astar_time, astar_scores = elapsed, scores
        row = {"decoder": label}
        if has_gold:
            preds = [r.parse if r is not None else None for r in results]
            row["f1"] = evaluate(preds, [r.gold for r in records])["f1"]
        row["parsed_pct"] = 100.0 * sum(r.parse is not None and not r.backoff for r in ok) / max(1, len(results))
        row["mean_explored"] = sum(r.stats.nodes_explored for r in ok) / max(1, len(ok))
        row["mean_global_evals"] = sum(r.stats.global_evals for r in ok) / max(1, len(ok))
        row["_time"] = elapsed
        row["_scores"] = scores
        rows.append(row)
    lines = []
    header = ["decoder"] + (["f1"] if has_gold else []) + ["parsed_pct", "mean_explored",
                                                           "mean_global_evals", "rel_time", "below_astar"]
    lines.append("\t".join(header))
    for row in rows:
        rel = "-"
        if args.timing and astar_time:
            rel = f"{row['_time'] / astar_time:.2f}"
        below = "-"
        if astar_scores is not None:
            below = str(sum(s < a - args.tolerance for s, a in zip(row["_scores"], astar_scores)))
        cells = [row["decoder"]] + ([f"{row['f1']:.2f}"] if has_gold else [])
        cells += [f"{row['parsed_pct']:.1f}", f"{row['mean_explored']:.1f}",
                  f"{row['mean_global_evals']:.1f}", rel, below]
        lines.append("\t".join(cells))
    _emit(lines, args.output)
    return EXIT_OK


def cmd_train(args) -> int:
    config = grammar_config(args)
    lexicon = load_lexicon(args)
    train_recs = read_corpus(args.train)
    dev_recs = read_corpus(args.dev) if args.dev else []
    for path, recs in ((args.train, train_recs), (args.dev, dev_recs)):
        for k, r in enumerate(recs):
            if r.gold is None:
                raise DataError(f"{path}: sentence {k} has no gold tree")
    if args.supertags:
        train_tables = read_supertag_file(args.supertags)
        if [list(t.words) for t in train_tables] != [r.words for r in train_recs]:
            raise DataError(f"{args.supertags}: does not align with {args.train}")
        dev_tables = read_supertag_file(args.dev_supertags) if args.dev_supertags else None
    else:
        if lexicon is None:
            raise UsageError("one of --lexicon or --supertags is required")
        train_tables = [SupertagTable.from_lexicon(lexicon, r.words) for r in train_recs]
        dev_tables = None
    if dev_tables is None:
        if lexicon is None and dev_recs:
            raise UsageError("--dev-supertags is required with --supertags")
        dev_tables = [SupertagTable.from_lexicon(lexicon, r.words) for r in dev_recs]
    kinds = []
    for part in args.update.split(","):
        try:
            kinds.append(UpdateKind(part))
        except ValueError:
            raise UsageError(f"--update: unknown kind {part!r} (greedy, max, all)") from None
    if args.model_in:
        init = ParameterStore.load(args.model_in)
    else:
        words = {w for r in train_recs for w in r.words}
        cats = {c for t in train_tables for row in t.rows for c, _ in row}
        cats |= {str(n.category) for r in train_recs for n in r.gold.nodes()}
        init = ParameterStore.initialize(words, cats, dims_from(args), seed=args.seed)
    corpus = [(r.gold, t) for r, t in zip(train_recs, train_tables)]
    dev = [(r.gold, t) for r, t in zip(dev_recs, dev_tables)]
    lines = []
    if dev:
        base = evaluate([decode_local(t, config).parse for _, t in dev], [g for g, _ in dev])
        lines.append(f"# baseline (global disabled) dev_f1={base['f1']:.4f} dev_exact={base['exact_match']:.4f}")
    for kind in kinds:
        tc = TrainConfig(update_kind=kind, epochs=args.epochs, lr=args.lr, dropout=args.dropout,
                         max_forest=args.max_forest, seed=args.seed)
        best, history = train(corpus, dev, init, tc, config, parse_limits(args.limits))
        lines.append(f"# update={kind.value}")
        lines.append("epoch\tloss\tviolations\tdev_f1\tdev_exact")
        lines.extend(m.line() for m in history)
        if args.model_out:
            out = Path(args.model_out)
            if len(kinds) > 1:
                out = out.with_name(f"{out.stem}.{kind.value}{out.suffix}")
            best.save(out)
    _emit(lines, args.metrics)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--lexicon", help="word<TAB>category<TAB>logprob file")
    common.add_argument("--supertags", help="supertag file (overrides --lexicon for tagging)")
    common.add_argument("--unary-rules", help="from<TAB>to unary rule table")
    common.add_argument("--roots", help="comma-separated root categories (default S,NP)")
    common.add_argument("--composition", action="store_true", help="enable forward/backward composition")
    common.add_argument("--model-in", help="model file to load")
    common.add_argument("--limits", default="500000,2000000,200000", help="forest,agenda,units")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--lazy", action=argparse.BooleanOptionalAction, default=True)
    common.add_argument("--word-dim", type=int, default=50)
    common.add_argument("--cat-dim", type=int, default=16)
    common.add_argument("--hidden", type=int, default=64)
    common.add_argument("--leaf-input", choices=["bilstm", "none"], default="bilstm")
    common.add_argument("--output", "-o", help="output file (default stdout)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="globalastar", description=__doc__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("train", parents=[common], help="violation-based training")
    s.add_argument("--train", required=True, help="training corpus")
    s.add_argument("--dev", help="development corpus for model selection")
    s.add_argument("--dev-supertags", help="supertag file aligned with --dev")
    s.add_argument("--model-out")
    s.add_argument("--metrics", help="metrics log (default stdout)")
    s.add_argument("--update", default="all", help="greedy, max, all, or a comma list to compare")
    s.add_argument("--epochs", type=int, default=30)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--dropout", type=float, default=0.4)
    s.add_argument("--max-forest", type=int, default=2000)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("parse", parents=[common], help="parse sentences, one JSON record each")
    s.add_argument("input", nargs="?", help="sentences (one per line) or a corpus file")
    s.add_argument("--decoder", default="astar", help="astar | best_first | local | beam[:N] | rerank[:N]")
    s.add_argument("--beam", type=int, default=2)
    s.add_argument("--nbest", type=int, default=10)
    s.add_argument("--random-model", action="store_true", help="use a seeded random model")
    s.add_argument("--timing", action="store_true", help="include wall-clock times")
    s.set_defaults(func=cmd_parse)

    s = sub.add_parser("evaluate", parents=[common], help="score parse records against gold trees")
    s.add_argument("predictions", help="JSON records from parse")
    s.add_argument("--gold", required=True)
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("verify", parents=[common], help="check A* against exhaustive oracles")
    s.add_argument("input", nargs="?")
    s.add_argument("--cap", type=int, default=7, help="longest sentence to enumerate")
    s.add_argument("--tolerance", type=float, default=1e-9)
    s.add_argument("--fault-h-scale", type=float, default=1.0, help=argparse.SUPPRESS)
    s.add_argument("--fault-h-offset", type=float, default=0.0, help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("bench", parents=[common], help="compare decoders on one model")
    s.add_argument("input", help="corpus file (gold trees enable F1)")
    s.add_argument("--decoders", default="astar,best_first,beam:2,beam:4,rerank:10")
    s.add_argument("--beam", type=int, default=2)
    s.add_argument("--nbest", type=int, default=10)
    s.add_argument("--tolerance", type=float, default=1e-9)
    s.add_argument("--timing", action="store_true", help="report wall time relative to astar")
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required (train, parse, evaluate, verify, bench)")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, GrammarError, ModelConfigError, GoldUnreachable, OSError,
            json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
