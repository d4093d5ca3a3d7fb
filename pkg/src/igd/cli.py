"""Command-line entry point.

Every subcommand accepts ``--config FILE`` (a JSON object keyed by option name, with
dashes or underscores); explicit flags override values from the file.

Exit codes: 0 success, 2 usage or configuration, 3 data validation, 4 runtime.
Failures also print one JSON object on stderr: ``{"error": ..., "code": ..., "message": ...}``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .abrun import RunConfig, ab_run
from .catalog import TokenizerSpec, estimate_priors, load_catalog, load_interactions, save_catalog, save_interactions
from .decoder import BeamConfig, decode_batch, load_decoded, save_decoded
from .errors import ConfigError, DataError, IGDError, StageError
from .evaluation import diversity, entropy_gap, hr_ndcg, ig_logit_report
from .scorer import ScorerSpec, build_scorer
from .simgen import PRESETS, simulate
from .trainer import TabularLM, TrainConfig, loss_split_report, train
from .trie import PrefixTrie, build_trie, canonical_log_base, zero_ig_stats
from .weights import WeightScheme, export_weights

log = logging.getLogger("igd")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _floats(text) -> tuple[float, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(float(x) for x in text)
    try:
        return tuple(float(x) for x in str(text).split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text) -> tuple[int, ...]:
    return tuple(int(x) for x in _floats(text))


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_json(obj, path: str | None) -> None:
    if path:
        Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _emit(obj)


def _need(args, *names) -> None:
    missing = [n for n in names if getattr(args, n, None) in (None, "")]
    if missing:
        raise ConfigError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _load_trie(args) -> PrefixTrie:
    _need(args, "trie")
    trie = PrefixTrie.load(args.trie)
    base = getattr(args, "log_base", None)
    if base and canonical_log_base(base) != trie.log_base:
        trie = trie.rebased(canonical_log_base(base))
    return trie


def _interactions(path: str, split: str, trie: PrefixTrie):
    return load_interactions(path, split, trie)


def _scorer(args, trie: PrefixTrie, train_set):
    spec = args.scorer if isinstance(args.scorer, dict) else args.scorer or "trie_prior"
    spec = ScorerSpec.from_dict(spec) if isinstance(spec, dict) else ScorerSpec.parse(spec)
    return build_scorer(spec, trie, train_set)


# -- subcommands ------------------------------------------------------------


def cmd_simulate(args) -> int:
    _need(args, "preset", "out")
    catalog, (tr, va, te) = simulate(args.preset, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_catalog(catalog, out / "catalog.jsonl")
    for name, split in (("train", tr), ("valid", va), ("test", te)):
        save_interactions(split, out / f"{name}.tsv")
    _emit({"items": len(catalog), "train": len(tr), "valid": len(va), "test": len(te), "out": str(out)})
    return EXIT_OK


def cmd_build_trie(args) -> int:
    _need(args, "catalog", "out")
    spec = TokenizerSpec(args.tokenizer, args.vocab)
    catalog = load_catalog(args.catalog, args.format, spec)
    if args.train:
        catalog = estimate_priors(catalog, load_interactions(args.train, "train", catalog), args.smoothing)
    trie = build_trie(catalog, canonical_log_base(args.log_base))
    trie.save(args.out)
    _emit({"items": trie.n_items, "nodes": len(trie), "depth": trie.depth, "log_base": trie.log_base,
           "catalog_hash": trie.catalog_hash})
    return EXIT_OK


def cmd_stats(args) -> int:
    _need(args, "train")
    trie = _load_trie(args)
    stats = zero_ig_stats(trie, _interactions(args.train, "train", trie))
    _write_json(stats.to_dict(), args.out)
    return EXIT_OK


def cmd_weights(args) -> int:
    _need(args, "train", "out")
    trie = _load_trie(args)
    scheme = WeightScheme.for_trie(trie, args.scheme, args.beta)
    path = export_weights(_interactions(args.train, "train", trie), trie, scheme, args.out)
    log.info("wrote %s", path)
    return EXIT_OK


def cmd_train(args) -> int:
    _need(args, "train", "out")
    trie = _load_trie(args)
    train_set = _interactions(args.train, "train", trie)
    scheme = None if args.scheme == "none" else WeightScheme.for_trie(trie, args.scheme, args.beta)
    model = TabularLM(trie, args.lr, args.seed, args.support)
    model, trace = train(model, train_set, trie, TrainConfig(args.epochs, args.batch_size, scheme, args.seed))
    model.save(args.out)
    if args.trace:
        loss_split_report(trace, args.trace)
    last = trace.records[-1]
    _emit({"steps": len(trace), "final_loss": last.overall, "final_loss_zero_ig": last.mean_loss_zero_ig,
           "final_loss_nonzero_ig": last.mean_loss_nonzero_ig})
    return EXIT_OK


def cmd_decode(args) -> int:
    _need(args, "test", "out")
    trie = _load_trie(args)
    test = _interactions(args.test, "test", trie)
    train_set = _interactions(args.train, "train", trie) if args.train else None
    scorer = _scorer(args, trie, train_set)
    cfg = BeamConfig(args.width, args.topk, args.alpha, args.mode)
    save_decoded(decode_batch(scorer, trie, test, cfg), test, args.out)
    return EXIT_OK


def _decoded_for(args, trie):
    _need(args, "test", "decoded")
    test = _interactions(args.test, "test", trie)
    users, lists = load_decoded(args.decoded)
    if users != [r.user_id for r in test.records]:
        raise DataError("decode output does not line up with the test records")
    return test, lists


def cmd_eval(args) -> int:
    trie = _load_trie(args)
    test, lists = _decoded_for(args, trie)
    report = hr_ndcg(lists, test.targets(), _ints(args.ks))
    _write_json(report.to_dict(), args.out)
    return EXIT_OK


def cmd_report(args) -> int:
    trie = _load_trie(args)
    if args.kind == "ig-logit":
        _need(args, "test")
        test = _interactions(args.test, "test", trie)
        train_set = _interactions(args.train, "train", trie) if args.train else None
        _write_json(ig_logit_report(_scorer(args, trie, train_set), trie, test).to_dict(), args.out)
        return EXIT_OK
    test, lists = _decoded_for(args, trie)
    if args.kind == "entropy-gap":
        _need(args, "out")
        curve = entropy_gap(lists, test.targets(), trie, top_n=args.topk)
        curve.to_csv(args.out)
        _emit({"mean_gap": curve.mean_gap, "steps": len(curve.steps)})
    else:
        _write_json(diversity(lists, trie, args.topk).to_dict(), args.out)
    return EXIT_OK


AB_FLAGS = ("preset", "data_seed", "catalog", "catalog_format", "train", "valid", "test", "trie", "out_dir",
            "tokenizer", "vocab", "log_base", "smoothing", "scheme", "epochs", "batch_size", "learning_rate",
            "support", "width", "top_k", "scorer", "beta_grid", "alpha_grid", "select_metric", "seed", "jobs")


def cmd_ab_run(args) -> int:
    values = dict(args.file_config)
    for name in AB_FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    if isinstance(values.get("scorer"), str):
        try:
            values["scorer"] = json.loads(values["scorer"])
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--scorer must be a JSON object: {exc}") from None
    for grid in ("beta_grid", "alpha_grid"):
        if grid in values:
            values[grid] = _floats(values[grid])
    if "log_base" in values:
        values["log_base"] = canonical_log_base(values["log_base"])
    cfg = RunConfig.from_dict(values)
    summary = ab_run(cfg)
    _emit({k: summary[k] for k in ("selected_beta", "selected_alpha", "best", "baseline")})
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def _add_trie(p, required=True):
    p.add_argument("--trie", help="trie snapshot" + ("" if required else " (optional)"))
    p.add_argument("--log-base", dest="log_base", help="natural|nat|2: recompute entropies in this base")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = _Parser(prog="igd", description="Information-gain tooling for generative recommendation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    subs = {}

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--config", help="JSON file of option values; flags take precedence")
        p.set_defaults(func=func)
        subs[name] = p
        return p

    p = add("simulate", cmd_simulate, "generate a synthetic catalog and 8:1:1 interaction splits")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int, help="override the preset seed")
    p.add_argument("--out", help="output directory")

    p = add("build-trie", cmd_build_trie, "tokenize a catalog and build the annotated prefix trie")
    p.add_argument("--catalog")
    p.add_argument("--format", default="jsonl", choices=["jsonl", "tsv"])
    p.add_argument("--tokenizer", default="whitespace", choices=["whitespace", "character", "vocab"])
    p.add_argument("--vocab", help="vocabulary file for --tokenizer vocab")
    p.add_argument("--train", help="training interactions for empirical priors (uniform otherwise)")
    p.add_argument("--smoothing", default="laplace", choices=["laplace", "floor"])
    p.add_argument("--log-base", dest="log_base", default="natural")
    p.add_argument("--out")

    p = add("stats", cmd_stats, "zero-IG token statistics over training targets (JSON)")
    _add_trie(p)
    p.add_argument("--train")
    p.add_argument("--out", help="also write the JSON here")

    p = add("weights", cmd_weights, "export per-token tuning weights as a JSONL sidecar")
    p.add_argument("action", choices=["export"])
    _add_trie(p)
    p.add_argument("--scheme", default="binary", choices=["binary", "linear"])
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--train")
    p.add_argument("--out")

    p = add("train", cmd_train, "train the tabular next-token model")
    _add_trie(p)
    p.add_argument("--train")
    p.add_argument("--scheme", default="binary", choices=["binary", "linear", "none"])
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=32)
    p.add_argument("--lr", type=float, default=5.0)
    p.add_argument("--support", default="vocab", choices=["vocab", "continuations"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="model snapshot path")
    p.add_argument("--trace", help="loss trace CSV path")

    p = add("decode", cmd_decode, "constrained beam search for every test record (JSONL)")
    _add_trie(p)
    p.add_argument("--test")
    p.add_argument("--train", help="training interactions (personalized scorers)")
    p.add_argument("--scorer", help="scorer kind or JSON spec (default trie_prior)")
    p.add_argument("--mode", default="standard", choices=["standard", "igd"])
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--width", type=int, default=10)
    p.add_argument("--topk", type=int, default=10)
    p.add_argument("--out")

    p = add("eval", cmd_eval, "HR@K and NDCG@K of a decode output (JSON)")
    _add_trie(p)
    p.add_argument("--test")
    p.add_argument("--decoded")
    p.add_argument("--ks", default="5,10")
    p.add_argument("--out")

    p = add("report", cmd_report, "entropy-gap curve (CSV), diversity or IG-vs-probability report (JSON)")
    p.add_argument("--kind", default="entropy-gap", choices=["entropy-gap", "diversity", "ig-logit"])
    _add_trie(p)
    p.add_argument("--test")
    p.add_argument("--decoded")
    p.add_argument("--train")
    p.add_argument("--scorer")
    p.add_argument("--topk", type=int, default=10)
    p.add_argument("--out")

    # ab-run flags default to None so that unset flags fall through to the config file
    p = add("ab-run", cmd_ab_run, "beta sweep at alpha=0, then alpha sweep at the selected beta")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--data-seed", dest="data_seed", type=int)
    p.add_argument("--catalog")
    p.add_argument("--catalog-format", dest="catalog_format", choices=["jsonl", "tsv"])
    p.add_argument("--train")
    p.add_argument("--valid")
    p.add_argument("--test")
    p.add_argument("--trie")
    p.add_argument("--out", dest="out_dir")
    p.add_argument("--tokenizer", choices=["whitespace", "character", "vocab"])
    p.add_argument("--vocab")
    p.add_argument("--log-base", dest="log_base")
    p.add_argument("--smoothing", choices=["laplace", "floor"])
    p.add_argument("--scheme", choices=["binary", "linear"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--support", choices=["vocab", "continuations"])
    p.add_argument("--width", type=int)
    p.add_argument("--topk", dest="top_k", type=int)
    p.add_argument("--scorer", help="JSON scorer spec; a {\"kind\": \"tabular\"} leaf receives the trained model")
    p.add_argument("--beta-grid", dest="beta_grid", help="comma-separated")
    p.add_argument("--alpha-grid", dest="alpha_grid", help="comma-separated")
    p.add_argument("--select-metric", dest="select_metric", choices=["hr5", "hr10", "ndcg5", "ndcg10"])
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    return parser, subs


def _read_config(path: str) -> dict:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"bad config JSON in {path}: {exc}") from None
    if not isinstance(obj, dict):
        raise ConfigError("config file must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in obj.items()}


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        raise UsageError("a command is required")
    file_cfg = _read_config(args.config) if args.config else {}
    if args.command == "ab-run":
        args.file_config = file_cfg
        return args
    if file_cfg:
        sub = subs[args.command]
        dests = {a.dest for a in sub._actions}
        unknown = sorted(set(file_cfg) - dests)
        if unknown:
            raise ConfigError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
        sub.set_defaults(**file_cfg)
        args = parser.parse_args(argv)
    return args


def _fail(kind: str, code: int, message: str, stage: str | None = None) -> int:
    err = {"error": kind, "code": code, "message": message}
    if stage is not None:
        err["stage"] = stage
    sys.stderr.write(json.dumps(err) + "\n")
    return code


def _code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_USAGE
    if isinstance(exc, DataError):
        return EXIT_DATA
    return EXIT_RUNTIME


def main(argv: list[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        return _fail("UsageError", EXIT_USAGE, str(exc))
    except ConfigError as exc:
        return _fail("ConfigError", EXIT_USAGE, str(exc))
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        return _fail(type(exc.cause).__name__, _code_for(exc.cause), str(exc.cause), exc.stage)
    except (IGDError, ValueError) as exc:
        return _fail(type(exc).__name__, _code_for(exc), str(exc))
    except OSError as exc:
        return _fail(type(exc).__name__, EXIT_RUNTIME, str(exc))


if __name__ == "__main__":
    sys.exit(main())
