"""Command-line interface.

``transc <command> [options]``; every command's options can also come from a
TOML file given with ``--config`` (keys are option names, dashes or
underscores), with explicit flags taking precedence. ``--data`` falls back to
the ``TRANSC_DATA`` environment variable.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import difflib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import evaluation
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .dataset import build_m_extension, build_subset, read_raw_export, split, RAW_FILES
from .inference import infer_instance_of, infer_sub_class_of, write_inferred
from .kg import KGError, KnowledgeGraph, TripleKind, load_kg, save_kg
from .sampling import SamplingExhaustedError, classification_negatives
from .training import MODES, NumericalError, TrainConfig, train
from .utils import derive_rng

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

logger = logging.getLogger("transc")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
DATA_ENV = "TRANSC_DATA"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Raises instead of exiting so ``run`` controls the exit code."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# argument definitions


def _train_options(p):
    d = TrainConfig()
    p.add_argument("--dim", type=int, default=d.dim, help="embedding dimension k")
    p.add_argument("--lr", type=float, default=d.lr, help="SGD learning rate")
    p.add_argument("--margin-l", type=float, default=d.margin_l, help="relational margin")
    p.add_argument("--margin-e", type=float, default=d.margin_e, help="instanceOf margin")
    p.add_argument("--margin-c", type=float, default=d.margin_c, help="subClassOf margin")
    p.add_argument("--sampling", choices=("bern", "unif"), default=d.sampling)
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--mode", choices=MODES, default=d.mode)
    p.add_argument("--checkpoint-every", type=int, default=0, help="also save every N epochs under OUT/")


def build_parser() -> _Parser:
    parser = _Parser(prog="transc", description="TransC knowledge graph embeddings.", allow_abbrev=False)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def command(name, help_text, data=True, out_required=True):
        p = sub.add_parser(name, help=help_text, description=help_text, allow_abbrev=False)
        p.add_argument("--config", type=Path, help="TOML file with default option values")
        p.add_argument("--seed", type=int, default=0, help="master random seed")
        p.add_argument("--out", type=Path, required=out_required, default=None, help="output directory")
        if data:
            p.add_argument("--data", type=Path, default=None, help=f"dataset directory (default ${DATA_ENV})")
        return p

    p = command("build-dataset", "Build a dataset directory from raw TSV exports.", data=False)
    p.add_argument("--raw", type=Path, required=True, help=f"directory with {', '.join(RAW_FILES.values())}")
    p.add_argument("--sample-size", type=int, default=None, help="relational triples to sample (default: all)")
    p.add_argument("--ratios", default="0.9,0.05,0.05", help="train,valid,test fractions per triple kind")

    p = command("extend-m", "Add transitivity-derived isA triples to valid/test.")
    p.add_argument("--closure", action="store_true", help="iterate the hop to a fixpoint")
    p.add_argument("--exclude-train", action="store_true", help="skip derived triples already in train")

    p = command("train", "Train a model and write a checkpoint.")
    _train_options(p)
    p.add_argument("--threads", type=int, default=1, help="lock-free workers (>1 is nondeterministic)")

    p = command("eval-lp", "Link prediction (MRR, Hits@N) on a split.", out_required=False)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--split", default="test", choices=("valid", "test"))
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--ranks", action="store_true", help="also write per-triple ranks to OUT/ranks.csv")

    p = command("fit-thresholds", "Fit classification thresholds on a labelled split.")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--split", default="valid", choices=("valid", "test"))

    p = command("eval-tc", "Triple classification with fitted thresholds.", out_required=False)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--thresholds", type=Path, default=None, help="thresholds JSON (default: fit on valid)")
    p.add_argument("--split", default="test", choices=("valid", "test"))

    p = command("infer", "Infer new isA facts from sphere containment.")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--slack", type=float, default=0.0, help="required containment margin")

    p = command("report", "Full evaluation report (link prediction + classification).")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--threads", type=int, default=1)
    return parser


# ---------------------------------------------------------------------------
# config files and suggestions


def _dests(p: argparse.ArgumentParser) -> Dict[str, argparse.Action]:
    return {a.dest: a for a in p._actions if a.dest not in ("help",)}


def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def _config_defaults(path: Path, p: argparse.ArgumentParser) -> Dict[str, object]:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"{path}: invalid TOML: {exc}")
    dests = _dests(p)
    out = {}
    for key, value in data.items():
        dest = key.replace("-", "_")
        if dest not in dests or dest == "config":
            hint = _suggest(dest, [d for d in dests if d != "config"])
            raise UsageError(f"{path}: unknown option {key!r}{hint}")
        action = dests[dest]
        if action.type is Path and value is not None:
            value = Path(value)
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"{path}: {key} must be one of {sorted(action.choices)}, got {value!r}")
        out[dest] = value
    return out


def _suggest(word: str, options: Sequence[str]) -> str:
    match = difflib.get_close_matches(word, list(options), n=1)
    return f" (did you mean {match[0]!r}?)" if match else ""


def _unknown_hint(argv: Sequence[str], parser: argparse.ArgumentParser) -> str:
    """Suggestion for the first unrecognised flag or command in ``argv``."""
    commands = [n for a in parser._actions if isinstance(a, argparse._SubParsersAction) for n in a.choices]
    if argv and not argv[0].startswith("-") and argv[0] not in commands:
        return _suggest(argv[0], commands)
    cmd = next((a for a in argv if a in commands), None)
    p = _subparser(parser, cmd) if cmd else parser
    flags = [s for a in p._actions for s in a.option_strings]
    for token in argv:
        flag = token.split("=", 1)[0]
        if flag.startswith("--") and flag not in flags:
            return _suggest(flag, flags)
    return ""


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        raise UsageError(f"{exc}{_unknown_hint(argv, parser)}")
    if args.command is None:
        raise UsageError("transc: a command is required; see `transc --help`")
    if getattr(args, "config", None) is not None:
        p = _subparser(parser, args.command)
        p.set_defaults(**_config_defaults(args.config, p))
        # a required option may now be supplied by the file
        for action in p._actions:
            if action.required and action.dest in p._defaults:
                action.required = False
        args = parser.parse_args(argv)
    if hasattr(args, "data") and args.data is None:
        env = os.environ.get(DATA_ENV)
        if not env:
            raise UsageError(f"transc {args.command}: --data is required (or set ${DATA_ENV})")
        args.data = Path(env)
    return args


# ---------------------------------------------------------------------------
# commands


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    text = payload if isinstance(payload, str) else json.dumps(payload, indent=2, sort_keys=True) + "\n"
    path.write_text(text, encoding="utf-8")


def _load_model(args):
    state, config = load_checkpoint(args.checkpoint)
    kg = load_kg(args.data)
    space = state.space
    expected = (kg.n_instances, kg.n_relations, kg.n_concepts)
    found = (len(space.instance_vecs), len(space.relation_vecs), len(space.centers))
    if expected != found:
        raise CheckpointError(
            f"checkpoint sizes (instances, relations, concepts) = {found} do not match the dataset {expected}"
        )
    return state, config, kg


def _ratios(text: str):
    try:
        values = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise UsageError(f"--ratios must be three comma-separated numbers, got {text!r}")
    if len(values) != 3:
        raise UsageError(f"--ratios must be three comma-separated numbers, got {text!r}")
    return values


def cmd_build_dataset(args) -> int:
    ratios = _ratios(args.ratios)
    raw = read_raw_export(*(args.raw / RAW_FILES[k] for k in ("relational", "instance_of", "sub_class_of")))
    kg = build_subset(raw, args.sample_size, seed=args.seed)
    kg, report = split(kg, ratios, seed=args.seed)
    kg = _with_negatives(kg, args.seed)
    save_kg(kg, args.out)
    _write_json(args.out / "split_report.json", {"sizes": report.sizes, "violations": report.violations})
    print(json.dumps(report.sizes, sort_keys=True))
    return EXIT_OK


def _with_negatives(kg: KnowledgeGraph, seed: int) -> KnowledgeGraph:
    negatives = {
        name: classification_negatives(kg, name, derive_rng(seed, f"negatives-{name}"))
        for name in ("valid", "test")
    }
    return kg.with_splits(kg.splits, negatives)


def cmd_extend_m(args) -> int:
    kg = load_kg(args.data)
    extended = build_m_extension(kg, closure=args.closure, exclude_train=args.exclude_train, negative_seed=args.seed)
    save_kg(extended, args.out)
    counts = {s: extended.splits[s].counts() for s in ("valid", "test")}
    print(json.dumps(counts, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    try:
        config = TrainConfig(
            dim=args.dim, lr=args.lr, margin_l=args.margin_l, margin_e=args.margin_e, margin_c=args.margin_c,
            sampling=args.sampling, epochs=args.epochs, batch_size=args.batch_size, seed=args.seed,
            mode=args.mode, threads=args.threads, checkpoint_every=args.checkpoint_every,
        )
    except ValueError as exc:
        raise UsageError(f"transc train: {exc}")
    kg = load_kg(args.data)
    state = train(kg, config, checkpoint_dir=args.out)
    save_checkpoint(args.out, state, config)
    print(json.dumps(config.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_eval_lp(args) -> int:
    state, config, kg = _load_model(args)
    results = evaluation.rank_all(state.space, kg, args.split, args.threads)
    report = evaluation.EvalReport(link_prediction=evaluation.summarize_ranks(results))
    text = report.to_json()
    if args.out is not None:
        _write_json(args.out / "link_prediction.json", text)
        if args.ranks:
            evaluation.write_rank_csv(args.out / "ranks.csv", results, kg)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_fit_thresholds(args) -> int:
    state, config, kg = _load_model(args)
    table = evaluation.fit_thresholds(state.space, kg, args.split, mode=config.mode, seed=args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    table.save(args.out / "thresholds.json", kg)
    if table.flagged:
        logger.warning("median fallback thresholds for: %s", ", ".join(table.flagged))
    return EXIT_OK


def cmd_eval_tc(args) -> int:
    state, config, kg = _load_model(args)
    if args.thresholds is not None:
        table = evaluation.ThresholdTable.load(args.thresholds, kg)
    else:
        table = evaluation.fit_thresholds(state.space, kg, "valid", mode=config.mode, seed=args.seed)
    metrics = evaluation.triple_classification(state.space, kg, table, args.split, mode=config.mode, seed=args.seed)
    report = evaluation.EvalReport(classification=metrics, flagged=list(table.flagged))
    text = report.to_json()
    if args.out is not None:
        _write_json(args.out / "classification.json", text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_infer(args) -> int:
    state, config, kg = _load_model(args)
    if config.mode == "transe-isa":
        raise CheckpointError("containment inference needs sphere embeddings; checkpoint mode is 'transe-isa'")
    args.out.mkdir(parents=True, exist_ok=True)
    facts_e = infer_instance_of(state.space, kg, args.slack)
    facts_c = infer_sub_class_of(state.space, kg, args.slack)
    write_inferred(args.out / "inferred_instanceOf.tsv", facts_e, kg, TripleKind.INSTANCE_OF)
    write_inferred(args.out / "inferred_subClassOf.tsv", facts_c, kg, TripleKind.SUB_CLASS_OF)
    print(json.dumps({"instanceOf": len(facts_e), "subClassOf": len(facts_c)}))
    return EXIT_OK


def cmd_report(args) -> int:
    state, config, kg = _load_model(args)
    report = evaluation.EvalReport()
    if len(kg.test.relational):
        report.link_prediction = evaluation.link_prediction(state.space, kg, "test", args.threads)
    table = evaluation.fit_thresholds(state.space, kg, "valid", mode=config.mode, seed=args.seed)
    report.classification = evaluation.triple_classification(state.space, kg, table, "test", mode=config.mode, seed=args.seed)
    report.flagged = list(table.flagged)
    args.out.mkdir(parents=True, exist_ok=True)
    _write_json(args.out / "report.json", report.to_json())
    (args.out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    table.save(args.out / "thresholds.json", kg)
    sys.stdout.write(report.to_text())
    return EXIT_OK


COMMANDS = {
    "build-dataset": cmd_build_dataset,
    "extend-m": cmd_extend_m,
    "train": cmd_train,
    "eval-lp": cmd_eval_lp,
    "fit-thresholds": cmd_fit_thresholds,
    "eval-tc": cmd_eval_tc,
    "infer": cmd_infer,
    "report": cmd_report,
}


def run(argv: Optional[List[str]] = None) -> int:
    """Execute one command and return its exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (KGError, CheckpointError, evaluation.EvaluationError, SamplingExhaustedError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
