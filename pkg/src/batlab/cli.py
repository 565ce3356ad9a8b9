"""Command-line entry point: ``batlab <subcommand> [options]``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .adversarial import AdvConfig, exclusion_mask, fgm_perturbation, input_gradient
from .data import (
    TaskData, make_ae_examples, make_asc_examples, parse_semeval, read_records, split_train_validation, write_records,
)
from .errors import BatError, ConfigError
from .experiment import (
    DEFAULT_EPSILONS, SweepGrid, TrainConfig, best_over_grid, epsilon_table, evaluate, format_table,
    load_model, read_cells, sweep, train, write_cells, write_rows, write_table,
)
from .model import Model, collate, init_params
from .synthetic import synthetic_task_data
from .tokenizer import Tokenizer, Vocab, build_vocab

DATA_DIR_ENV = "BATLAB_DATA_DIR"
log = logging.getLogger("batlab")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _ints(text: str) -> tuple[int, ...]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            a, b = part.split("-")
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    return tuple(out)


def read_config_file(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; keys use - or _."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _add_train_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--task", choices=("ae", "asc"), default="ae")
    p.add_argument("--dataset", default="synthetic", help="dataset name used in run ids and file lookup")
    p.add_argument("--train", dest="train_file", help="training record file (from `prepare`)")
    p.add_argument("--test", dest="test_file", help="test record file")
    p.add_argument("--vocab", help="vocabulary file the records were built with")
    p.add_argument("--validation-size", type=int, default=150)
    p.add_argument("--lr", type=float, default=3e-5)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--ff", type=int, default=256)
    p.add_argument("--max-len", type=int, default=64)
    p.add_argument("--synthetic-size", type=int, default=400, help="generated training sentences when no data is given")
    p.add_argument("--out-dir", default="runs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="batlab", description="Adversarial fine-tuning workbench for ABSA")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="learn a subword vocabulary")
    p.add_argument("--corpus", nargs="+", required=True, help="SemEval XML or plain-text files")
    p.add_argument("--schema", choices=("2014", "2016"), default="2014")
    p.add_argument("--size", type=int, default=8000)
    p.add_argument("--no-lowercase", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("prepare", help="convert SemEval XML into a record file")
    p.add_argument("--xml", required=True)
    p.add_argument("--schema", choices=("2014", "2016"), default="2014")
    p.add_argument("--task", choices=("ae", "asc"), required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--max-len", type=int, default=64)
    p.add_argument("--no-lowercase", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train one configuration for each seed")
    _add_train_options(p)
    p.add_argument("--epochs", type=int, default=4)
    p.add_argument("--epsilon", type=float, default=0.0, help="0 trains the plain baseline")
    p.add_argument("--seeds", type=_ints, default=(0,), help="e.g. 0,1,2 or 0-8")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a record file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)

    p = sub.add_parser("sweep", help="grid over epochs x dropout x epsilon")
    _add_train_options(p)
    p.add_argument("--epochs", type=_ints, default=(3, 4, 5, 6, 7, 8, 9, 10), help="e.g. 3-10")
    p.add_argument("--dropouts", type=_floats, default=(0.1,))
    p.add_argument("--epsilons", type=_floats, default=DEFAULT_EPSILONS)
    p.add_argument("--seeds", type=int, default=3, help="seeds per cell")
    p.add_argument("--base-seed", type=int, default=0)
    p.add_argument("--no-baseline", action="store_true")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("plot", help="SVG charts from a sweep cell file")
    p.add_argument("--cells", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out-dir", default="plots")

    p = sub.add_parser("attack-demo", help="print g, r_adv and norms for one batch")
    _add_train_options(p)
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--checkpoint")
    p.add_argument("--seed", type=int, default=0)
    for p in sub.choices.values():
        p.add_argument("--config", help="key = value file; command-line flags take precedence")
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if a in COMMANDS), None)
    if known.config and command:
        values = read_config_file(known.config)
        subparser = parser._subparsers._group_actions[0].choices[command]
        actions = {}
        for a in subparser._actions:
            actions[a.dest] = a
            for opt in a.option_strings:
                actions[opt.lstrip("-").replace("-", "_")] = a
        unknown = set(values) - set(actions) - {"config"}
        if unknown:
            raise ConfigError(f"unknown keys in {known.config}: {', '.join(sorted(unknown))}")
        defaults = {}
        for key, value in values.items():
            action = actions[key]
            if isinstance(action, argparse._StoreTrueAction):
                value = value.lower() in ("1", "true", "yes", "on")
            action.required = False
            defaults[action.dest] = value
        subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


def load_task_data(args) -> TaskData:
    train_file, test_file, vocab_file = args.train_file, args.test_file, args.vocab
    root = os.environ.get(DATA_DIR_ENV)
    if train_file is None and root:
        base = Path(root) / args.dataset
        candidate = base / f"{args.task}_train.jsonl"
        if candidate.exists():
            train_file = candidate
            test_file = test_file or (base / f"{args.task}_test.jsonl")
            vocab_file = vocab_file or (base / "vocab.txt")
    if train_file is None:
        print(f"note: no training records given; using a generated {args.task.upper()} corpus", file=sys.stderr)
        return synthetic_task_data(
            args.task, n_train=args.synthetic_size, seed=0, max_len=args.max_len, validation=args.validation_size,
        )
    examples = read_records(train_file)
    train_set, val_set = split_train_validation(examples, args.validation_size)
    test_set = read_records(test_file) if test_file and Path(test_file).exists() else []
    if vocab_file and Path(vocab_file).exists():
        vocab_size = len(Vocab.load(vocab_file))
    else:
        vocab_size = max(max(e.example.input_ids) for e in examples + test_set) + 1
    return TaskData(args.task, train_set, val_set, test_set, vocab_size=vocab_size, name=args.dataset)


def _train_config(args, **over) -> TrainConfig:
    fields = dict(
        task=args.task, lr=args.lr, batch_size=args.batch_size, dropout=args.dropout, hidden=args.hidden,
        layers=args.layers, heads=args.heads, ff=args.ff, max_len=args.max_len, dataset=args.dataset,
    )
    fields.update(over)
    return TrainConfig(**fields)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_build_vocab(args) -> int:
    texts = []
    for path in args.corpus:
        if str(path).endswith(".xml"):
            texts.extend(s.text for s in parse_semeval(Path(path), args.schema))
        else:
            texts.extend(Path(path).read_text(encoding="utf-8").splitlines())
    vocab = build_vocab(texts, args.size, lowercase=not args.no_lowercase)
    vocab.save(args.out)
    print(f"wrote {len(vocab)} tokens to {args.out}")
    return 0


def cmd_prepare(args) -> int:
    sentences = parse_semeval(Path(args.xml), args.schema)
    tok = Tokenizer(Vocab.load(args.vocab), lowercase=not args.no_lowercase)
    make = make_ae_examples if args.task == "ae" else make_asc_examples
    n = write_records(args.out, make(sentences, tok, args.max_len))
    aspects = sum(len(s.aspects) for s in sentences)
    print(f"{len(sentences)} sentences, {aspects} aspects -> {n} {args.task.upper()} records in {args.out}")
    return 0


def cmd_train(args) -> int:
    data = load_task_data(args)
    cfg = _train_config(args, epochs=args.epochs, epsilon=args.epsilon, seeds=tuple(args.seeds))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, texts = [], []
    for seed in cfg.seeds:
        res = train(cfg, data, seed, checkpoint_path=out / f"checkpoint_seed{seed}.bin")
        rows.extend(res.rows(dataset=data.name))
        final, best = res.final_test, res.best_test
        for label, rep in (("final epoch", final), (f"best validation epoch {res.best_epoch}", best)):
            if rep is not None:
                texts.append(f"[seed {seed}, {label}]\n{rep.text()}")
    write_rows(out / "runs.csv", rows)
    (out / "metrics.txt").write_text("\n\n".join(texts) + "\n", encoding="utf-8")
    print("\n\n".join(texts))
    print(f"wrote {out / 'runs.csv'}")
    return 0


def cmd_eval(args) -> int:
    model, params, manifest = load_model(args.checkpoint)
    examples = read_records(args.data)
    rep = evaluate(model, params, examples, split=Path(args.data).stem, seed=manifest.get("seed"))
    print(rep.text())
    return 0


def cmd_sweep(args) -> int:
    data = load_task_data(args)
    grid = SweepGrid(
        epochs=tuple(args.epochs), dropouts=tuple(args.dropouts), epsilons=tuple(args.epsilons),
        seeds_per_cell=args.seeds, baseline=not args.no_baseline, base_seed=args.base_seed,
    )
    cfg = _train_config(args, epochs=max(grid.epochs))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = sweep(grid, cfg, data, out_csv=out / "sweep_raw.csv", jobs=args.jobs)
    write_cells(out / "sweep_cells.csv", result.cells)
    table = epsilon_table(result.cells)
    write_table(out / "sweep_table.csv", table)
    text = format_table(table)
    (out / "sweep_table.txt").write_text(text, encoding="utf-8")
    write_cells(out / "sweep_best.csv", best_over_grid(result.cells))
    print(text)
    for unit, err in result.failures:
        print(f"failed unit dropout={unit[0]} epsilon={unit[1]} seed={unit[2]}: {err}", file=sys.stderr)
    print(f"{grid.n_runs} runs, {len(result.cells)} cells; outputs in {out}")
    return 1 if result.failures else 0


def cmd_plot(args) -> int:
    from .plots import emit_plots

    for path in emit_plots(read_cells(args.cells), args.out_dir, split=args.split):
        print(path)
    return 0


def cmd_attack_demo(args) -> int:
    data = load_task_data(args)
    if args.checkpoint:
        model, params, _ = load_model(args.checkpoint)
    else:
        cfg = _train_config(args)
        model = Model(cfg.model_config(data.vocab_size))
        params = init_params(model.cfg, np.random.default_rng(args.seed))
    examples = data.train[: args.batch_size]
    batch = collate(examples)
    adv = AdvConfig.for_task(model.cfg.task, args.epsilon)
    g = input_gradient(model, batch, params)
    pert = fgm_perturbation(g, adv, exclusion_mask(batch, adv.policy), batch.input_ids)
    print(f"task={model.cfg.task} epsilon={args.epsilon} policy={adv.policy} batch={batch.size}x{batch.input_ids.shape[1]}")
    print(f"{'example':>7} {'|g|_2':>12} {'|r_adv|_2':>12} {'excluded':>8} {'degenerate':>10}")
    for i in range(batch.size):
        print(f"{i:>7} {pert.grad_norms[i]:>12.6e} {pert.norms[i]:>12.8f} {int(pert.excluded[i].sum()):>8} "
              f"{str(bool(pert.degenerate[i])):>10}")
    first = int(np.argmax(~pert.excluded[0]))
    print(f"g[0, {first}, :4]     = {np.array2string(g[0, first, :4], precision=6)}")
    print(f"r_adv[0, {first}, :4] = {np.array2string(pert.r_adv[0, first, :4], precision=6)}")
    return 0


COMMANDS = {
    "build-vocab": cmd_build_vocab,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "plot": cmd_plot,
    "attack-demo": cmd_attack_demo,
}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (BatError, OSError, IndexError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
