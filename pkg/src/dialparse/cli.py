"""Command line interface.

Subcommands cover the full workflow: train a parser, fine-tune an
existing checkpoint on new data, parse and evaluate CoNLL-U files,
split a treebank, generate synthetic dialect-pair data, run the
three-regime transfer experiment, and verify gradients numerically.

Settings for training and for the experiment can come from three
places, later ones winning: dataclass defaults, a key=value settings
file (``--config``, '#' starts a comment, values are Python literals),
and command line flags (including ``--set name=value`` for any field).
"""

from __future__ import annotations

import argparse
import ast
import dataclasses
import logging
import sys

import numpy as np

from .autodiff import (
    Parameter,
    Tape,
    Tensor,
    finite_difference_check,
)
from .conllu import (
    ConlluParseError,
    TreeStructureError,
    read_conllu,
    split_treebank,
    to_conllu,
    write_conllu,
)
from .decoder import DecoderError
from .evaluation import (
    EvaluationError,
    as_percent,
    attachment_scores,
    regime_report_tsv,
)
from .model import parse_treebank
from .synth import (
    SUFFIX,
    ExperimentConfig,
    GenerationError,
    ShiftSpec,
    default_grammar,
    derive_shifted_variety,
    derive_speaker_profile,
    generate_treebank,
    run_experiment,
)
from .trainer import (
    CheckpointError,
    TrainConfig,
    TrainingDataError,
    compute_loss,
    load_checkpoint,
    save_checkpoint,
    train,
)
from . import trainer as _trainer
from .vocab import UnknownLabelError, build_vocab
from .model import init_model

logger = logging.getLogger("dialparse")

MODEL_DIM_FIELDS = ("d_w", "d_c", "d_ch", "d_f", "d_h", "layers", "d_a", "d_r")


class ConfigFileError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Settings plumbing
# ---------------------------------------------------------------------------


def load_kv_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            if "=" not in text:
                raise ConfigFileError(
                    f"{path}:{lineno}: expected name=value, got {text!r}"
                )
            key, _, raw = text.partition("=")
            values[key.strip()] = raw.strip()
    return values


def _literal(raw: str):
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw


def _coerce(name: str, value, type_name: str):
    if type_name == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigFileError(f"{name} expects an integer, got {value!r}")
        return value
    if type_name == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigFileError(f"{name} expects a number, got {value!r}")
        return float(value)
    if type_name == "bool":
        if isinstance(value, bool):
            return value
        raise ConfigFileError(f"{name} expects True or False, got {value!r}")
    if type_name == "str":
        if not isinstance(value, str):
            raise ConfigFileError(f"{name} expects a string, got {value!r}")
        return value
    raise ConfigFileError(f"{name} cannot be set from a settings file")


def _parse_set_pairs(pairs: list[str] | None) -> dict[str, str]:
    values: dict[str, str] = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigFileError(f"--set expects name=value, got {pair!r}")
        key, _, raw = pair.partition("=")
        values[key.strip()] = raw.strip()
    return values


def build_train_config(
    base: TrainConfig,
    config_path: str | None,
    set_pairs: list[str] | None,
    flag_values: dict[str, object],
) -> TrainConfig:
    merged: dict[str, object] = {}
    if config_path:
        merged.update(
            {k: _literal(v) for k, v in load_kv_file(config_path).items()}
        )
    merged.update({k: _literal(v) for k, v in _parse_set_pairs(set_pairs).items()})
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    typed = {}
    for key, value in merged.items():
        if key not in types:
            raise ConfigFileError(f"unknown training setting {key!r}")
        typed[key] = _coerce(key, value, types[key])
    config = dataclasses.replace(base, **typed)
    config.validate()
    return config


def build_experiment_config(
    config_path: str | None,
    set_pairs: list[str] | None,
    flag_values: dict[str, object],
) -> ExperimentConfig:
    merged: dict[str, object] = {}
    if config_path:
        merged.update(
            {k: _literal(v) for k, v in load_kv_file(config_path).items()}
        )
    merged.update({k: _literal(v) for k, v in _parse_set_pairs(set_pairs).items()})
    merged.update({k: v for k, v in flag_values.items() if v is not None})

    exp_types = {
        f.name: f.type
        for f in dataclasses.fields(ExperimentConfig)
        if f.name != "train"
    }
    train_types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    exp_kwargs: dict[str, object] = {}
    train_kwargs: dict[str, object] = {}
    for key, value in merged.items():
        if key.startswith("train."):
            name = key[len("train."):]
            if name not in train_types:
                raise ConfigFileError(f"unknown training setting {key!r}")
            train_kwargs[name] = _coerce(key, value, train_types[name])
        elif key in exp_types:
            exp_kwargs[key] = _coerce(key, value, exp_types[key])
        else:
            raise ConfigFileError(f"unknown experiment setting {key!r}")
    config = ExperimentConfig(**exp_kwargs)
    config.train = dataclasses.replace(config.train, **train_kwargs)
    config.validate()
    return config


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------


def _train_flag_values(args: argparse.Namespace) -> dict[str, object]:
    values = {
        "seed": args.seed,
        "lr": args.lr,
        "max_epochs": args.max_epochs,
        "patience": args.patience,
        "batch_size": args.batch_size,
    }
    if args.freeze_encoder:
        values["freeze_encoder"] = True
    return values


def _cmd_train(args: argparse.Namespace) -> int:
    config = build_train_config(
        TrainConfig(), args.config, args.set, _train_flag_values(args)
    )
    train_tb = read_conllu(args.train)
    dev_tb = read_conllu(args.dev)
    result = train(train_tb, dev_tb, config)
    save_checkpoint(
        args.out, result.model, config,
        history=result.history, best_epoch=result.best_epoch,
        best_dev_las=result.best_dev_las,
    )
    print(
        f"best epoch {result.best_epoch} "
        f"dev LAS {as_percent(result.best_dev_las):.1f}%"
    )
    print(f"checkpoint written to {args.out}")
    return 0


def _cmd_finetune(args: argparse.Namespace) -> int:
    model, ckpt_config, _, _, _ = load_checkpoint(args.checkpoint)
    base = dataclasses.replace(ckpt_config, lr=0.5 * ckpt_config.lr)
    config = build_train_config(base, args.config, args.set, _train_flag_values(args))
    for name in MODEL_DIM_FIELDS:
        if getattr(config, name) != getattr(ckpt_config, name):
            raise ConfigFileError(
                f"{name} is fixed by the checkpoint's model and cannot be "
                "changed when fine-tuning"
            )
    if args.lr is None:
        logger.info(
            "fine-tuning learning rate defaults to half the checkpoint's: %g",
            config.lr,
        )
    train_tb = read_conllu(args.train)
    dev_tb = read_conllu(args.dev)
    result = _trainer.finetune(model, train_tb, dev_tb, config)
    save_checkpoint(
        args.out, result.model, config,
        history=result.history, best_epoch=result.best_epoch,
        best_dev_las=result.best_dev_las,
    )
    print(
        f"best epoch {result.best_epoch} "
        f"dev LAS {as_percent(result.best_dev_las):.1f}%"
    )
    print(f"checkpoint written to {args.out}")
    return 0


def _cmd_parse(args: argparse.Namespace) -> int:
    model, _, _, _, _ = load_checkpoint(args.checkpoint)
    treebank = read_conllu(args.input)
    single_root = not args.multi_root
    if args.multi_root:
        print("decoding without the single-root constraint", file=sys.stderr)
    predicted = parse_treebank(model, treebank, single_root=single_root)
    if args.output == "-":
        sys.stdout.write(to_conllu(predicted))
    else:
        write_conllu(predicted, args.output)
        print(f"parsed {len(predicted.sentences)} sentences to {args.output}")
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    gold = read_conllu(args.gold)
    predicted = read_conllu(args.pred)
    metrics = attachment_scores(
        gold, predicted, exclude_punct=not args.include_punct
    )
    print(f"UAS {as_percent(metrics.uas):.1f}% LAS {as_percent(metrics.las):.1f}%")
    print(f"scored tokens: {metrics.total}")
    if args.tsv:
        with open(args.tsv, "w", encoding="utf-8") as handle:
            handle.write(regime_report_tsv({"evaluation": metrics}))
        print(f"TSV report written to {args.tsv}")
    return 0


def _cmd_split(args: argparse.Namespace) -> int:
    treebank = read_conllu(args.input)
    train_tb, dev_tb = split_treebank(treebank, args.fraction, args.seed)
    write_conllu(train_tb, args.train_out)
    write_conllu(dev_tb, args.dev_out)
    print(
        f"split {len(treebank.sentences)} sentences into "
        f"{len(train_tb.sentences)} train / {len(dev_tb.sentences)} dev"
    )
    return 0


def _cmd_synth_generate(args: argparse.Namespace) -> int:
    grammar = default_grammar(seed=args.grammar_seed, marker_strategy=SUFFIX)
    needs_shift = (
        args.marker_strategy != SUFFIX
        or args.swap_rate > 0
        or args.word_order_swap
    )
    if needs_shift:
        shift = ShiftSpec(args.marker_strategy, args.swap_rate, args.word_order_swap)
        shift_seed = args.shift_seed if args.shift_seed is not None else args.grammar_seed + 7
        grammar = derive_shifted_variety(grammar, shift, seed=shift_seed)
    if args.profile_seed is not None:
        grammar = derive_speaker_profile(grammar, seed=args.profile_seed)
    treebank = generate_treebank(grammar, args.sentences, args.seed, args.tag)
    write_conllu(treebank, args.out)
    print(f"wrote {len(treebank.sentences)} sentences to {args.out}")
    return 0


def _cmd_synth_experiment(args: argparse.Namespace) -> int:
    flag_values = {
        "seed": args.seed,
        "n_a": args.n_a,
        "n_b": args.n_b,
        "n_c": args.n_c,
        "b_train_fraction": args.b_train_fraction,
        "swap_rate": args.swap_rate,
    }
    if args.identity_shift:
        flag_values["identity_shift"] = True
    if args.word_order_swap:
        flag_values["word_order_swap"] = True
    config = build_experiment_config(args.config, args.set, flag_values)
    out = run_experiment(config, args.out)
    with open(out["paths"]["report"], encoding="utf-8") as handle:
        sys.stdout.write(handle.read())
    print(f"outputs written to {args.out}")
    return 0


def _randomized_tiny_model(seed: int):
    text = (
        "1\tthe\t_\tDET\t_\t_\t2\tdet\t_\t_\n"
        "2\tdog\t_\tNOUN\t_\t_\t3\tnsubj\t_\t_\n"
        "3\tran\t_\tVERB\t_\t_\t0\troot\t_\t_\n"
        "\n"
        "1\tcats\t_\tNOUN\t_\t_\t2\tnsubj\t_\t_\n"
        "2\tsat\t_\tVERB\t_\t_\t0\troot\t_\t_\n"
        "3\tquietly\t_\tADV\t_\t_\t2\tamod\t_\t_\n"
    )
    from .conllu import parse_conllu
    from .vocab import encode_sentence

    treebank = parse_conllu(text)
    config = TrainConfig(
        d_w=3, d_c=2, d_ch=2, d_f=2, d_h=3, layers=1, d_a=4, d_r=3,
        min_word_freq=1, seed=seed,
    )
    vocab = build_vocab(treebank, min_word_freq=1)
    model = init_model(vocab, config.encoder_config(), config.scorer_config(), seed)
    rng = np.random.default_rng([seed, 41])
    for param in model.parameters():
        if param.data.size and not param.data.any():
            param.data = rng.uniform(-0.4, 0.4, size=param.shape)
    batch = [encode_sentence(vocab, s) for s in treebank]
    return model, batch


def _cmd_gradcheck(args: argparse.Namespace) -> int:
    rng = np.random.default_rng(args.seed)
    checks = []

    w = Parameter(rng.uniform(-1.0, 1.0, size=(4, 3)), "gc.w")
    x_const = rng.uniform(-1.0, 1.0, size=(3, 5))

    def quadratic():
        tape = Tape()
        y = tape.matmul(w, Tensor(x_const))
        return tape, tape.sum(tape.mul(y, y))

    checks.append(("quadratic form", quadratic, [w]))

    d = Parameter(rng.uniform(-1.0, 1.0, size=(2, 4)), "gc.d")
    u = Parameter(rng.uniform(-1.0, 1.0, size=(4, 4)), "gc.u")
    h = Parameter(rng.uniform(-1.0, 1.0, size=(2, 4)), "gc.h")

    def composite():
        tape = Tape()
        s = tape.bilinear(tape.tanh(d), u, tape.relu(h))
        logp = tape.log_softmax(s)
        return tape, tape.nll_from_log_probs(logp, np.array([0, 1]))

    checks.append(("nonlinear composite", composite, [d, u, h]))

    model, batch = _randomized_tiny_model(args.seed)

    def full_loss():
        tape, loss, _ = compute_loss(model, batch, train_mode=False, l2=0.01)
        return tape, loss

    checks.append(("full parser loss", full_loss, model.parameters()))

    failures = 0
    for name, closure, params in checks:
        result = finite_difference_check(closure, params, eps=args.eps)
        ok = result.max_rel_error < args.tolerance
        status = "ok" if ok else "FAIL"
        where = (
            f" (worst {result.worst_param}{[int(i) for i in result.worst_index]})"
            if result.worst_param is not None
            else ""
        )
        print(
            f"[{status}] {name}: max rel error {result.max_rel_error:.3e} "
            f"over {result.n_entries} entries{where}"
        )
        if not ok:
            failures += 1
    if failures:
        print(f"{failures} of {len(checks)} gradient checks failed")
        return 1
    print("all gradient checks passed")
    return 0


# ---------------------------------------------------------------------------
# Parser wiring
# ---------------------------------------------------------------------------


def _add_train_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="key=value settings file")
    sub.add_argument(
        "--set", action="append", metavar="NAME=VALUE",
        help="override any training setting (repeatable)",
    )
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--lr", type=float, default=None)
    sub.add_argument("--max-epochs", type=int, default=None)
    sub.add_argument("--patience", type=int, default=None)
    sub.add_argument("--batch-size", type=int, default=None)
    sub.add_argument(
        "--freeze-encoder", action="store_true",
        help="only update the scoring layers",
    )


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dialparse",
        description="Graph-based dependency parsing with cross-variety transfer tools",
    )
    parser.add_argument(
        "--quiet", action="store_true", help="only log warnings and errors"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    p_train = commands.add_parser("train", help="train a parser from scratch")
    p_train.add_argument("--train", required=True, help="training CoNLL-U file")
    p_train.add_argument("--dev", required=True, help="development CoNLL-U file")
    p_train.add_argument("--out", required=True, help="checkpoint path to write")
    _add_train_flags(p_train)
    p_train.set_defaults(handler=_cmd_train)

    p_ft = commands.add_parser(
        "finetune", help="continue training a checkpoint on new data"
    )
    p_ft.add_argument("--checkpoint", required=True)
    p_ft.add_argument("--train", required=True)
    p_ft.add_argument("--dev", required=True)
    p_ft.add_argument("--out", required=True)
    _add_train_flags(p_ft)
    p_ft.set_defaults(handler=_cmd_finetune)

    p_parse = commands.add_parser("parse", help="parse a CoNLL-U file")
    p_parse.add_argument("--checkpoint", required=True)
    p_parse.add_argument("--input", required=True)
    p_parse.add_argument(
        "--output", default="-", help="output path, '-' for stdout (default)"
    )
    p_parse.add_argument(
        "--multi-root", action="store_true",
        help="allow several tokens to attach to the root",
    )
    p_parse.set_defaults(handler=_cmd_parse)

    p_eval = commands.add_parser("evaluate", help="score predictions against gold")
    p_eval.add_argument("--gold", required=True)
    p_eval.add_argument("--pred", required=True)
    p_eval.add_argument(
        "--include-punct", action="store_true",
        help="also score punctuation tokens",
    )
    p_eval.add_argument("--tsv", help="write a machine-readable report here")
    p_eval.set_defaults(handler=_cmd_evaluate)

    p_split = commands.add_parser("split", help="split a treebank in two")
    p_split.add_argument("--input", required=True)
    p_split.add_argument("--train-out", required=True)
    p_split.add_argument("--dev-out", required=True)
    p_split.add_argument("--fraction", type=float, default=0.8)
    p_split.add_argument("--seed", type=int, default=1234)
    p_split.set_defaults(handler=_cmd_split)

    p_synth = commands.add_parser("synth", help="synthetic dialect-pair tooling")
    synth_commands = p_synth.add_subparsers(dest="synth_command", required=True)

    p_gen = synth_commands.add_parser(
        "generate", help="generate one synthetic treebank"
    )
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--sentences", type=int, default=1000)
    p_gen.add_argument("--seed", type=int, default=1234, help="sampling seed")
    p_gen.add_argument(
        "--grammar-seed", type=int, default=1234, help="lexicon construction seed"
    )
    p_gen.add_argument(
        "--marker-strategy", choices=("suffix", "marker"), default="suffix"
    )
    p_gen.add_argument("--swap-rate", type=float, default=0.0)
    p_gen.add_argument("--word-order-swap", action="store_true")
    p_gen.add_argument(
        "--shift-seed", type=int, default=None,
        help="seed for deriving the shifted variety (default grammar seed + 7)",
    )
    p_gen.add_argument(
        "--profile-seed", type=int, default=None,
        help="if set, resample word frequencies under a new speaker profile",
    )
    p_gen.add_argument("--tag", default="synth", help="sent_id prefix")
    p_gen.set_defaults(handler=_cmd_synth_generate)

    p_exp = synth_commands.add_parser(
        "experiment", help="run the three-regime transfer experiment"
    )
    p_exp.add_argument("--out", required=True, help="output directory")
    p_exp.add_argument("--config", help="key=value settings file (train.* for training)")
    p_exp.add_argument(
        "--set", action="append", metavar="NAME=VALUE",
        help="override any experiment or train.* setting (repeatable)",
    )
    p_exp.add_argument("--seed", type=int, default=None)
    p_exp.add_argument("--n-a", type=int, default=None)
    p_exp.add_argument("--n-b", type=int, default=None)
    p_exp.add_argument("--n-c", type=int, default=None)
    p_exp.add_argument("--b-train-fraction", type=float, default=None)
    p_exp.add_argument("--swap-rate", type=float, default=None)
    p_exp.add_argument("--identity-shift", action="store_true")
    p_exp.add_argument("--word-order-swap", action="store_true")
    p_exp.set_defaults(handler=_cmd_synth_experiment)

    p_grad = commands.add_parser(
        "gradcheck", help="verify gradients against finite differences"
    )
    p_grad.add_argument("--seed", type=int, default=1234)
    p_grad.add_argument("--eps", type=float, default=1e-5)
    p_grad.add_argument("--tolerance", type=float, default=1e-4)
    p_grad.set_defaults(handler=_cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_arg_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(format="%(levelname)s %(message)s")
    logger.setLevel(logging.WARNING if args.quiet else logging.INFO)
    try:
        return args.handler(args)
    except (
        ConfigFileError,
        ConlluParseError,
        TreeStructureError,
        TrainingDataError,
        CheckpointError,
        GenerationError,
        EvaluationError,
        UnknownLabelError,
        DecoderError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
