"""Command-line entry point for reproducible experiments.

Subcommands: train, eval, pretrain, gen-synth, sweep. Runs are driven by a
line-oriented key=value config file (unknown keys rejected, omitted keys
take the production defaults); individual flags override file values.
Outputs land under the --out directory with fixed names (model.swb,
run.txt, sweep.txt) and are byte-identical across repeated invocations.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .bundle import BundleError
from .data import (
    DataFormatError,
    expand_instances,
    gen_pretrain_corpus,
    gen_synthetic_arc,
    parse_arc_tsv,
    read_pretrain_corpus,
    tokenize,
    write_synthetic_embeddings,
    write_arc_tsv,
    write_pretrain_corpus,
)
from .encoder import read_encoder_bundle
from .training import (
    TrainConfig,
    aggregate_runs,
    config_from_dict,
    duplicate_token_accuracy,
    evaluate,
    load_model_bundle,
    model_from_state,
    run_pretraining,
    save_model_bundle,
    train,
)
from .vocab import (
    EmbeddingParseError,
    build_vocab,
    load_embeddings,
    read_vocab_file,
    write_embeddings_text,
    write_vocab_file,
)
from .rng import RngStream


class CliError(Exception):
    """User-facing configuration or input error."""


PATH_KEYS = ("train", "dev", "test", "embeddings", "encoder_bundle", "out")
_CONFIG_FIELDS = {f.name: f.type for f in fields(TrainConfig)}


@dataclass
class CliConfig:
    train_config: TrainConfig
    paths: dict[str, str]


def _parse_value(key: str, text: str):
    kind = _CONFIG_FIELDS[key]
    try:
        if kind == "bool":
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"expected true/false")
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "float | str":
            return text if text == "auto" else float(text)
        return text
    except ValueError as exc:
        raise CliError(f"config key '{key}': {exc}") from None


def parse_config_text(text: str, source: str = "<config>") -> CliConfig:
    """key=value lines; blank lines and #-comments are ignored."""
    values: dict = {}
    paths: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise CliError(f"{source}: line {lineno}: expected key=value, "
                           f"got {stripped!r}")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if key in PATH_KEYS:
            paths[key] = value
        elif key in _CONFIG_FIELDS:
            values[key] = _parse_value(key, value)
        else:
            raise CliError(f"{source}: line {lineno}: unknown key '{key}'")
    try:
        config = config_from_dict(values)
    except (ValueError, TypeError) as exc:
        raise CliError(f"{source}: {exc}") from None
    return CliConfig(train_config=config, paths=paths)


def load_cli_config(path) -> CliConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read config: {exc}") from None
    return parse_config_text(text, source=str(path))


def _apply_overrides(cfg: CliConfig, args) -> CliConfig:
    values = cfg.train_config.to_dict()
    paths = dict(cfg.paths)
    for item in args.set or []:
        if "=" not in item:
            raise CliError(f"--set needs key=value, got {item!r}")
        key, _, value = item.partition("=")
        if key in PATH_KEYS:
            paths[key] = value
        elif key in _CONFIG_FIELDS:
            values[key] = _parse_value(key, value)
        else:
            raise CliError(f"--set: unknown key '{key}'")
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        paths["out"] = args.out
    try:
        config = config_from_dict(values)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    return CliConfig(train_config=config, paths=paths)


def _require_path(cfg: CliConfig, key: str) -> Path:
    if key not in cfg.paths or not cfg.paths[key]:
        raise CliError(f"missing required config key '{key}'")
    return Path(cfg.paths[key])


def _load_instances(path: Path):
    if not path.exists():
        raise CliError(f"no such file: {path}")
    return parse_arc_tsv(path)


def _prepare_run(cfg: CliConfig):
    """Shared setup for train/sweep: data, vocab, optional embeddings and
    encoder bundle."""
    config = cfg.train_config
    train_instances = _load_instances(_require_path(cfg, "train"))
    dev_instances = _load_instances(_require_path(cfg, "dev"))
    vocab = build_vocab(
        [tokenize(t) for inst in train_instances
         for t in (inst.claim, inst.reason, inst.warrant0, inst.warrant1)])
    triples = expand_instances(train_instances, vocab)

    embeddings = None
    if cfg.paths.get("embeddings"):
        emb_path = Path(cfg.paths["embeddings"])
        if not emb_path.exists():
            raise CliError(f"no such file: {emb_path} (key 'embeddings')")
        embeddings, _ = load_embeddings(emb_path, vocab,
                                        RngStream(config.seed).child(7),
                                        dim=config.embed_dim)
    encoder_weights = None
    if config.encoder == "pretrained":
        enc_path = _require_path(cfg, "encoder_bundle")
        if not enc_path.exists():
            raise CliError(f"no such file: {enc_path} (key 'encoder_bundle')")
        encoder_weights = read_encoder_bundle(enc_path)

    test_instances = None
    if cfg.paths.get("test"):
        test_instances = _load_instances(Path(cfg.paths["test"]))
    return config, train_instances, dev_instances, test_instances, vocab, \
        triples, embeddings, encoder_weights


def cmd_train(args) -> int:
    cfg = _apply_overrides(load_cli_config(args.config), args)
    (config, _, dev_instances, test_instances, vocab, triples, embeddings,
     encoder_weights) = _prepare_run(cfg)
    out_dir = _require_path(cfg, "out")
    out_dir.mkdir(parents=True, exist_ok=True)

    record = train(config, triples, dev_instances, vocab,
                   embeddings=embeddings, encoder_weights=encoder_weights)
    if test_instances is not None:
        best = model_from_state(config, vocab, record.best_state)
        record.test_accuracy = evaluate(best, test_instances)

    save_model_bundle(record.best_state, config, out_dir / "model.swb")
    (out_dir / "run.txt").write_text(record.report_text(), encoding="utf-8")
    write_vocab_file(out_dir / "vocab.txt", vocab)
    sys.stdout.write(record.report_text())
    return 0


def cmd_eval(args) -> int:
    model_path = Path(args.model)
    if not model_path.exists():
        raise CliError(f"no such file: {model_path}")
    vocab_path = Path(args.vocab) if args.vocab \
        else model_path.with_name("vocab.txt")
    if not vocab_path.exists():
        raise CliError(f"no such vocabulary file: {vocab_path} "
                       "(pass --vocab explicitly)")
    data_path = Path(args.data)
    if not data_path.exists():
        raise CliError(f"no such file: {data_path}")
    vocab = read_vocab_file(vocab_path)
    model = load_model_bundle(model_path, vocab)
    instances = parse_arc_tsv(data_path)
    accuracy = evaluate(model, instances)
    print(f"accuracy {accuracy!r}")
    return 0


def cmd_pretrain(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = TrainConfig(seed=args.seed, max_epochs=args.epochs,
                         batch_size=args.batch_size, embed_dim=args.embed_dim,
                         hidden_size=args.hidden).validate()
    if args.corpus:
        corpus_path = Path(args.corpus)
        if not corpus_path.exists():
            raise CliError(f"no such file: {corpus_path}")
        corpus = read_pretrain_corpus(corpus_path)
    else:
        corpus = gen_pretrain_corpus(args.n, args.vocab_size,
                                     RngStream(args.seed).child(8))
    embeddings_path = None
    if args.embeddings:
        embeddings_path = Path(args.embeddings)
        if not embeddings_path.exists():
            raise CliError(f"no such file: {embeddings_path}")
    result = run_pretraining(corpus, config, embeddings_path=embeddings_path)
    from .encoder import write_encoder_bundle

    write_encoder_bundle(result.encoder, out_dir / "encoder.swb")
    if embeddings_path is None:
        # co-trained vectors become the downstream word-vector file
        write_embeddings_text(out_dir / "embeddings.txt", result.vocab,
                              result.embedding)
    accuracy = duplicate_token_accuracy(result, corpus)
    print(f"sequences {len(corpus)}")
    print(f"final_loss {result.epoch_losses[-1]!r}" if result.epoch_losses
          else "final_loss n/a")
    print(f"token_acc {accuracy!r}")
    return 0


def cmd_gen_synth(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = RngStream(args.seed)
    n_dev = n_test = args.n // 12
    n_train = args.n - n_dev - n_test
    if n_train < 1 or n_dev < 1:
        raise CliError(f"--n {args.n} too small for a 10:1:1 split")
    splits = (("train.tsv", n_train, 1), ("dev.tsv", n_dev, 2),
              ("test.tsv", n_test, 3))
    for name, count, tag in splits:
        instances = gen_synthetic_arc(count, args.vocab_size, rng.child(tag))
        write_arc_tsv(out_dir / name, instances)
    corpus = gen_pretrain_corpus(args.pretrain_n, args.vocab_size, rng.child(4))
    write_pretrain_corpus(out_dir / "pretrain.txt", corpus)
    write_synthetic_embeddings(out_dir / "embeddings.txt", args.vocab_size,
                               args.embed_dim, rng.child(5))
    meta = [
        f"n {args.n}", f"seed {args.seed}", f"vocab_size {args.vocab_size}",
        f"split 10:1:1", f"train {n_train}", f"dev {n_dev}", f"test {n_test}",
        f"pretrain_sequences {args.pretrain_n}",
        f"embed_dim {args.embed_dim}",
    ]
    (out_dir / "meta.txt").write_text("\n".join(meta) + "\n", encoding="utf-8")
    print(f"wrote {n_train}/{n_dev}/{n_test} instances and "
          f"{args.pretrain_n} pretraining sequences to {out_dir}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _apply_overrides(load_cli_config(args.config), args)
    if args.seeds < 1:
        raise CliError("--seeds must be >= 1")
    (config, _, dev_instances, _, vocab, triples, embeddings,
     encoder_weights) = _prepare_run(cfg)
    out_dir = _require_path(cfg, "out")
    out_dir.mkdir(parents=True, exist_ok=True)

    accuracies = []
    lines = []
    for k in range(args.seeds):
        run_config = replace(config, seed=config.seed + k)
        record = train(run_config, triples, dev_instances, vocab,
                       embeddings=embeddings, encoder_weights=encoder_weights)
        accuracies.append(record.best_dev_accuracy)
        lines.append(f"seed {run_config.seed} dev_acc "
                     f"{record.best_dev_accuracy!r}")
    mean, std = aggregate_runs(accuracies)
    lines.append("variant mean std")
    lines.append(f"{config.variant} {mean:.3f} {std:.3f}")
    text = "\n".join(lines) + "\n"
    (out_dir / "sweep.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    print(f"{config.variant} {mean:.3f} ±{std:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="warrantscore",
        description="Train and evaluate the warrant-selection model.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_opts(p):
        p.add_argument("--config", required=True, help="key=value config file")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="seed override")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override any config key (repeatable)")

    p_train = sub.add_parser("train", help="fit one model per config")
    add_config_opts(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="score a checkpoint on a task TSV")
    p_eval.add_argument("--model", required=True, help="model.swb checkpoint")
    p_eval.add_argument("--data", required=True, help="task TSV file")
    p_eval.add_argument("--vocab", help="vocab.txt (default: next to model)")
    p_eval.set_defaults(func=cmd_eval)

    p_pre = sub.add_parser("pretrain",
                           help="produce an encoder bundle from a corpus")
    p_pre.add_argument("--out", required=True)
    p_pre.add_argument("--corpus", help="pretraining corpus file "
                                        "(default: generate)")
    p_pre.add_argument("--embeddings",
                       help="word-vector file consumed frozen during "
                            "pretraining")
    p_pre.add_argument("--n", type=int, default=3000,
                       help="generated sequence count")
    p_pre.add_argument("--vocab-size", type=int, default=60)
    p_pre.add_argument("--seed", type=int, default=0)
    p_pre.add_argument("--epochs", type=int, default=5)
    p_pre.add_argument("--batch-size", type=int, default=16)
    p_pre.add_argument("--embed-dim", type=int, default=300)
    p_pre.add_argument("--hidden", type=int, default=300)
    p_pre.set_defaults(func=cmd_pretrain)

    p_gen = sub.add_parser("gen-synth",
                           help="emit synthetic TSV splits and a "
                                "pretraining corpus")
    p_gen.add_argument("--n", type=int, default=2400,
                       help="total instances, split 10:1:1")
    p_gen.add_argument("--seed", type=int, default=7)
    p_gen.add_argument("--vocab-size", type=int, default=60)
    p_gen.add_argument("--pretrain-n", type=int, default=3000)
    p_gen.add_argument("--embed-dim", type=int, default=300,
                       help="dimension of the synthetic word vectors")
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=cmd_gen_synth)

    p_sweep = sub.add_parser("sweep", help="run K seeds of one config")
    add_config_opts(p_sweep)
    p_sweep.add_argument("--seeds", type=int, required=True)
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataFormatError, BundleError, EmbeddingParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
