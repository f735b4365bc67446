"""Command-line interface.

Subcommands: ``pretrain``, ``adapt``, ``generate``, ``trace``, ``eval``,
``inspect-schedule``, plus ``make-data`` for synthesizing task corpora.

Every subcommand accepts ``--config FILE`` with line-oriented ``key=value``
pairs (``#`` comments allowed); keys use the flag names with underscores.
Unknown keys are hard errors, and explicit flags override file values.  All
randomness derives from ``--seed``; with ``--threads 1`` (the default) any
command repeated with an identical resolved config produces byte-identical
checkpoints, generations, and reports.

Errors exit nonzero after a single ``error: ...`` line on stderr.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import plots
from .data import (TASKS, TOKENIZER_MODES, SyntheticTaskSpec, build_vocab_from_pairs, detokenize,
                   generate_synthetic, pairs_to_examples, read_corpus, render_trace, tokenize, write_corpus)
from .denoiser import TransformerConfig
from .length import LengthHeadConfig, length_beam_generate
from .metrics import BLEU_NOTE, EvalReport, bleu, exact_match, token_accuracy
from .nn import load_checkpoint, save_checkpoint
from .schedule import FAMILIES, build_schedule, build_unmask_plan, loss_weight
from .training import (TrainConfig, checkpoint_config, diffusive_adapt, mlm_pretrain,
                       model_from_checkpoint, prune_vocab, resolve_label_smoothing, write_metrics)
from .vocab import Vocab

REQUIRED = object()


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Argparse variant whose usage errors are single-line and nonzero."""

    def error(self, message):
        raise CliError(message)


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


class _Opts:
    """Registry of a subcommand's options for config-file resolution."""

    def __init__(self, parser: argparse.ArgumentParser):
        self.parser = parser
        self.schema: dict[str, tuple] = {}

    def add(self, flag: str, type=str, default=None, help: str = "", choices=None):
        dest = flag.lstrip("-").replace("-", "_")
        if type is bool:
            self.parser.add_argument(flag, dest=dest, default=None,
                                     action=argparse.BooleanOptionalAction, help=help)
            self.schema[dest] = (_parse_bool, default)
        else:
            self.parser.add_argument(flag, dest=dest, type=type, default=None,
                                     choices=choices, help=help)
            self.schema[dest] = (type, default)


def _read_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise CliError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            key = key.strip().replace("-", "_")
            if key in values:
                raise CliError(f"{path}:{lineno}: duplicate key {key!r}")
            values[key] = value.strip()
    return values


def _resolve(args: argparse.Namespace, opts: _Opts) -> tuple[dict, set[str]]:
    """Merge flags over config-file values over defaults.

    Returns the resolved config and the set of keys given explicitly
    (by flag or file) rather than filled from defaults.
    """
    file_values: dict[str, str] = {}
    if getattr(args, "config", None):
        file_values = _read_config_file(args.config)
        unknown = set(file_values) - set(opts.schema)
        if unknown:
            raise CliError(f"unknown config keys: {', '.join(sorted(unknown))}")
    resolved = {}
    explicit: set[str] = set()
    for dest, (type_fn, default) in opts.schema.items():
        flag_val = getattr(args, dest)
        if flag_val is not None:
            resolved[dest] = flag_val
            explicit.add(dest)
        elif dest in file_values:
            try:
                resolved[dest] = type_fn(file_values[dest])
            except (TypeError, ValueError) as e:
                raise CliError(f"config key {dest!r}: {e}") from None
            explicit.add(dest)
        elif default is REQUIRED:
            raise CliError(f"missing required option --{dest.replace('_', '-')}")
        else:
            resolved[dest] = default
    return resolved, explicit


def _public_config(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if not k.startswith("_")}


def _config_header(cfg: dict) -> str:
    public = _public_config(cfg)
    lines = [f"# config {k}={public[k]}" for k in sorted(public)]
    return "\n".join(lines) + "\n"


def _limit_threads(n: int) -> None:
    if n < 1:
        raise CliError(f"threads must be positive, got {n}")
    from threadpoolctl import threadpool_limits
    threadpool_limits(limits=n)


def _write_text(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        parent = os.path.dirname(path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


# ---- subcommand setup -----------------------------------------------------------


def _common(opts: _Opts) -> None:
    opts.add("--seed", type=int, default=0, help="root seed for all randomness")
    opts.add("--threads", type=int, default=1, help="BLAS thread cap (1 = bit-reproducible)")


def _model_opts(opts: _Opts) -> None:
    opts.add("--dim", type=int, default=64, help="model width")
    opts.add("--heads", type=int, default=4, help="attention heads")
    opts.add("--layers", type=int, default=2, help="transformer blocks")
    opts.add("--ff-dim", type=int, default=128, help="feed-forward width")
    opts.add("--max-positions", type=int, default=64, help="maximum sequence length")
    opts.add("--tokenizer", type=str, default="char", choices=list(TOKENIZER_MODES), help="tokenizer mode")


def _train_opts(opts: _Opts) -> None:
    opts.add("--steps", type=int, default=500, help="optimizer steps")
    opts.add("--batch-size", type=int, default=32, help="examples per step")
    opts.add("--lr", type=float, default=1e-3, help="Adam learning rate")
    opts.add("--label-smoothing", type=float, default=None, help="epsilon; default 0.1 scratch / 0.0 from checkpoint")
    opts.add("--holdout-fraction", type=float, default=0.1, help="held-out split fraction")
    opts.add("--log-interval", type=int, default=50, help="steps between metric rows")
    opts.add("--metrics", type=str, default=None, help="metrics log path (default <out>.metrics)")
    opts.add("--figures", type=str, default=None, help="directory for rendered figures")


def _decode_opts(opts: _Opts) -> None:
    opts.add("--mode", type=str, default="topk", choices=["topk", "ancestral"], help="decode mode")
    opts.add("--steps", type=int, default=None, help="override the schedule's step count T")
    opts.add("--length-beams", type=int, default=1, help="number of candidate lengths")
    opts.add("--oracle-length", type=bool, default=False, help="use reference lengths instead of the head")
    opts.add("--target-length", type=int, default=None, help="fixed response length for every prompt")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, _Opts]]:
    parser = _Parser(prog="demask", description="absorbing-state discrete diffusion over token sequences")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    registry: dict[str, _Opts] = {}

    def command(name: str, help: str) -> _Opts:
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", type=str, default=None, help="key=value config file")
        opts = _Opts(p)
        registry[name] = opts
        return opts

    o = command("inspect-schedule", "print a schedule table")
    o.add("--T", type=int, default=50, help="number of steps")
    o.add("--family", type=str, default="linear", choices=list(FAMILIES), help="schedule family")
    o.add("--length", type=int, default=10, help="response length for unmask counts")
    o.add("--out", type=str, default=None, help="output path (default stdout)")
    o.add("--figures", type=str, default=None, help="directory for rendered figures")
    _common(o)

    o = command("make-data", "synthesize a task corpus")
    o.add("--task", type=str, default=REQUIRED, choices=list(TASKS), help="task name")
    o.add("--symbols", type=int, default=10, help="payload alphabet size")
    o.add("--min-len", type=int, default=4, help="minimum payload length")
    o.add("--max-len", type=int, default=12, help="maximum payload length")
    o.add("--train", type=int, default=500, help="training examples")
    o.add("--test", type=int, default=100, help="test examples")
    o.add("--out-prefix", type=str, default=REQUIRED, help="prefix for train.tsv/test.tsv")
    _common(o)

    o = command("pretrain", "masked-LM pretraining on corpus text")
    o.add("--corpus", type=str, default=REQUIRED, help="training corpus file")
    o.add("--out", type=str, default=REQUIRED, help="checkpoint path")
    o.add("--init", type=str, default=None, help="resume from a checkpoint instead of fresh weights")
    o.add("--mask-ratio", type=float, default=0.15, help="fixed masking ratio")
    o.add("--T", type=int, default=50, help="schedule steps stored for later stages")
    o.add("--family", type=str, default="linear", choices=list(FAMILIES), help="schedule family")
    _model_opts(o)
    _train_opts(o)
    _common(o)

    o = command("adapt", "diffusion training on prompt/response pairs")
    o.add("--corpus", type=str, default=REQUIRED, help="training corpus file")
    o.add("--out", type=str, default=REQUIRED, help="checkpoint path")
    o.add("--init", type=str, default=None, help="warm-start checkpoint")
    o.add("--prune-vocab", type=bool, default=False, help="prune the init checkpoint's vocab to the corpus")
    o.add("--T", type=int, default=None, help="schedule steps (default: from init, else 50)")
    o.add("--family", type=str, default=None, choices=list(FAMILIES), help="schedule family")
    o.add("--length-head", type=bool, default=True, help="train a length classifier jointly")
    o.add("--length-classes", type=int, default=None, help="length classes (default max-positions - 1)")
    o.add("--length-weight", type=float, default=0.1, help="length loss weight")
    _model_opts(o)
    _train_opts(o)
    _common(o)

    o = command("generate", "decode responses for prompts")
    o.add("--ckpt", type=str, default=REQUIRED, help="model checkpoint")
    o.add("--prompts", type=str, default=REQUIRED, help="prompt file, '-' for stdin; optional TAB reference")
    o.add("--out", type=str, default=None, help="output path (default stdout)")
    _decode_opts(o)
    _common(o)

    o = command("trace", "decode and write per-prompt step traces")
    o.add("--ckpt", type=str, default=REQUIRED, help="model checkpoint")
    o.add("--prompts", type=str, default=REQUIRED, help="prompt file, '-' for stdin; optional TAB reference")
    o.add("--trace-dir", type=str, default=REQUIRED, help="directory for trace files")
    o.add("--out", type=str, default=None, help="responses output path (default stdout)")
    _decode_opts(o)
    _common(o)

    o = command("eval", "score a model on a reference corpus")
    o.add("--ckpt", type=str, default=REQUIRED, help="model checkpoint")
    o.add("--corpus", type=str, default=REQUIRED, help="reference corpus file")
    o.add("--out", type=str, default=None, help="report path (default stdout)")
    o.add("--json-out", type=str, default=None, help="structured report path (default <out>.json)")
    o.add("--figures", type=str, default=None, help="directory for rendered figures")
    o.add("--limit", type=int, default=None, help="evaluate only the first N examples")
    _decode_opts(o)
    _common(o)

    return parser, registry


# ---- subcommand bodies ------------------------------------------------------------


def cmd_inspect_schedule(cfg: dict) -> None:
    schedule = build_schedule(cfg["T"], cfg["family"])
    plan = build_unmask_plan(cfg["length"], schedule.T)
    lines = [_config_header(cfg).rstrip("\n"),
             "# t\talpha\tmask_ratio\tloss_weight\tunmask_count"]
    for t in range(schedule.T + 1):
        lw = f"{loss_weight(t, schedule.T):.12g}" if t >= 1 else "-"
        lines.append(f"{t}\t{schedule.alpha[t]:.12g}\t{1.0 - schedule.alpha[t]:.12g}\t{lw}\t{plan.counts[t]}")
    _write_text(cfg["out"], "\n".join(lines) + "\n")
    if cfg["figures"]:
        plots.plot_schedule(schedule, cfg["length"], plots.figure_path(cfg["figures"], "schedule.png"))


def cmd_make_data(cfg: dict) -> None:
    spec = SyntheticTaskSpec(task=cfg["task"], n_symbols=cfg["symbols"], min_len=cfg["min_len"],
                             max_len=cfg["max_len"], n_train=cfg["train"], n_test=cfg["test"],
                             seed=cfg["seed"])
    train, test = generate_synthetic(spec)
    prefix = cfg["out_prefix"]
    parent = os.path.dirname(prefix)
    if parent:
        os.makedirs(parent, exist_ok=True)
    write_corpus(prefix + "train.tsv", train)
    write_corpus(prefix + "test.tsv", test)
    sys.stdout.write(f"wrote {len(train)} train and {len(test)} test examples to {prefix}{{train,test}}.tsv\n")


def _sequences_from_pairs(pairs, vocab, mode):
    examples = pairs_to_examples(pairs, vocab, mode)
    return [np.concatenate([e.prompt, e.response]) for e in examples]


def cmd_pretrain(cfg: dict) -> None:
    pairs = read_corpus(cfg["corpus"])
    if not pairs:
        raise CliError(f"{cfg['corpus']}: corpus is empty")
    init_params = None
    if cfg["init"]:
        init_config, init_arrays = load_checkpoint(cfg["init"])
        for key, flag in (("dim", "--dim"), ("heads", "--heads"), ("layers", "--layers"),
                          ("ff_dim", "--ff-dim"), ("max_positions", "--max-positions"),
                          ("tokenizer", "--tokenizer")):
            if cfg.get("_explicit_" + key):
                raise CliError(f"{flag} conflicts with --init; the checkpoint fixes the model shape")
        vocab = Vocab(tokens=tuple(init_config["vocab"]["tokens"]),
                      mask_id=init_config["vocab"]["mask_id"],
                      pad_id=init_config["vocab"]["pad_id"],
                      sep_id=init_config["vocab"]["sep_id"])
        tokenizer = init_config["tokenizer"]
        model_config = TransformerConfig.from_dict(init_config["model"])
        init_params = init_arrays
    else:
        tokenizer = cfg["tokenizer"]
        vocab = build_vocab_from_pairs(pairs, tokenizer)
        model_config = TransformerConfig(vocab_size=len(vocab), dim=cfg["dim"], n_heads=cfg["heads"],
                                         n_layers=cfg["layers"], ff_dim=cfg["ff_dim"],
                                         max_positions=cfg["max_positions"])
    sequences = _sequences_from_pairs(pairs, vocab, tokenizer)
    train_config = TrainConfig(steps=cfg["steps"], batch_size=cfg["batch_size"], lr=cfg["lr"],
                               label_smoothing=cfg["label_smoothing"], T=cfg["T"], family=cfg["family"],
                               seed=cfg["seed"], holdout_fraction=cfg["holdout_fraction"],
                               log_interval=cfg["log_interval"])
    model, history = mlm_pretrain(sequences, vocab, model_config, train_config,
                                  mask_ratio=cfg["mask_ratio"], init_params=init_params)
    meta = _public_config(cfg)
    meta["objective"] = "mlm"
    config = checkpoint_config(model_config, vocab, tokenizer, cfg["T"], cfg["family"],
                               train_meta=meta, seed=cfg["seed"])
    save_checkpoint(cfg["out"], config, model.store)
    metrics_path = cfg["metrics"] or cfg["out"] + ".metrics"
    write_metrics(metrics_path, history)
    if cfg["figures"]:
        plots.plot_metrics(history, plots.figure_path(cfg["figures"], "pretrain_loss.png"))
    final = history[-1] if history else None
    note = f" final holdout loss {final.holdout_loss:.4f}" if final else ""
    sys.stdout.write(f"pretrained {model.store.n_values()} parameters for {cfg['steps']} steps;{note}\n")


def cmd_adapt(cfg: dict) -> None:
    pairs = read_corpus(cfg["corpus"])
    if not pairs:
        raise CliError(f"{cfg['corpus']}: corpus is empty")
    init_params = None
    if cfg["init"]:
        init_config, init_arrays = load_checkpoint(cfg["init"])
        for key, flag in (("dim", "--dim"), ("heads", "--heads"), ("layers", "--layers"),
                          ("ff_dim", "--ff-dim"), ("max_positions", "--max-positions"),
                          ("tokenizer", "--tokenizer")):
            if cfg.get("_explicit_" + key):
                raise CliError(f"{flag} conflicts with --init; the checkpoint fixes the model shape")
        if cfg["prune_vocab"]:
            old_vocab = Vocab(tokens=tuple(init_config["vocab"]["tokens"]),
                              mask_id=init_config["vocab"]["mask_id"],
                              pad_id=init_config["vocab"]["pad_id"],
                              sep_id=init_config["vocab"]["sep_id"])
            examples_old = pairs_to_examples(pairs, old_vocab, init_config["tokenizer"])
            init_config, init_arrays = prune_vocab(init_config, init_arrays, examples_old)
        vocab = Vocab(tokens=tuple(init_config["vocab"]["tokens"]),
                      mask_id=init_config["vocab"]["mask_id"],
                      pad_id=init_config["vocab"]["pad_id"],
                      sep_id=init_config["vocab"]["sep_id"])
        tokenizer = init_config["tokenizer"]
        model_config = TransformerConfig.from_dict(init_config["model"])
        init_params = init_arrays
        T = cfg["T"] if cfg["T"] is not None else int(init_config["schedule"]["T"])
        family = cfg["family"] if cfg["family"] is not None else str(init_config["schedule"]["family"])
    else:
        if cfg["prune_vocab"]:
            raise CliError("--prune-vocab requires --init")
        tokenizer = cfg["tokenizer"]
        vocab = build_vocab_from_pairs(pairs, tokenizer)
        model_config = TransformerConfig(vocab_size=len(vocab), dim=cfg["dim"], n_heads=cfg["heads"],
                                         n_layers=cfg["layers"], ff_dim=cfg["ff_dim"],
                                         max_positions=cfg["max_positions"])
        T = cfg["T"] if cfg["T"] is not None else 50
        family = cfg["family"] if cfg["family"] is not None else "linear"

    examples = pairs_to_examples(pairs, vocab, tokenizer)
    length_config = None
    if cfg["length_head"]:
        n_classes = cfg["length_classes"] or model_config.max_positions - 1
        length_config = LengthHeadConfig(dim=model_config.dim, n_heads=model_config.n_heads,
                                         ff_dim=model_config.ff_dim, mlp_dim=model_config.dim,
                                         n_classes=n_classes)
    train_config = TrainConfig(steps=cfg["steps"], batch_size=cfg["batch_size"], lr=cfg["lr"],
                               label_smoothing=cfg["label_smoothing"], T=T, family=family,
                               seed=cfg["seed"], holdout_fraction=cfg["holdout_fraction"],
                               log_interval=cfg["log_interval"], length_weight=cfg["length_weight"])
    model, head, history = diffusive_adapt(examples, vocab, model_config, train_config,
                                           init_params=init_params, length_config=length_config)
    meta = _public_config(cfg)
    meta["objective"] = "diffusion"
    meta["resolved_label_smoothing"] = resolve_label_smoothing(train_config, init_params is not None)
    config = checkpoint_config(model_config, vocab, tokenizer, T, family,
                               length_config=length_config, length_trained=head is not None,
                               train_meta=meta, seed=cfg["seed"])
    save_checkpoint(cfg["out"], config, model.store)
    metrics_path = cfg["metrics"] or cfg["out"] + ".metrics"
    write_metrics(metrics_path, history)
    if cfg["figures"]:
        plots.plot_metrics(history, plots.figure_path(cfg["figures"], "adapt_loss.png"))
    final = history[-1] if history else None
    note = f" final holdout loss {final.holdout_loss:.4f}" if final else ""
    sys.stdout.write(f"adapted {model.store.n_values()} parameters for {cfg['steps']} steps;{note}\n")


def _read_prompt_lines(path: str) -> list[tuple[str, str | None]]:
    """Prompt file: one prompt per line, optional TAB-separated reference."""
    if path == "-":
        raw = sys.stdin.read().splitlines()
        source = "<stdin>"
    else:
        with open(path, "r", encoding="utf-8") as fh:
            raw = fh.read().splitlines()
        source = path
    out: list[tuple[str, str | None]] = []
    for lineno, line in enumerate(raw, start=1):
        if not line or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) == 1:
            out.append((cols[0], None))
        elif len(cols) == 2:
            out.append((cols[0], cols[1]))
        else:
            raise CliError(f"{source}:{lineno}: expected at most one tab separator")
    if not out:
        raise CliError(f"{source}: no prompts found")
    return out


def _load_model(cfg: dict):
    config, arrays = load_checkpoint(cfg["ckpt"])
    model, head, vocab, schedule, tokenizer = model_from_checkpoint(config, arrays)
    if cfg.get("steps") is not None:
        schedule = build_schedule(cfg["steps"], schedule.family)
    head_trained = bool(config.get("length_head_trained", False))
    return model, head, vocab, schedule, tokenizer, head_trained


def _decode_prompts(cfg: dict, prompts: list[tuple[str, str | None]]):
    """Shared decode path for generate/trace/eval; yields winning candidates."""
    model, head, vocab, schedule, tokenizer, head_trained = _load_model(cfg)
    if cfg["oracle_length"] and cfg["target_length"] is not None:
        raise CliError("--oracle-length and --target-length are mutually exclusive")
    root = np.random.SeedSequence(cfg["seed"])
    children = root.spawn(len(prompts))
    results = []
    warnings_out = []
    if head is None and not cfg["oracle_length"] and cfg["target_length"] is None:
        raise CliError("checkpoint has no length head; use --oracle-length or --target-length")
    if head is not None and not head_trained and not cfg["oracle_length"] and cfg["target_length"] is None:
        warnings_out.append("length head is untrained; predicted lengths are untrusted")
    for (prompt_text, reference), child in zip(prompts, children):
        prompt = np.concatenate([tokenize(prompt_text, vocab, tokenizer), [vocab.sep_id]]).astype(np.int64)
        oracle_len = None
        if cfg["oracle_length"]:
            if reference is None:
                raise CliError("--oracle-length needs a TAB-separated reference on every prompt line")
            oracle_len = int(tokenize(reference, vocab, tokenizer).shape[0])
        elif cfg["target_length"] is not None:
            oracle_len = cfg["target_length"]
        rng = np.random.default_rng(child) if cfg["mode"] == "ancestral" else None
        best, _ = length_beam_generate(prompt, model, schedule, head=head, n_beams=cfg["length_beams"],
                                       mode=cfg["mode"], rng=rng, oracle_length=oracle_len,
                                       head_trained=head_trained)
        results.append((best, reference))
    return model, vocab, tokenizer, results, warnings_out


def cmd_generate(cfg: dict, trace_dir: str | None = None) -> None:
    prompts = _read_prompt_lines(cfg["prompts"])
    _, vocab, tokenizer, results, warns = _decode_prompts(cfg, prompts)
    out_lines = [_config_header(cfg).rstrip("\n")]
    out_lines += [f"# warning: {w}" for w in warns]
    for i, (best, _) in enumerate(results):
        out_lines.append(detokenize(best.response, vocab, tokenizer))
        if trace_dir is not None:
            os.makedirs(trace_dir, exist_ok=True)
            path = os.path.join(trace_dir, f"trace_{i:04d}.txt")
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(render_trace(best.trace, vocab, tokenizer))
    _write_text(cfg["out"], "\n".join(out_lines) + "\n")


def cmd_trace(cfg: dict) -> None:
    cmd_generate(cfg, trace_dir=cfg["trace_dir"])


def cmd_eval(cfg: dict) -> None:
    pairs = read_corpus(cfg["corpus"])
    if cfg["limit"] is not None:
        pairs = pairs[:cfg["limit"]]
    if not pairs:
        raise CliError(f"{cfg['corpus']}: no examples to evaluate")
    _, vocab, tokenizer, results, warns = _decode_prompts(cfg, [(p, r) for p, r in pairs])
    hyps = [best.response for best, _ in results]
    refs = [tokenize(r, vocab, tokenizer) for _, r in pairs]
    report = EvalReport(
        metrics={"exact_match": exact_match(hyps, refs),
                 "token_accuracy": token_accuracy(hyps, refs),
                 "bleu": bleu(hyps, refs)},
        n_examples=len(pairs),
        config=_public_config(cfg),
        notes=[BLEU_NOTE] + warns,
    )
    _write_text(cfg["out"], report.to_lines())
    json_path = cfg["json_out"] or (cfg["out"] + ".json" if cfg["out"] else None)
    if json_path:
        _write_text(json_path, report.to_json())
    if cfg["figures"]:
        plots.plot_eval_report(report, plots.figure_path(cfg["figures"], "eval_metrics.png"))


COMMANDS = {
    "inspect-schedule": cmd_inspect_schedule,
    "make-data": cmd_make_data,
    "pretrain": cmd_pretrain,
    "adapt": cmd_adapt,
    "generate": cmd_generate,
    "trace": cmd_trace,
    "eval": cmd_eval,
}


def main(argv: list[str] | None = None) -> int:
    parser, registry = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise CliError("no command given; see --help")
        opts = registry[args.command]
        cfg, explicit = _resolve(args, opts)
        # remember which model-shape options were explicit, for --init conflicts
        for key in ("dim", "heads", "layers", "ff_dim", "max_positions", "tokenizer"):
            if key in cfg:
                cfg["_explicit_" + key] = key in explicit
        if "threads" in cfg:
            _limit_threads(cfg["threads"])
        COMMANDS[args.command](cfg)
        return 0
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, FloatingPointError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
