"""``diin`` command-line entry point.

Exit codes: 0 success, 1 check failure, 2 config error, 3 data error,
4 checkpoint error.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
import time

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint
from .config import load_config
from .errors import CheckpointError, ConfigError, DataError
from .featnet import count_params
from .model import DIIN
from .tensorcore import inject_grad_fault
from .textprep import LABELS, UNK, RawExample, build_batch, featurize, featurize_all, read_snli_jsonl

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_DATA, EXIT_CHECKPOINT = 0, 1, 2, 3, 4

# Published SNLI test accuracies for the full-size model. Reaching them needs
# tens of epochs over the whole training set, so nothing here gates on them;
# `eval --report-targets` just says where a long run landed.
LONG_RUN_TARGETS = {"reported": 0.880, "reproduction": 0.8638, "three_optimizer_run": 0.8727}
LONG_RUN_BAND = (0.84, 0.88)


def _fail(code: int, message: str) -> int:
    print(f"diin: error: {message}", file=sys.stderr)
    return code


def cmd_train(args) -> int:
    from .trainkit import train

    config = load_config(args.config)
    overrides = {}
    if args.data_dir is not None:
        overrides["data_dir"] = args.data_dir
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.max_steps is not None:
        overrides["max_steps"] = args.max_steps
    config = config.replace(**overrides)
    config.validate()
    run = train(config, resume_from=args.resume)
    best = run.state.best_accuracy
    print(f"steps={run.state.step} evals={len(run.records)} best_dev_accuracy="
          f"{best if best >= 0 else float('nan'):.4f} best_step={run.state.best_step} out={run.out_dir}")
    return EXIT_OK


def _load_model(path):
    from .trainkit import model_from_checkpoint

    ckpt = load_checkpoint(path)
    return model_from_checkpoint(ckpt, path)


def cmd_eval(args) -> int:
    from .trainkit import evaluate, split_path

    model, vocab = _load_model(args.checkpoint)
    raw = read_snli_jsonl(split_path(args.data_dir, args.split))
    if not len(raw):
        raise DataError(f"{args.split} split in {args.data_dir} has no labeled examples")
    examples = featurize_all(raw, vocab, model.cfg.max_word_len)
    loss, acc = evaluate(model, examples, args.batch_size)
    print(f"split={args.split} loss={loss:.6f} accuracy={acc:.6f}")
    if args.report_targets:
        lo, hi = LONG_RUN_BAND
        for name, value in LONG_RUN_TARGETS.items():
            print(f"target {name}={value:.4f} gap={acc - value:+.4f}")
        print(f"target_band={lo:.2f}-{hi:.2f} in_band={'yes' if lo <= acc <= hi else 'no'} (informational)")
    return EXIT_OK


def cmd_params(args) -> int:
    config = load_config(args.config)
    census = count_params(DIIN(config.model, seed=config.seed))
    sys.stdout.write(census.machine() if args.format == "machine" else census.table())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradsuite import TOLERANCE, run_gradcheck

    config = load_config(args.config)
    t0 = time.time()
    fault = inject_grad_fault(*args.inject_fault) if args.inject_fault else contextlib.nullcontext()
    with fault:
        results = run_gradcheck(config.model, seed=args.seed)
    failing = []
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"block={r.block} max_rel_error={r.report.max_rel_error:.3e} status={status}")
        for p in r.report.params:
            bad = p.max_rel_error >= TOLERANCE or p.zero_violations
            print(f"  param={p.name} probes={len(p.coords)} max_rel_error={p.max_rel_error:.3e}"
                  f" zero_violations={len(p.zero_violations)} status={'FAIL' if bad else 'ok'}")
            if bad:
                failing.append(p.name)
    worst = max(r.report.max_rel_error for r in results)
    print(f"max_rel_error={worst:.3e} tolerance={TOLERANCE:g} seconds={time.time() - t0:.1f}")
    if failing:
        print("failing parameters: " + ", ".join(failing))
        return EXIT_CHECK
    return EXIT_OK


def predict_example(model: DIIN, vocab, premise: str, hypothesis: str) -> np.ndarray:
    """Class probabilities for two whitespace-tokenized sentences (POS unknown)."""
    p, h = premise.split(), hypothesis.split()
    if not p or not h:
        raise ConfigError("premise and hypothesis must both contain at least one token")
    raw = RawExample(LABELS[0], p, h, ["?"] * len(p), ["?"] * len(h))
    ex = featurize(raw, vocab, model.cfg.max_word_len)
    ex.premise_pos_ids = [UNK] * len(p)
    ex.hypothesis_pos_ids = [UNK] * len(h)
    batch = build_batch([ex], model.cfg.max_premise_len, model.cfg.max_hypothesis_len)
    return model.predict_proba(batch)[0].astype(np.float64)


def cmd_predict(args) -> int:
    if not args.premise.split() or not args.hypothesis.split():
        return _fail(EXIT_CONFIG, "premise and hypothesis must both be non-empty")
    model, vocab = _load_model(args.checkpoint)
    probs = predict_example(model, vocab, args.premise, args.hypothesis)
    print(" ".join(f"{name}={p:.6f}" for name, p in zip(LABELS, probs)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="diin", description="Train and inspect a densely interactive NLI model.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", required=True)
    t.add_argument("--data-dir")
    t.add_argument("--out")
    t.add_argument("--seed", type=int)
    t.add_argument("--max-steps", type=int)
    t.add_argument("--resume", metavar="CKPT", help="continue from a checkpoint written by an earlier run")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a data split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data-dir", required=True)
    e.add_argument("--split", choices=("dev", "test"), default="dev")
    e.add_argument("--batch-size", type=int, default=128)
    e.add_argument("--report-targets", action="store_true",
                   help="compare against published full-SNLI accuracies (long runs only; never fails)")
    e.set_defaults(func=cmd_eval)

    p = sub.add_parser("params", help="print the per-layer parameter census")
    p.add_argument("--config", required=True)
    p.add_argument("--format", choices=("table", "machine"), default="table")
    p.set_defaults(func=cmd_params)

    g = sub.add_parser("gradcheck", help="finite-difference check of every block")
    g.add_argument("--config", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--inject-fault", nargs="+", metavar="OP", help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_gradcheck)

    q = sub.add_parser("predict", help="class probabilities for one sentence pair")
    q.add_argument("--checkpoint", required=True)
    q.add_argument("--premise", required=True)
    q.add_argument("--hypothesis", required=True)
    q.set_defaults(func=cmd_predict)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except DataError as exc:
        return _fail(EXIT_DATA, str(exc))
    except CheckpointError as exc:
        return _fail(EXIT_CHECKPOINT, str(exc))


if __name__ == "__main__":
    sys.exit(main())
