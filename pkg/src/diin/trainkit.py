"""Training loop, evaluation scheduling, model selection and run artifacts.

Optimizer stages switch on dev *loss* plateaus; the best checkpoint is chosen
by dev *accuracy*. Evaluation happens every ``eval_interval`` steps, where the
interval is either fixed or shrinks as the best accuracy rises.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from . import tensorcore as tc
from .checkpoint import Checkpoint, check_shapes, load_checkpoint, save_checkpoint
from .config import ModelConfig, TrainConfig, render_config
from .errors import CheckpointError, ConfigError, DataError
from .featnet import count_params
from .model import DIIN
from .optim import ADVANCE, OptimizerState, PlateauTracker, apply_update, l2_coefficient, l2_penalty
from .textprep import ProcessedExample, Vocab, build_batch, featurize_all, load_embeddings, read_snli_jsonl

log = logging.getLogger(__name__)

METRICS_HEADER = ["step", "split", "loss", "accuracy", "optimizer", "lr", "lambda_l2", "eval_interval"]
ADAPTIVE_SCHEDULE = ((0.80, 250), (0.70, 500))
ADAPTIVE_START = 1000


def eval_interval(best_accuracy: float, mode: str = "adaptive", interval: int = 500) -> int:
    """Steps until the next dev evaluation."""
    if mode == "fixed":
        return interval
    if mode != "adaptive":
        raise ConfigError(f"unknown eval mode {mode!r}")
    for threshold, steps in ADAPTIVE_SCHEDULE:
        if best_accuracy >= threshold:
            return steps
    return ADAPTIVE_START


# ---------------------------------------------------------------- data

@dataclass
class Dataset:
    vocab: Vocab
    train: list[ProcessedExample]
    dev: list[ProcessedExample]
    checksums: dict[str, str] = field(default_factory=dict)


def split_path(data_dir: str | Path, split: str) -> Path:
    data_dir = Path(data_dir)
    for name in (f"snli_1.0_{split}.jsonl", f"{split}.jsonl"):
        if (data_dir / name).is_file():
            return data_dir / name
    raise DataError(f"no {split} split in {data_dir} (looked for snli_1.0_{split}.jsonl and {split}.jsonl)")


def examples_checksum(examples: Sequence[ProcessedExample]) -> str:
    h = hashlib.sha256()
    for e in examples:
        h.update(np.asarray(e.premise_ids, dtype=np.int64).tobytes())
        h.update(b"|")
        h.update(np.asarray(e.hypothesis_ids, dtype=np.int64).tobytes())
        h.update(bytes([e.label_id]))
    return h.hexdigest()


def load_dataset(config: TrainConfig) -> Dataset:
    """Read train/dev splits from ``config.data_dir`` and build the vocabulary."""
    if not config.data_dir:
        raise DataError("train.data_dir is not set")
    limit_train = config.max_train_examples or None
    limit_dev = config.max_dev_examples or None
    train_raw = read_snli_jsonl(split_path(config.data_dir, "train"), limit_train)
    dev_raw = read_snli_jsonl(split_path(config.data_dir, "dev"), limit_dev)
    if not len(train_raw) or not len(dev_raw):
        raise DataError(f"{config.data_dir}: train and dev splits must both be non-empty")
    vocab = Vocab(lowercase=config.lowercase)
    train = featurize_all(train_raw, vocab, config.model.max_word_len)
    vocab.freeze()
    dev = featurize_all(dev_raw, vocab, config.model.max_word_len)
    return Dataset(vocab, train, dev, {"train": train_raw.sha256, "dev": dev_raw.sha256})


# ---------------------------------------------------------------- evaluation

def evaluate(model: DIIN, examples: Sequence[ProcessedExample], batch_size: int = 128) -> tuple[float, float]:
    """Mean cross-entropy and accuracy with dropout off (ties → lowest class)."""
    if not examples:
        raise DataError("cannot evaluate on an empty dataset")
    cfg = model.cfg
    total_loss, correct = 0.0, 0
    for i in range(0, len(examples), batch_size):
        batch = build_batch(examples[i:i + batch_size], cfg.max_premise_len, cfg.max_hypothesis_len)
        logits = model.logits(batch)
        total_loss += tc.softmax_cross_entropy(logits, batch.labels).item() * len(batch)
        correct += int((logits.data.argmax(axis=1) == batch.labels).sum())
    return total_loss / len(examples), correct / len(examples)


Evaluator = Callable[[DIIN, Sequence[ProcessedExample]], "tuple[float, float]"]


# ---------------------------------------------------------------- state

@dataclass
class EvalRecord:
    step: int
    loss: float
    accuracy: float
    optimizer: str
    lr: float
    lambda_l2: float
    eval_interval: int


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    order: list[int] = field(default_factory=list)
    cursor: int = 0
    next_eval: int = 0
    last_eval: int = 0
    best_accuracy: float = -math.inf
    best_step: int = -1
    plateau: PlateauTracker = field(default_factory=PlateauTracker)
    rng: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "step": self.step, "epoch": self.epoch, "order": self.order, "cursor": self.cursor,
            "next_eval": self.next_eval, "last_eval": self.last_eval,
            "best_accuracy": None if math.isinf(self.best_accuracy) else self.best_accuracy,
            "best_step": self.best_step, "plateau": self.plateau.to_dict(), "rng": self.rng,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainState":
        best = d.get("best_accuracy")
        return cls(step=d["step"], epoch=d["epoch"], order=list(d["order"]), cursor=d["cursor"],
                   next_eval=d["next_eval"], last_eval=d["last_eval"],
                   best_accuracy=-math.inf if best is None else best, best_step=d["best_step"],
                   plateau=PlateauTracker.from_dict(d["plateau"]), rng=d["rng"])


@dataclass
class RunArtifacts:
    out_dir: Path
    best_checkpoint: Path
    last_checkpoint: Path
    metrics: Path
    manifest: Path
    records: list[EvalRecord]
    state: TrainState


def _fmt(x) -> str:
    if x is None or x == "":
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


class MetricsLog:
    def __init__(self, path: Path, append: bool = False):
        self.path = path
        if not (append and path.exists()):
            with path.open("w", newline="") as fh:
                csv.writer(fh).writerow(METRICS_HEADER)

    def write(self, **row) -> None:
        with self.path.open("a", newline="") as fh:
            csv.writer(fh).writerow([_fmt(row.get(k)) for k in METRICS_HEADER])


def read_metrics(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- checkpoints

def checkpoint_tensors(model: DIIN, opt: OptimizerState | None = None) -> dict[str, np.ndarray]:
    tensors = {name: p.data for name, p in model.named_parameters()}
    if opt is not None:
        for pname, slots in opt.slots.items():
            for key, arr in slots.items():
                tensors[f"optim/{pname}/{key}"] = arr
    return tensors


def checkpoint_state(config: TrainConfig, model_cfg: ModelConfig, vocab: Vocab,
                     state: TrainState, opt: OptimizerState) -> dict:
    return {
        "train_state": state.to_dict(),
        "optimizer": {"kind": opt.kind, "lr": opt.lr, "steps": dict(opt.steps)},
        "model_config": dataclasses.asdict(model_cfg),
        "config": render_config(config),
        "vocab": vocab.to_dict(),
    }


def model_from_checkpoint(ckpt: Checkpoint, path="<checkpoint>") -> tuple[DIIN, Vocab]:
    """Rebuild the network and vocabulary stored in a checkpoint."""
    try:
        model_cfg = ModelConfig(**ckpt.state["model_config"])
        vocab = Vocab.from_dict(ckpt.state["vocab"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: state blob lacks model config or vocabulary ({exc})") from None
    model = DIIN(model_cfg)
    load_params(model, ckpt, path)
    return model, vocab


def load_params(model: DIIN, ckpt: Checkpoint, path="<checkpoint>") -> None:
    params = model.parameters()
    check_shapes(ckpt, {n: p.shape for n, p in params.items()}, path)
    for name, p in params.items():
        p.data = ckpt.tensors[name].astype(p.dtype, copy=True)


# ---------------------------------------------------------------- training

def _take_batch(state: TrainState, n: int, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    if state.cursor >= len(state.order):
        state.order = rng.permutation(n).tolist()
        state.cursor = 0
        state.epoch += 1
    idx = state.order[state.cursor:state.cursor + batch_size]
    state.cursor += len(idx)
    return np.asarray(idx)


def _manifest(config: TrainConfig, model_cfg: ModelConfig, model: DIIN, dataset: Dataset, extra: dict) -> dict:
    census = count_params(model)
    return {
        "package_version": __version__,
        "numpy_version": np.__version__,
        "seed": config.seed,
        "config": render_config(config),
        "model_config": dataclasses.asdict(model_cfg),
        "census": census.to_list(),
        "total_params": census.total_params,
        "datasets": {
            "files": dataset.checksums,
            "train_examples": len(dataset.train),
            "dev_examples": len(dataset.dev),
            "train_sha256": examples_checksum(dataset.train),
            "dev_sha256": examples_checksum(dataset.dev),
        },
        **extra,
    }


def train(config: TrainConfig, dataset: Dataset | None = None, *, evaluator: Evaluator | None = None,
          resume_from: str | Path | None = None) -> RunArtifacts:
    """Run (or resume) training until ``config.max_steps`` or policy exhaustion.

    Writes ``metrics.csv``, ``manifest.json``, ``best.ckpt`` and ``last.ckpt``
    under ``config.out_dir``. ``evaluator`` replaces :func:`evaluate`, which is
    how tests script dev-loss sequences.
    """
    config.validate()
    if dataset is None:
        dataset = load_dataset(config)
    if not dataset.train or not dataset.dev:
        raise DataError("train and dev sets must be non-empty")
    model_cfg = dataclasses.replace(config.model, **dataset.vocab.sizes())
    model_cfg.validate()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / v for k, v in (("best", "best.ckpt"), ("last", "last.ckpt"),
                                     ("metrics", "metrics.csv"), ("manifest", "manifest.json"))}
    if evaluator is None:
        def evaluator(m, examples):
            return evaluate(m, examples, config.eval_batch_size)

    model = DIIN(model_cfg, seed=config.seed)
    params = model.parameters()
    stages = config.optim.stages
    extra: dict = {}

    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        load_params(model, ckpt, resume_from)
        state = TrainState.from_dict(ckpt.state["train_state"])
        opt_info = ckpt.state["optimizer"]
        opt = OptimizerState.from_policy(stages[state.plateau.stage], config.optim)
        opt.kind, opt.lr = opt_info["kind"], opt_info["lr"]
        opt.steps = {k: int(v) for k, v in opt_info["steps"].items()}
        for name, arr in ckpt.tensors.items():
            if name.startswith("optim/"):
                _, pname, key = name.split("/")
                opt.slots.setdefault(pname, {})[key] = arr.astype(params[pname].dtype, copy=True)
        rng = np.random.default_rng()
        rng.bit_generator.state = state.rng
        extra["resumed_from"] = str(resume_from)
    else:
        if config.embeddings:
            vectors, coverage = load_embeddings(config.embeddings, model_cfg.word_dim, dataset.vocab)
            hits = model.embedding.load_pretrained(vectors, dataset.vocab.words.items)
            log.info("pretrained vectors for %d words (coverage %.3f)", hits, coverage)
            extra["embedding_coverage"] = coverage
        rng = np.random.default_rng([config.seed, 1])
        state = TrainState(next_eval=eval_interval(0.0, config.eval_mode, config.eval_interval))
        opt = OptimizerState.from_policy(stages[0], config.optim)

    metrics = MetricsLog(paths["metrics"], append=resume_from is not None)
    paths["manifest"].write_text(json.dumps(_manifest(config, model_cfg, model, dataset, extra), indent=2) + "\n")

    def snapshot() -> tuple[dict, dict]:
        state.rng = rng.bit_generator.state
        return (checkpoint_tensors(model, opt),
                checkpoint_state(config, model_cfg, dataset.vocab, state, opt))

    if resume_from is None:
        save_checkpoint(paths["best"], *snapshot())

    records: list[EvalRecord] = []
    n_train = len(dataset.train)
    t0 = time.time()
    while state.step < config.max_steps and not state.plateau.exhausted:
        idx = _take_batch(state, n_train, config.batch_size, rng)
        batch = build_batch([dataset.train[i] for i in idx], model_cfg.max_premise_len,
                            model_cfg.max_hypothesis_len)
        with tc.Tape() as tape:
            loss = model.loss(batch, train=True, rng=rng)
        grads = tc.backward(tape, loss, params.values())
        lam = l2_coefficient(state.step, config.l2)
        apply_update(params, {n: grads[p] for n, p in params.items()}, opt, lam)
        state.step += 1
        if state.step != state.next_eval:
            continue

        dev_loss, dev_acc = evaluator(model, dataset.dev)
        gap = state.step - state.last_eval
        state.last_eval = state.step
        rec = EvalRecord(state.step, float(dev_loss), float(dev_acc), opt.kind, opt.lr, lam, gap)
        records.append(rec)
        metrics.write(step=rec.step, split="dev", loss=rec.loss, accuracy=rec.accuracy,
                      optimizer=rec.optimizer, lr=rec.lr, lambda_l2=rec.lambda_l2, eval_interval=gap)
        log.info("step %d  train loss %.4f  l2 %.3g  dev loss %.4f  dev acc %.4f  [%s]  %.1fs",
                 state.step, loss.item(), l2_penalty(params, lam), dev_loss, dev_acc, opt.kind, time.time() - t0)
        if dev_acc > state.best_accuracy:
            state.best_accuracy, state.best_step = float(dev_acc), state.step
            save_checkpoint(paths["best"], *snapshot())
        decision = state.plateau.observe(float(dev_loss), stages)
        if decision.action == ADVANCE:
            nxt = stages[decision.stage]
            opt.switch(nxt.kind, nxt.lr)
            metrics.write(step=state.step, split="stage", optimizer=nxt.kind, lr=nxt.lr, lambda_l2=lam,
                          eval_interval=eval_interval(max(state.best_accuracy, 0.0), config.eval_mode,
                                                      config.eval_interval))
            log.info("step %d  switching optimizer to %s (lr %g)", state.step, nxt.kind, nxt.lr)
        state.next_eval = state.step + eval_interval(max(state.best_accuracy, 0.0), config.eval_mode,
                                                     config.eval_interval)

    save_checkpoint(paths["last"], *snapshot())
    return RunArtifacts(out, paths["best"], paths["last"], paths["metrics"], paths["manifest"], records, state)

