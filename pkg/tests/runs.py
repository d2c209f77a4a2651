"""Small training fixtures shared by the trainkit, CLI and acceptance tests."""

from __future__ import annotations

import dataclasses
import tempfile
from pathlib import Path

from diin.config import ModelConfig, toy_config
from diin.synthetic import generate, write_jsonl
from diin.textprep import Vocab, featurize_all, read_snli_jsonl
from diin.trainkit import Dataset, read_metrics

TINY_MODEL = dataclasses.replace(ModelConfig.toy(), word_dim=4, char_filters=4, encoder_dim=0, growth_rate=2,
                                 layers_per_block=1, max_premise_len=12, max_hypothesis_len=12, max_word_len=8)


def records_dataset(train_records, dev_records) -> Dataset:
    with tempfile.TemporaryDirectory() as tmp:
        train_raw = read_snli_jsonl(write_jsonl(Path(tmp) / "train.jsonl", train_records))
        dev_raw = read_snli_jsonl(write_jsonl(Path(tmp) / "dev.jsonl", dev_records))
    vocab = Vocab()
    train = featurize_all(train_raw, vocab, TINY_MODEL.max_word_len)
    vocab.freeze()
    dev = featurize_all(dev_raw, vocab, TINY_MODEL.max_word_len)
    return Dataset(vocab, train, dev, {"train": train_raw.sha256, "dev": dev_raw.sha256})


def tiny_dataset(n_train=24, n_dev=6, seed=0) -> Dataset:
    return records_dataset(generate(n_train, seed=seed), generate(n_dev, seed=seed + 1))


def tiny_config(out_dir, **kw):
    kw.setdefault("batch_size", 4)
    return toy_config(out_dir=str(out_dir), model=TINY_MODEL, **kw)


class Scripted:
    """Evaluator stub that replays fixed (loss, accuracy) pairs."""

    def __init__(self, losses, accuracies=None):
        self.losses = list(losses)
        self.accuracies = list(accuracies) if accuracies is not None else [0.5] * len(self.losses)
        self.calls = 0

    def __call__(self, model, examples):
        i = self.calls
        self.calls += 1
        return self.losses[i], self.accuracies[i]


def stage_rows(metrics_path):
    rows = read_metrics(metrics_path)
    dev_steps = [int(r["step"]) for r in rows if r["split"] == "dev"]
    switches = [(dev_steps.index(int(r["step"])), r["optimizer"]) for r in rows if r["split"] == "stage"]
    return rows, switches
