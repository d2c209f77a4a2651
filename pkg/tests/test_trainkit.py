import dataclasses
import json
import math

import numpy as np
import pytest

from diin.checkpoint import load_checkpoint
from diin.config import DEFAULT_STAGES
from diin.errors import DataError
from diin.featnet import count_params
from diin.model import DIIN
from diin.optim import ADVANCE, plateau_decision
from diin.tensorcore import Tensor
from diin.trainkit import (
    METRICS_HEADER, TrainState, eval_interval, evaluate, load_dataset, model_from_checkpoint, read_metrics,
    split_path, train,
)

from runs import TINY_MODEL, Scripted, stage_rows, tiny_config, tiny_dataset


@pytest.fixture(scope="module")
def data():
    return tiny_dataset()


# ---------------------------------------------------------------- eval interval

def test_fixed_interval():
    assert eval_interval(0.99, "fixed", 500) == 500


@pytest.mark.parametrize("acc,gap", [(0.0, 1000), (0.60, 1000), (0.6999, 1000), (0.70, 500), (0.75, 500),
                                     (0.80, 250), (0.82, 250), (1.0, 250)])
def test_adaptive_interval(acc, gap):
    assert eval_interval(acc) == gap


# ---------------------------------------------------------------- evaluate

class FixedLogits:
    """Stands in for DIIN.logits with a table of per-example logits."""

    def __init__(self, model, rows):
        self.cfg = model.cfg
        self.rows = np.asarray(rows, dtype=np.float32)
        self.i = 0

    def logits(self, batch):
        out = self.rows[self.i:self.i + len(batch)]
        self.i += len(batch)
        return Tensor(out)


def test_evaluate_accuracy_two_of_three(data):
    model, _ = _fresh_model(data)
    examples = data.dev[:3]
    labels = [e.label_id for e in examples]
    rows = np.zeros((3, 3))
    rows[0, labels[0]] = 5
    rows[1, labels[1]] = 5
    rows[2, (labels[2] + 1) % 3] = 5
    _, acc = evaluate(FixedLogits(model, rows), examples, batch_size=2)
    assert acc == pytest.approx(2 / 3)


def test_evaluate_uniform_model_loss_is_ln3(data):
    model, _ = _fresh_model(data)
    loss, _ = evaluate(FixedLogits(model, np.zeros((len(data.dev), 3))), data.dev)
    assert loss == pytest.approx(math.log(3), abs=1e-6)


def test_evaluate_deterministic_and_batch_size_free(data):
    model, _ = _fresh_model(data)
    a = evaluate(model, data.dev, 2)
    assert evaluate(model, data.dev, 2) == a
    assert evaluate(model, data.dev, 5) == pytest.approx(a, rel=1e-5)


def test_evaluate_empty_set(data):
    model, _ = _fresh_model(data)
    with pytest.raises(DataError, match="empty"):
        evaluate(model, [])


def _fresh_model(data):
    cfg = dataclasses.replace(TINY_MODEL, **data.vocab.sizes())
    return DIIN(cfg), cfg


# ---------------------------------------------------------------- data loading

def test_split_path_and_missing_split(tmp_path, synthetic_corpus):
    assert split_path(synthetic_corpus, "dev").name == "snli_1.0_dev.jsonl"
    with pytest.raises(DataError, match="no train split"):
        split_path(tmp_path, "train")


def test_load_dataset_limits(synthetic_corpus, tmp_path):
    ds = load_dataset(tiny_config(tmp_path, data_dir=str(synthetic_corpus), max_train_examples=50,
                                  max_dev_examples=10))
    assert (len(ds.train), len(ds.dev)) == (50, 10)
    assert ds.vocab.frozen
    with pytest.raises(DataError):
        load_dataset(tiny_config(tmp_path))


# ---------------------------------------------------------------- training runs

def _same_weights(p, q):
    # the state blobs differ in out_dir, so compare tensors only
    a, b = load_checkpoint(p).tensors, load_checkpoint(q).tensors
    return list(a) == list(b) and all(a[k].tobytes() == b[k].tobytes() for k in a)


def test_zero_steps_writes_header_and_artifacts(tmp_path, data):
    run = train(tiny_config(tmp_path, max_steps=0), data)
    assert run.metrics.read_text().splitlines() == [",".join(METRICS_HEADER)]
    assert run.best_checkpoint.exists() and run.last_checkpoint.exists() and run.manifest.exists()
    assert run.records == [] and run.state.step == 0


def test_same_seed_same_metrics(tmp_path, data):
    a = train(tiny_config(tmp_path / "a", max_steps=30), data)
    b = train(tiny_config(tmp_path / "b", max_steps=30), data)
    assert a.metrics.read_bytes() == b.metrics.read_bytes()
    assert _same_weights(a.last_checkpoint, b.last_checkpoint)
    c = train(tiny_config(tmp_path / "c", max_steps=30, seed=1), data)
    assert c.metrics.read_bytes() != a.metrics.read_bytes()


def test_metrics_rows_are_well_formed(tmp_path, data):
    run = train(tiny_config(tmp_path, max_steps=40), data)
    rows = read_metrics(run.metrics)
    dev = [r for r in rows if r["split"] == "dev"]
    assert [int(r["step"]) for r in dev] == list(range(5, 41, 5))
    for r in dev:
        assert 0 <= float(r["accuracy"]) <= 1 and float(r["loss"]) > 0
        assert r["optimizer"] in ("adam", "adadelta", "sgd") and int(r["eval_interval"]) == 5
    steps = [int(r["step"]) for r in rows]
    assert steps == sorted(steps)


def test_stage_transitions_follow_replay(tmp_path, data):
    losses = [1.0, 0.9, 0.95, 0.95, 0.95, 0.8, 0.85, 0.85, 0.85, 0.85, 0.7, 0.7, 0.7, 0.7, 0.7, 0.7]
    run = train(tiny_config(tmp_path, max_steps=500, eval_interval=2), data, evaluator=Scripted(losses))
    _, switches = stage_rows(run.metrics)
    expected = [(i, DEFAULT_STAGES[d.stage].kind) for i in range(len(losses))
                if (d := plateau_decision(losses[: i + 1], DEFAULT_STAGES)).action == ADVANCE]
    assert switches == expected == [(4, "adadelta"), (9, "sgd")]
    # the final stage exhausts on the fifth miss after its own best
    assert run.state.plateau.exhausted and len(run.records) == 16
    kinds = [r.optimizer for r in run.records]
    assert kinds[:5] == ["adam"] * 5 and kinds[5:10] == ["adadelta"] * 5 and set(kinds[10:]) == {"sgd"}


def test_best_checkpoint_only_on_strict_improvement(tmp_path, data):
    accs = [0.4, 0.6, 0.6, 0.5, 0.7, 0.7]
    run = train(tiny_config(tmp_path, max_steps=12, eval_interval=2), data,
                evaluator=Scripted([1.0 - 0.01 * i for i in range(6)], accs))
    assert (run.state.best_step, run.state.best_accuracy) == (10, 0.7)
    best = TrainState.from_dict(load_checkpoint(run.best_checkpoint).state["train_state"])
    assert best.step == 10


def test_adaptive_gaps(tmp_path, data):
    accs = [0.60, 0.75, 0.85]
    run = train(tiny_config(tmp_path, max_steps=2500, eval_mode="adaptive"), data,
                evaluator=Scripted([1.0, 0.9, 0.8], accs))
    assert [(r.step, r.eval_interval) for r in run.records] == [(1000, 1000), (2000, 1000), (2500, 500)]


def test_manifest_contents(tmp_path, data):
    run = train(tiny_config(tmp_path, max_steps=5, seed=11), data)
    manifest = json.loads(run.manifest.read_text())
    ckpt = load_checkpoint(run.last_checkpoint)
    model, vocab = model_from_checkpoint(ckpt)
    assert manifest["seed"] == 11
    assert manifest["total_params"] == count_params(model).total_params
    assert manifest["datasets"]["files"] == data.checksums
    assert manifest["datasets"]["train_examples"] == len(data.train)
    assert vocab.to_dict() == data.vocab.to_dict()


def test_resume_matches_uninterrupted(tmp_path, data):
    full = train(tiny_config(tmp_path / "full", max_steps=60), data)
    first = train(tiny_config(tmp_path / "split", max_steps=25), data)
    resumed = train(tiny_config(tmp_path / "split", max_steps=60), data, resume_from=first.last_checkpoint)
    assert read_metrics(resumed.metrics) == read_metrics(full.metrics)
    assert _same_weights(resumed.last_checkpoint, full.last_checkpoint)
    assert (load_checkpoint(resumed.last_checkpoint).state["train_state"]
            == load_checkpoint(full.last_checkpoint).state["train_state"])
