"""Small rule-based NLI corpus in SNLI's jsonl format, for tests and demos.

Premises describe someone doing something somewhere. Hypotheses restate part
of the premise (entailment), swap the action or negate it (contradiction), or
add details the premise never mentions (neutral). Records carry the same
fields as SNLI (``gold_label``, ``sentence1_parse``, ``sentence2_parse``,
plus the plain sentences) so they go through the real reader.

    python -m diin.synthetic OUT_DIR --train 5000 --dev 1000
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from .textprep import extract_pos

ADJECTIVES = ["small", "tall", "young", "old", "happy", "tired", "brown", "little"]
SUBJECTS = ["dog", "cat", "man", "woman", "boy", "girl", "child", "player", "worker", "dancer"]
VERBS = ["runs", "sleeps", "eats", "sits", "plays", "jumps", "sings", "waits", "reads", "swims"]
PLACES = ["park", "street", "beach", "house", "field", "kitchen", "garden", "station"]
EXTRAS = [("with", "friend"), ("for", "hours"), ("near", "car"), ("after", "work"),
          ("beside", "tree"), ("under", "bridge")]


def _np(words: list[tuple[str, str]]) -> str:
    return "(NP " + " ".join(f"({t} {w})" for t, w in words) + ")"


def _sentence(subj_np: list[tuple[str, str]], vp: str) -> tuple[str, list[str]]:
    parse = f"(ROOT (S {_np(subj_np)} {vp} (. .)))"
    return parse, [tok for _, tok in extract_pos(parse)]


def _pp(prep: str, noun: str, det: str = "the") -> str:
    return f"(PP (IN {prep}) (NP (DT {det}) (NN {noun})))"


def make_record(label: str, rng: np.random.Generator) -> dict:
    adj = str(rng.choice(ADJECTIVES))
    subj = str(rng.choice(SUBJECTS))
    verb = str(rng.choice(VERBS))
    place = str(rng.choice(PLACES))
    premise_parse, premise_tokens = _sentence(
        [("DT", "A"), ("JJ", adj), ("NN", subj)], f"(VP (VBZ {verb}) {_pp('in', place)})")
    style = int(rng.integers(2))
    if label == "entailment":
        vp = f"(VP (VBZ {verb}))" if style else f"(VP (VBZ {verb}) {_pp('in', place)})"
        hyp = _sentence([("DT", "A"), ("NN", subj)], vp)
    elif label == "contradiction":
        if style:
            other = str(rng.choice([v for v in VERBS if v != verb]))
            hyp = _sentence([("DT", "The"), ("NN", subj)], f"(VP (VBZ {other}) {_pp('in', place)})")
        else:
            bare = verb[:-1]
            hyp = _sentence([("DT", "The"), ("NN", subj)], f"(VP (VBZ does) (RB not) (VP (VB {bare})))")
    else:
        prep, noun = EXTRAS[int(rng.integers(len(EXTRAS)))]
        det = "a" if prep in ("with", "near", "beside", "under") else "the"
        hyp = _sentence([("DT", "A"), ("NN", subj)], f"(VP (VBZ {verb}) {_pp(prep, noun, det)})")
    hyp_parse, hyp_tokens = hyp
    return {
        "gold_label": label,
        "sentence1": " ".join(premise_tokens),
        "sentence2": " ".join(hyp_tokens),
        "sentence1_parse": premise_parse,
        "sentence2_parse": hyp_parse,
    }


def generate(n: int, seed: int = 0, unlabeled_rate: float = 0.0) -> list[dict]:
    """``n`` labeled records in round-robin label order, plus optional ``-`` records."""
    rng = np.random.default_rng(seed)
    labels = ("entailment", "contradiction", "neutral")
    out = []
    for i in range(n):
        rec = make_record(labels[i % 3], rng)
        out.append(rec)
        if unlabeled_rate and rng.random() < unlabeled_rate:
            extra = make_record(labels[int(rng.integers(3))], rng)
            extra["gold_label"] = "-"
            out.append(extra)
    order = rng.permutation(len(out))
    return [out[i] for i in order]


def write_jsonl(path: str | Path, records: list[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return path


def make_corpus(out_dir: str | Path, n_train: int = 600, n_dev: int = 150, n_test: int = 150,
                seed: int = 0) -> Path:
    out_dir = Path(out_dir)
    for i, (split, n) in enumerate((("train", n_train), ("dev", n_dev), ("test", n_test))):
        write_jsonl(out_dir / f"snli_1.0_{split}.jsonl", generate(n, seed=seed * 10 + i, unlabeled_rate=0.02))
    return out_dir


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("out_dir")
    ap.add_argument("--train", type=int, default=600)
    ap.add_argument("--dev", type=int, default=150)
    ap.add_argument("--test", type=int, default=150)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    make_corpus(args.out_dir, args.train, args.dev, args.test, args.seed)


if __name__ == "__main__":
    main()
