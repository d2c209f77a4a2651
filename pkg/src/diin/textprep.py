"""SNLI ingestion and per-token feature construction."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

LABELS = ("entailment", "contradiction", "neutral")
LABEL_IDS = {name: i for i, name in enumerate(LABELS)}
PAD, UNK = 0, 1
MAX_WORD_LEN = 16


@dataclass
class RawExample:
    label: str
    premise_tokens: list[str]
    hypothesis_tokens: list[str]
    premise_pos: list[str]
    hypothesis_pos: list[str]

    def __post_init__(self):
        if self.label not in LABEL_IDS:
            raise DataError(f"unknown label {self.label!r}")
        for side in ("premise", "hypothesis"):
            toks, pos = getattr(self, f"{side}_tokens"), getattr(self, f"{side}_pos")
            if not toks:
                raise DataError(f"empty {side}")
            if len(toks) != len(pos):
                raise DataError(f"{side}: {len(toks)} tokens but {len(pos)} POS tags")


@dataclass
class SnliSplit:
    """Examples read from one file plus how many lines were kept and skipped."""

    examples: list[RawExample]
    kept: int
    skipped: int
    sha256: str = ""

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def __getitem__(self, i):
        return self.examples[i]


# ---------------------------------------------------------------- parse strings

def extract_pos(parse: str) -> list[tuple[str, str]]:
    """Leaves of a bracketed constituency parse as ``(tag, token)`` pairs.

    >>> extract_pos("(ROOT (S (NP (DT A) (NN dog))))")
    [('DT', 'A'), ('NN', 'dog')]
    """
    leaves: list[tuple[str, str]] = []
    # each frame: [open offset, label, atoms seen, has child bracket]
    stack: list[list] = []
    i, n = 0, len(parse)
    while i < n:
        ch = parse[i]
        if ch == "(":
            if stack:
                stack[-1][3] = True
            stack.append([i, None, [], False])
            i += 1
        elif ch == ")":
            if not stack:
                raise DataError(f"unbalanced ')' at offset {i}")
            start, label, atoms, has_child = stack.pop()
            if not has_child:
                if label is None:
                    raise DataError(f"empty bracket at offset {start}")
                if len(atoms) != 1:
                    raise DataError(f"leaf ({label} ...) at offset {start} has {len(atoms)} tokens, expected 1")
                leaves.append((label, atoms[0]))
            elif atoms:
                raise DataError(f"bracket at offset {start} mixes tokens and sub-brackets")
            i += 1
        elif ch.isspace():
            i += 1
        else:
            j = i
            while j < n and parse[j] not in "() \t\r\n":
                j += 1
            atom = parse[i:j]
            if not stack:
                raise DataError(f"token {atom!r} outside brackets at offset {i}")
            frame = stack[-1]
            if frame[1] is None:
                frame[1] = atom
            else:
                frame[2].append(atom)
            i = j
    if stack:
        raise DataError(f"unbalanced '(' at offset {stack[-1][0]}")
    return leaves


def read_snli_jsonl(path: str | Path, max_examples: int | None = None) -> SnliSplit:
    """Read an SNLI ``.jsonl`` file; lines whose gold label is ``-`` are skipped."""
    path = Path(path)
    examples: list[RawExample] = []
    skipped = 0
    digest = hashlib.sha256()
    try:
        fh = path.open("rb")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from None
    with fh:
        for lineno, raw in enumerate(fh, 1):
            if max_examples and len(examples) >= max_examples:
                break
            digest.update(raw)
            line = raw.decode("utf-8").strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                label = rec["gold_label"]
                p_parse, h_parse = rec["sentence1_parse"], rec["sentence2_parse"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: malformed record ({exc})") from None
            if label == "-":
                skipped += 1
                continue
            try:
                p_leaves, h_leaves = extract_pos(p_parse), extract_pos(h_parse)
                examples.append(RawExample(
                    label=label,
                    premise_tokens=[t for _, t in p_leaves],
                    hypothesis_tokens=[t for _, t in h_leaves],
                    premise_pos=[p for p, _ in p_leaves],
                    hypothesis_pos=[p for p, _ in h_leaves],
                ))
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    log.info("%s: kept %d examples, skipped %d unlabeled", path.name, len(examples), skipped)
    return SnliSplit(examples, len(examples), skipped, digest.hexdigest())


# ---------------------------------------------------------------- vocabulary

class _Index:
    def __init__(self, items: Sequence[str] = ()):
        self.items: list[str] = ["<pad>", "<unk>"]
        self.ids: dict[str, int] = {"<pad>": PAD, "<unk>": UNK}
        for it in items:
            self.add(it)

    def add(self, item: str) -> int:
        idx = self.ids.get(item)
        if idx is None:
            idx = self.ids[item] = len(self.items)
            self.items.append(item)
        return idx

    def get(self, item: str) -> int:
        return self.ids.get(item, UNK)

    def __len__(self):
        return len(self.items)

    def __contains__(self, item):
        return item in self.ids


class Vocab:
    """Word, character and POS id maps. Id 0 is padding and id 1 is unknown."""

    def __init__(self, lowercase: bool = True):
        self.lowercase = lowercase
        self.words = _Index()
        self.chars = _Index()
        self.pos = _Index()
        self.frozen = False

    def freeze(self) -> "Vocab":
        self.frozen = True
        return self

    def _lookup(self, index: _Index, item: str) -> int:
        return index.get(item) if self.frozen else index.add(item)

    def word_id(self, token: str) -> int:
        return self._lookup(self.words, token.lower() if self.lowercase else token)

    def char_id(self, ch: str) -> int:
        return self._lookup(self.chars, ch)

    def pos_id(self, tag: str) -> int:
        return self._lookup(self.pos, tag)

    def to_dict(self) -> dict:
        return {"lowercase": self.lowercase, "words": self.words.items[2:],
                "chars": self.chars.items[2:], "pos": self.pos.items[2:]}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        v = cls(lowercase=d.get("lowercase", True))
        v.words, v.chars, v.pos = _Index(d["words"]), _Index(d["chars"]), _Index(d["pos"])
        return v.freeze()

    def sizes(self) -> dict[str, int]:
        return {"word_vocab_size": len(self.words), "char_vocab_size": len(self.chars),
                "pos_vocab_size": len(self.pos)}


# ---------------------------------------------------------------- features

@dataclass
class ProcessedExample:
    premise_ids: list[int]
    hypothesis_ids: list[int]
    premise_chars: np.ndarray
    hypothesis_chars: np.ndarray
    premise_pos_ids: list[int]
    hypothesis_pos_ids: list[int]
    premise_match: list[bool]
    hypothesis_match: list[bool]
    label_id: int


def char_row(token: str, vocab: Vocab, width: int = MAX_WORD_LEN) -> list[int]:
    ids = [vocab.char_id(c) for c in token[:width]]
    return ids + [PAD] * (width - len(ids))


def exact_match(tokens: Sequence[str], other: Sequence[str]) -> list[bool]:
    pool = {t.lower() for t in other}
    return [t.lower() in pool for t in tokens]


def featurize(raw: RawExample, vocab: Vocab, max_word_len: int = MAX_WORD_LEN) -> ProcessedExample:
    p, h = raw.premise_tokens, raw.hypothesis_tokens
    return ProcessedExample(
        premise_ids=[vocab.word_id(t) for t in p],
        hypothesis_ids=[vocab.word_id(t) for t in h],
        premise_chars=np.array([char_row(t, vocab, max_word_len) for t in p], dtype=np.int64),
        hypothesis_chars=np.array([char_row(t, vocab, max_word_len) for t in h], dtype=np.int64),
        premise_pos_ids=[vocab.pos_id(t) for t in raw.premise_pos],
        hypothesis_pos_ids=[vocab.pos_id(t) for t in raw.hypothesis_pos],
        premise_match=exact_match(p, h),
        hypothesis_match=exact_match(h, p),
        label_id=LABEL_IDS[raw.label],
    )


def featurize_all(raws: Iterable[RawExample], vocab: Vocab, max_word_len: int = MAX_WORD_LEN) -> list[ProcessedExample]:
    return [featurize(r, vocab, max_word_len) for r in raws]


# ---------------------------------------------------------------- batching

@dataclass
class Side:
    """Padded arrays for one sentence of every pair in a batch."""

    ids: np.ndarray      # (B, L)
    chars: np.ndarray    # (B, L, W)
    pos: np.ndarray      # (B, L)
    match: np.ndarray    # (B, L) float 0/1
    mask: np.ndarray     # (B, L) bool

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1)


@dataclass
class Batch:
    premise: Side
    hypothesis: Side
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self):
        return len(self.labels)


def _pad_side(rows, cap: int, width: int) -> Side:
    lengths = [min(len(r[0]), cap) for r in rows]
    L = max(lengths)
    B = len(rows)
    ids = np.zeros((B, L), dtype=np.int64)
    chars = np.zeros((B, L, width), dtype=np.int64)
    pos = np.zeros((B, L), dtype=np.int64)
    match = np.zeros((B, L), dtype=np.float32)
    mask = np.zeros((B, L), dtype=bool)
    for b, ((w, c, p, m), n) in enumerate(zip(rows, lengths)):
        ids[b, :n] = w[:n]
        chars[b, :n] = c[:n]
        pos[b, :n] = p[:n]
        match[b, :n] = m[:n]
        mask[b, :n] = True
    return Side(ids, chars, pos, match, mask)


def build_batch(examples: Sequence[ProcessedExample], max_prem_len: int = 48, max_hyp_len: int = 48) -> Batch:
    if not examples:
        raise DataError("cannot build an empty batch")
    width = examples[0].premise_chars.shape[1]
    prem = _pad_side([(e.premise_ids, e.premise_chars, e.premise_pos_ids, e.premise_match) for e in examples],
                     max_prem_len, width)
    hyp = _pad_side([(e.hypothesis_ids, e.hypothesis_chars, e.hypothesis_pos_ids, e.hypothesis_match)
                     for e in examples], max_hyp_len, width)
    labels = np.array([e.label_id for e in examples], dtype=np.int64)
    return Batch(prem, hyp, labels)


# ---------------------------------------------------------------- embeddings

def load_embeddings(path: str | Path, dim: int, vocab: Vocab | None = None) -> tuple[dict[str, np.ndarray], float]:
    """Read a GloVe-style text file.

    Only words in ``vocab`` are kept when one is given. Returns the table and
    the fraction of vocabulary words (excluding the reserved ids) it covers.
    """
    path = Path(path)
    wanted = None
    if vocab is not None:
        wanted = set(vocab.words.items[2:])
    table: dict[str, np.ndarray] = {}
    try:
        fh = path.open(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read embeddings {path}: {exc.strerror or exc}") from None
    with fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != dim + 1:
                raise DataError(f"{path}:{lineno}: expected {dim} components, got {len(parts) - 1}")
            word = parts[0]
            if vocab is not None and vocab.lowercase:
                word = word.lower()
            if wanted is not None and word not in wanted:
                continue
            if word in table:
                continue
            try:
                table[word] = np.array([float(x) for x in parts[1:]], dtype=np.float32)
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric component") from None
    if vocab is None:
        return table, 0.0 if not table else 1.0
    total = len(vocab.words) - 2
    coverage = len(table) / total if total else 0.0
    return table, coverage
