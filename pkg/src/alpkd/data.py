"""Task supply: synthetic sequence-classification generators and a TSV
loader for small real datasets.

Every example starts with the CLS token at position 0 and is padded to the
task's sequence length with the reserved PAD id; masks mark the non-PAD
positions. Generators are pure functions of their TaskSpec, including the
seed, and train/validation splits never share a sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import ConfigError, InputError

PAD_ID = 0
CLS_ID = 1
UNK_ID = 2
SEP_ID = 3
NUM_RESERVED = 4


@dataclass(frozen=True)
class TaskSpec:
    name: str
    kind: str                    # majority | parity | tsv
    vocab_size: int = 16
    seq_len: int = 32
    num_classes: int = 2
    train_size: int = 2000
    val_size: int = 500
    seed: int = 0
    train_path: Optional[str] = None
    val_path: Optional[str] = None
    text_cols: tuple[str, ...] = ("text",)
    label_col: str = "label"

    def content_ids(self) -> range:
        return range(NUM_RESERVED, self.vocab_size)


@dataclass(frozen=True)
class Example:
    token_ids: tuple[int, ...]   # CLS first, unpadded
    label: int


@dataclass
class Dataset:
    token_ids: np.ndarray        # [n, seq_len] int64, PAD-padded
    mask: np.ndarray             # [n, seq_len] float64, 1.0 where non-PAD
    labels: np.ndarray           # [n] int64

    def __len__(self) -> int:
        return self.token_ids.shape[0]


@dataclass
class Task:
    spec: TaskSpec
    train: Dataset
    val: Dataset
    vocab: Optional[dict[str, int]] = None
    label_names: Optional[list[str]] = None


def _pack(rows: list[tuple[int, ...]], labels: list[int],
          seq_len: int) -> Dataset:
    n = len(rows)
    ids = np.full((n, seq_len), PAD_ID, dtype=np.int64)
    mask = np.zeros((n, seq_len))
    for i, row in enumerate(rows):
        ids[i, :len(row)] = row
        mask[i, :len(row)] = 1.0
    return Dataset(ids, mask, np.asarray(labels, dtype=np.int64))


def _majority_label(row: Sequence[int], spec: TaskSpec) -> int:
    counts: dict[int, int] = {}
    for t in row[1:]:
        counts[t] = counts.get(t, 0) + 1
    best = max(counts.values())
    token = min(t for t, c in counts.items() if c == best)
    return (token - NUM_RESERVED) % spec.num_classes


def gen_majority(spec: TaskSpec) -> Task:
    """Label = class bucket of the most frequent content token (ties go to
    the lowest token id). Lengths vary, so masks and padding get exercised."""
    content = list(spec.content_ids())
    if spec.num_classes > len(content):
        raise ConfigError(f"{spec.num_classes} classes need at least that "
                          f"many content tokens, have {len(content)}")
    rng = np.random.default_rng(spec.seed)
    lo = max(2, spec.seq_len // 2)

    def draw() -> tuple[int, ...]:
        length = int(rng.integers(lo, spec.seq_len + 1))
        toks = rng.choice(content, size=length - 1)
        return (CLS_ID, *map(int, toks))

    return _build_synthetic(spec, draw, _majority_label)


def gen_parity(spec: TaskSpec) -> Task:
    """Label = parity of the designated marker token's count. Sequences are
    full length; solving the task needs counting, which rewards depth."""
    if spec.num_classes != 2:
        raise ConfigError(f"parity is binary, got num_classes="
                          f"{spec.num_classes}")
    content = list(spec.content_ids())
    if len(content) < 2:
        raise ConfigError("parity needs at least two content tokens")
    rng = np.random.default_rng(spec.seed)
    marker = content[0]

    def draw() -> tuple[int, ...]:
        toks = rng.choice(content, size=spec.seq_len - 1)
        return (CLS_ID, *map(int, toks))

    def label(row: Sequence[int], _spec: TaskSpec) -> int:
        return sum(1 for t in row[1:] if t == marker) % 2

    return _build_synthetic(spec, draw, label)


def _build_synthetic(spec: TaskSpec, draw, label_fn) -> Task:
    seen: set[tuple[int, ...]] = set()

    def take(count: int) -> tuple[list[tuple[int, ...]], list[int]]:
        rows, labels = [], []
        while len(rows) < count:
            row = draw()
            if row in seen:
                continue
            seen.add(row)
            rows.append(row)
            labels.append(label_fn(row, spec))
        return rows, labels

    train = _pack(*take(spec.train_size), spec.seq_len)
    val = _pack(*take(spec.val_size), spec.seq_len)
    return Task(spec=spec, train=train, val=val)


def _tokenize(text: str) -> list[str]:
    return text.lower().split()


def _read_tsv(path: str) -> tuple[list[str], list[list[str]]]:
    p = Path(path)
    if not p.exists():
        raise InputError(f"TSV file not found: {path}")
    with open(p, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines:
        raise InputError(f"TSV file is empty: {path}")
    header = lines[0].split("\t")
    rows = [ln.split("\t") for ln in lines[1:] if ln]
    return header, rows


def load_tsv(path: str, text_cols: Sequence[str], label_col: str,
             seq_len: int, vocab: Optional[dict[str, int]] = None,
             label_map: Optional[dict[str, int]] = None
             ) -> tuple[list[Example], dict[str, int], dict[str, int]]:
    """Load one TSV split.

    With ``vocab`` / ``label_map`` omitted they are built from this file
    (the training split); otherwise out-of-vocabulary tokens map to UNK and
    unseen label strings are an error naming the line.
    """
    header, rows = _read_tsv(path)
    for col in (*text_cols, label_col):
        if col not in header:
            raise InputError(f"column {col!r} missing from header "
                             f"{header} in {path}")
    text_idx = [header.index(c) for c in text_cols]
    label_idx = header.index(label_col)

    building = vocab is None
    if building:
        vocab = {}
        label_map = {}
        labels_seen: set[str] = set()
        for row in rows:
            labels_seen.add(row[label_idx])
            for idx in text_idx:
                for tok in _tokenize(row[idx]):
                    if tok not in vocab:
                        vocab[tok] = NUM_RESERVED + len(vocab)
        label_map = {name: i for i, name in enumerate(sorted(labels_seen))}
    assert label_map is not None

    examples: list[Example] = []
    for lineno, row in enumerate(rows, start=2):
        if len(row) <= max(label_idx, *text_idx):
            raise InputError(f"{path}:{lineno}: row has {len(row)} columns, "
                             f"header has {len(header)}")
        label_str = row[label_idx]
        if label_str not in label_map:
            raise InputError(f"{path}:{lineno}: unknown label "
                             f"{label_str!r} (known: "
                             f"{sorted(label_map)})")
        ids = [CLS_ID]
        for part, idx in enumerate(text_idx):
            if part > 0:
                ids.append(SEP_ID)
            ids.extend(vocab.get(tok, UNK_ID)
                       for tok in _tokenize(row[idx]))
        examples.append(Example(tuple(ids[:seq_len]), label_map[label_str]))
    return examples, vocab, label_map


def load_tsv_task(spec: TaskSpec) -> Task:
    """Build a Task from train/validation TSV paths; the vocabulary comes
    from the training split only."""
    if not spec.train_path or not spec.val_path:
        raise ConfigError("tsv task needs train_path and val_path")
    train_ex, vocab, label_map = load_tsv(
        spec.train_path, spec.text_cols, spec.label_col, spec.seq_len)
    val_ex, _, _ = load_tsv(
        spec.val_path, spec.text_cols, spec.label_col, spec.seq_len,
        vocab=vocab, label_map=label_map)
    effective = replace(spec,
                        vocab_size=NUM_RESERVED + len(vocab),
                        num_classes=len(label_map),
                        train_size=len(train_ex), val_size=len(val_ex))
    train = _pack([e.token_ids for e in train_ex],
                  [e.label for e in train_ex], spec.seq_len)
    val = _pack([e.token_ids for e in val_ex],
                [e.label for e in val_ex], spec.seq_len)
    names = [name for name, _ in sorted(label_map.items(),
                                        key=lambda kv: kv[1])]
    return Task(spec=effective, train=train, val=val, vocab=vocab,
                label_names=names)


def build_task(spec: TaskSpec) -> Task:
    if spec.kind == "majority":
        return gen_majority(spec)
    if spec.kind == "parity":
        return gen_parity(spec)
    if spec.kind == "tsv":
        return load_tsv_task(spec)
    raise ConfigError(f"unknown task kind {spec.kind!r}")


def batches(dataset: Dataset, batch_size: int,
            shuffle_seed: Optional[int] = None
            ) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Yield (token_ids, mask, labels) batches; a final partial batch is
    kept. With a seed the order is a deterministic permutation."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    n = len(dataset)
    order = (np.random.default_rng(shuffle_seed).permutation(n)
             if shuffle_seed is not None else np.arange(n))
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        yield dataset.token_ids[idx], dataset.mask[idx], dataset.labels[idx]
