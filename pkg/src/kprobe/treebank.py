"""CoNLL-U treebank parsing, gold tree distances, and deterministic splits."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass

import numpy as np


class ConlluError(ValueError):
    """Malformed CoNLL-U input or an invalid dependency structure."""


@dataclass(frozen=True)
class Token:
    index: int  # 1-based position within the sentence
    form: str
    upos: str
    head: int  # 1-based head position, 0 for the root

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ValueError(f"token index must be >= 1, got {self.index}")
        if self.head < 0:
            raise ValueError(f"token head must be >= 0, got {self.head}")
        if self.head == self.index:
            raise ValueError(f"token {self.index} is its own head")


@dataclass(frozen=True)
class Sentence:
    id: str
    tokens: tuple[Token, ...]

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def heads(self) -> list[int]:
        return [t.head for t in self.tokens]


@dataclass(frozen=True)
class SplitSpec:
    train: tuple[str, ...]
    dev: tuple[str, ...]
    test: tuple[str, ...]
    seed: int
    cap: int

    def to_json(self) -> str:
        doc = {
            "train": list(self.train),
            "dev": list(self.dev),
            "test": list(self.test),
            "seed": self.seed,
            "cap": self.cap,
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SplitSpec":
        doc = json.loads(text)
        return cls(
            train=tuple(doc["train"]),
            dev=tuple(doc["dev"]),
            test=tuple(doc["test"]),
            seed=int(doc["seed"]),
            cap=int(doc["cap"]),
        )

    def section(self, name: str) -> tuple[str, ...]:
        if name not in ("train", "dev", "test"):
            raise ValueError(f"unknown split section {name!r}")
        return getattr(self, name)


def _check_tree(sentence_id: str, heads: list[int], line_no: int) -> None:
    """Verify the head relation forms a single rooted tree over 1..n."""
    n = len(heads)
    roots = [i + 1 for i, h in enumerate(heads) if h == 0]
    if len(roots) != 1:
        raise ConlluError(
            f"sentence {sentence_id!r} (line {line_no}): not a tree, "
            f"{len(roots)} root tokens"
        )
    children: list[list[int]] = [[] for _ in range(n + 1)]
    for i, h in enumerate(heads):
        children[h].append(i + 1)
    seen = set()
    stack = [roots[0]]
    while stack:
        node = stack.pop()
        seen.add(node)
        stack.extend(children[node])
    if len(seen) != n:
        raise ConlluError(
            f"sentence {sentence_id!r} (line {line_no}): not a tree, "
            f"{n - len(seen)} tokens unreachable from root"
        )


def parse_conllu(text: str) -> list[Sentence]:
    """Parse CoNLL-U text into sentences.

    Keeps the ID, FORM, UPOS and HEAD columns. Multiword range lines
    (id like ``3-4``) and empty nodes (id like ``5.1``) are skipped.
    """
    sentences: list[Sentence] = []
    tokens: list[Token] = []
    sent_id: str | None = None
    block_start = 0
    counter = 0

    def finish(line_no: int) -> None:
        nonlocal tokens, sent_id, counter
        if not tokens:
            sent_id = None
            return
        counter += 1
        sid = sent_id if sent_id is not None else str(counter)
        indices = [t.index for t in tokens]
        if indices != list(range(1, len(tokens) + 1)):
            raise ConlluError(
                f"sentence {sid!r} (line {line_no}): token ids not contiguous 1..n"
            )
        heads = [t.head for t in tokens]
        for t in tokens:
            if t.head > len(tokens):
                raise ConlluError(
                    f"sentence {sid!r} (line {line_no}): head {t.head} of token "
                    f"{t.index} out of range"
                )
        _check_tree(sid, heads, line_no)
        sentences.append(Sentence(id=sid, tokens=tuple(tokens)))
        tokens = []
        sent_id = None

    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.rstrip("\n")
        if not line.strip():
            finish(line_no)
            block_start = line_no + 1
            continue
        if line.startswith("#"):
            if not tokens and line[1:].split("=", 1)[0].strip() == "sent_id":
                sent_id = line.split("=", 1)[1].strip()
            continue
        fields = line.split("\t")
        if len(fields) != 10:
            raise ConlluError(
                f"sentence {sent_id or '?'} (line {line_no}): expected 10 "
                f"columns, got {len(fields)}"
            )
        tok_id = fields[0]
        if "-" in tok_id or "." in tok_id:
            continue  # multiword range or empty node
        try:
            index = int(tok_id)
            head = int(fields[6])
        except ValueError:
            raise ConlluError(
                f"sentence {sent_id or '?'} (line {line_no}): non-integer "
                f"id or head ({tok_id!r}, {fields[6]!r})"
            ) from None
        try:
            tokens.append(Token(index=index, form=fields[1], upos=fields[3], head=head))
        except ValueError as exc:
            raise ConlluError(
                f"sentence {sent_id or '?'} (line {line_no}): {exc}"
            ) from None
    finish(block_start)
    return sentences


def serialize_conllu(sentences: list[Sentence]) -> str:
    """Emit sentences as CoNLL-U, filling unretained columns with ``_``."""
    blocks = []
    for s in sentences:
        lines = [f"# sent_id = {s.id}"]
        for t in s.tokens:
            lines.append(
                f"{t.index}\t{t.form}\t_\t{t.upos}\t_\t_\t{t.head}\t_\t_\t_"
            )
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def tree_distances(s: Sentence) -> np.ndarray:
    """All-pairs path lengths in the undirected dependency tree.

    The virtual root is excluded: the graph has one node per token and an
    edge (i, head_i) for every token whose head is another token.
    """
    n = len(s)
    dist = np.full((n, n), n, dtype=np.int64)
    np.fill_diagonal(dist, 0)
    for t in s.tokens:
        if t.head >= 1:
            i, j = t.index - 1, t.head - 1
            dist[i, j] = 1
            dist[j, i] = 1
    for k in range(n):
        np.minimum(dist, dist[:, k : k + 1] + dist[k : k + 1, :], out=dist)
    return dist


def make_splits(
    sentences: list[Sentence], cap: int, seed: int, shuffle: bool = True
) -> SplitSpec:
    """Partition the first ``cap`` sentences into 80/10/10 train/test/dev.

    The partition is a seeded shuffle by default; ``shuffle=False`` keeps
    file order. Same seed, same input: identical splits.
    """
    if cap < 10:
        raise ValueError(f"cap must be >= 10, got {cap}")
    if len(sentences) < 10:
        raise ValueError(f"need at least 10 sentences, got {len(sentences)}")
    ids = [s.id for s in sentences[: min(cap, len(sentences))]]
    if shuffle:
        random.Random(seed).shuffle(ids)
    m = len(ids)
    n_train = int(m * 0.8)
    n_test = int(m * 0.1)
    return SplitSpec(
        train=tuple(ids[:n_train]),
        test=tuple(ids[n_train : n_train + n_test]),
        dev=tuple(ids[n_train + n_test :]),
        seed=seed,
        cap=cap,
    )
