"""Minimal CoNLL-U reader: sentence ids and word forms only.

The extractor needs the words in order and a stable sentence id; heads
and tags stay untouched for the downstream probe. Ids follow the same
rules as the probe's own parser so the two sides pair up: a ``sent_id``
comment names the sentence, otherwise the 1-based position in the file
is used. Multiword range lines (``3-4``) and empty nodes (``5.1``) are
skipped.
"""

from __future__ import annotations

from dataclasses import dataclass


class ConlluError(ValueError):
    """Malformed CoNLL-U input."""


@dataclass(frozen=True)
class WordSentence:
    id: str
    words: tuple[str, ...]


def read_sentences(text: str) -> list[WordSentence]:
    sentences: list[WordSentence] = []
    words: list[str] = []
    sent_id: str | None = None
    counter = 0

    def finish() -> None:
        nonlocal words, sent_id, counter
        if not words:
            sent_id = None
            return
        counter += 1
        sid = sent_id if sent_id is not None else str(counter)
        sentences.append(WordSentence(id=sid, words=tuple(words)))
        words = []
        sent_id = None

    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            finish()
            continue
        if line.startswith("#"):
            if not words and line[1:].split("=", 1)[0].strip() == "sent_id":
                sent_id = line.split("=", 1)[1].strip()
            continue
        fields = line.split("\t")
        if len(fields) != 10:
            raise ConlluError(
                f"line {line_no}: expected 10 columns, got {len(fields)}"
            )
        tok_id = fields[0]
        if "-" in tok_id or "." in tok_id:
            continue
        words.append(fields[1])
    finish()

    seen: set[str] = set()
    for s in sentences:
        if s.id in seen:
            raise ConlluError(f"duplicate sentence id {s.id!r}")
        seen.add(s.id)
    return sentences
