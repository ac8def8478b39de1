"""Per-word embeddings from a pretrained transformer.

Words from the treebank are fed to the model's subword tokenizer with
their word boundaries preserved; each word's vector pools its piece
vectors from one hidden layer (mean by default, or the first piece).
Special boundary pieces map to no word and are dropped, so every output
matrix has exactly one row per treebank token. Sentences whose piece
count exceeds the budget are skipped and reported, never windowed:
windowing would change the contextualization mid-corpus.

Inference runs under no_grad in eval mode, so extracting the same file
with the same settings is bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .conllu import WordSentence

POOLINGS = ("mean", "first")


class ModelLoadError(RuntimeError):
    """The pretrained model or its tokenizer could not be loaded."""


@dataclass(frozen=True)
class ExtractionConfig:
    """What to extract: model, layer, pooling, and budget settings."""

    model_tag: str
    layer: int | None = None  # None picks the final hidden layer
    pooling: str = "mean"
    max_tokens: int | None = None  # None picks the model's positional budget
    batch_size: int = 16

    def __post_init__(self) -> None:
        if self.pooling not in POOLINGS:
            raise ValueError(f"unknown pooling {self.pooling!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.max_tokens is not None and self.max_tokens < 3:
            raise ValueError("max_tokens must leave room for one piece")


@dataclass
class Backend:
    """A loaded model with its resolved layer and token budget."""

    tokenizer: object
    model: object
    layer: int
    max_tokens: int
    d1: int


def load_backend(config: ExtractionConfig) -> Backend:
    from transformers import AutoModel, AutoTokenizer

    try:
        tokenizer = AutoTokenizer.from_pretrained(config.model_tag)
        model = AutoModel.from_pretrained(config.model_tag)
    except Exception as exc:
        raise ModelLoadError(
            f"could not load model {config.model_tag!r}: {exc}"
        ) from exc
    model.eval()
    depth = int(model.config.num_hidden_layers)
    layer = depth if config.layer is None else config.layer
    if not 0 <= layer <= depth:
        raise ValueError(
            f"layer {layer} outside this model's range 0..{depth}"
        )
    budget = int(getattr(model.config, "max_position_embeddings", 0) or 512)
    max_tokens = budget if config.max_tokens is None else min(
        config.max_tokens, budget
    )
    return Backend(
        tokenizer=tokenizer,
        model=model,
        layer=layer,
        max_tokens=max_tokens,
        d1=int(model.config.hidden_size),
    )


def store_tag(config: ExtractionConfig, backend: Backend) -> str:
    """Model identity string recorded in the KPEB header."""
    return f"{config.model_tag}|layer={backend.layer}|pooling={config.pooling}"


def piece_count(backend: Backend, sentence: WordSentence) -> int:
    """Subword pieces the model would see, special pieces included."""
    encoded = backend.tokenizer(
        list(sentence.words), is_split_into_words=True
    )
    return len(encoded["input_ids"])


def extract_records(
    sentences: list[WordSentence],
    config: ExtractionConfig,
    backend: Backend,
) -> tuple[list[tuple[str, np.ndarray]], list[tuple[str, int]]]:
    """(records, skipped): pooled matrices plus (id, pieces) for skips."""
    kept = []
    skipped = []
    for s in sentences:
        pieces = piece_count(backend, s)
        if pieces > backend.max_tokens:
            skipped.append((s.id, pieces))
        else:
            kept.append(s)
    records: list[tuple[str, np.ndarray]] = []
    for lo in range(0, len(kept), config.batch_size):
        batch = kept[lo:lo + config.batch_size]
        encoded = backend.tokenizer(
            [list(s.words) for s in batch],
            is_split_into_words=True,
            padding=True,
            return_tensors="pt",
        )
        with torch.no_grad():
            out = backend.model(**encoded, output_hidden_states=True)
        hidden = out.hidden_states[backend.layer]
        for b, s in enumerate(batch):
            positions: dict[int, list[int]] = {}
            for pos, wid in enumerate(encoded.word_ids(b)):
                if wid is not None:
                    positions.setdefault(wid, []).append(pos)
            rows = np.empty((len(s.words), backend.d1), dtype=np.float32)
            for w in range(len(s.words)):
                where = positions.get(w)
                if not where:
                    raise ValueError(
                        f"word {w + 1} of sentence {s.id!r} produced no "
                        "subword pieces"
                    )
                vecs = hidden[b, where]
                pooled = vecs.mean(dim=0) if config.pooling == "mean" else vecs[0]
                rows[w] = pooled.numpy()
            records.append((s.id, rows))
    return records, skipped
