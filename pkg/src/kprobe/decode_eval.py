"""Tree decoding from predicted distances and the evaluation metrics.

Decoding runs Prim's algorithm over the pairwise distance matrix and
returns the minimum spanning tree as undirected edges on 0-based token
positions. UUAS counts recovered gold edges, excluding edges that touch
punctuation unless asked otherwise. DSpr is the Spearman correlation
between predicted and gold pair distances, macro-averaged over sentence
lengths 5 to 50. Significance between two systems comes from a paired
sign-flip permutation test on per-sentence scores.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr

from .kernels import ClampCounter, KernelSpec, pairwise_distances
from .treebank import Sentence, tree_distances

DSPR_BAND = (5, 50)
DSPR_MODES = ("banded", "plain")


def predict_distances(
    spec: KernelSpec,
    B: np.ndarray,
    H: np.ndarray,
    counter: ClampCounter | None = None,
) -> np.ndarray:
    """Symmetric zero-diagonal matrix of induced distances over rows."""
    return pairwise_distances(spec, B, H, counter=counter)


def prim_mst(dist: np.ndarray) -> frozenset:
    """Minimum spanning tree of a dense symmetric distance matrix.

    Returns n-1 undirected edges as (i, j) with i < j on 0-based
    positions; fewer than two nodes give the empty set. Ties are broken
    toward the lexicographically lowest (weight, min endpoint, max
    endpoint), so equal-weight inputs decode identically across runs.
    """
    n = dist.shape[0]
    if dist.shape != (n, n):
        raise ValueError(f"distance matrix must be square, got {dist.shape}")
    if n < 2:
        return frozenset()
    in_tree = [False] * n
    in_tree[0] = True
    # best known connection of each outside vertex to the tree
    best_w = [float(dist[0, j]) for j in range(n)]
    best_from = [0] * n
    edges = []
    for _ in range(n - 1):
        pick = -1
        pick_key = None
        for j in range(n):
            if in_tree[j]:
                continue
            i = best_from[j]
            key = (best_w[j], min(i, j), max(i, j))
            if pick_key is None or key < pick_key:
                pick_key = key
                pick = j
        i = best_from[pick]
        edges.append((min(i, pick), max(i, pick)))
        in_tree[pick] = True
        for j in range(n):
            if in_tree[j]:
                continue
            w = float(dist[pick, j])
            old = (best_w[j], min(best_from[j], j), max(best_from[j], j))
            new = (w, min(pick, j), max(pick, j))
            if new < old:
                best_w[j] = w
                best_from[j] = pick
    return frozenset(edges)


def decode(
    spec: KernelSpec,
    B: np.ndarray,
    H: np.ndarray,
    counter: ClampCounter | None = None,
) -> frozenset:
    """Predicted tree for one sentence: Prim over induced distances."""
    return prim_mst(predict_distances(spec, B, H, counter=counter))


def gold_edges(sentence: Sentence, include_punct: bool = False) -> frozenset:
    """Gold undirected edges on 0-based positions.

    Excludes edges with a PUNCT endpoint unless include_punct is set.
    """
    kept = []
    for tok in sentence.tokens:
        if tok.head == 0:
            continue
        head_tok = sentence.tokens[tok.head - 1]
        if not include_punct and "PUNCT" in (tok.upos, head_tok.upos):
            continue
        kept.append((min(tok.index, tok.head) - 1, max(tok.index, tok.head) - 1))
    return frozenset(kept)


def uuas(
    pred_edges: frozenset, sentence: Sentence, include_punct: bool = False
) -> tuple:
    """(correct, total) gold-edge counts for one sentence."""
    gold = gold_edges(sentence, include_punct=include_punct)
    return len(pred_edges & gold), len(gold)


def _pair_rho(pred: np.ndarray, gold: np.ndarray) -> float:
    """Spearman rho over the i<j pair values; 0 when either side is flat."""
    n = pred.shape[0]
    iu = np.triu_indices(n, k=1)
    x = pred[iu]
    y = np.asarray(gold, dtype=np.float64)[iu]
    if x.size < 2 or np.all(x == x[0]) or np.all(y == y[0]):
        return 0.0
    return float(spearmanr(x, y).statistic)


def dspr(
    preds: list,
    golds: list,
    mode: str = "banded",
) -> tuple:
    """Distance Spearman correlation over a set of sentences.

    banded: per-sentence rho values are grouped by sentence length,
    averaged within each length from 5 to 50 inclusive, and the
    per-length means are macro-averaged. plain: mean over all sentences
    with at least 2 tokens. Returns (score, {length: (mean, count)}).
    """
    if mode not in DSPR_MODES:
        raise ValueError(f"unknown dspr mode {mode!r}")
    if len(preds) != len(golds):
        raise ValueError("prediction and gold lists differ in length")
    by_len: dict = {}
    for pred, gold in zip(preds, golds):
        n = pred.shape[0]
        if n < 2:
            continue
        by_len.setdefault(n, []).append(_pair_rho(pred, gold))
    lo, hi = DSPR_BAND
    per_length = {
        n: (float(np.mean(vals)), len(vals))
        for n, vals in sorted(by_len.items())
        if lo <= n <= hi
    }
    if mode == "plain":
        rhos = [r for vals in by_len.values() for r in vals]
        if not rhos:
            raise ValueError("empty evaluation band")
        return float(np.mean(rhos)), per_length
    if not per_length:
        raise ValueError("empty evaluation band")
    score = float(np.mean([mean for mean, _ in per_length.values()]))
    return score, per_length


def paired_permutation_test(
    scores_a: list,
    scores_b: list,
    samples: int = 10000,
    seed: int = 0,
) -> float:
    """Two-sided sign-flip permutation p-value for paired scores.

    p = (1 + #{resamples with |mean| >= |observed mean|}) / (samples + 1),
    so the smallest reportable value is 1/(samples+1).
    """
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("score lists must be 1-d and of equal length")
    if a.size == 0:
        raise ValueError("score lists must be nonempty")
    if samples < 1:
        raise ValueError("samples must be at least 1")
    diffs = a - b
    observed = abs(float(diffs.mean()))
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < samples:
        block = min(2048, samples - done)
        signs = rng.integers(0, 2, size=(block, diffs.size)) * 2 - 1
        means = np.abs((signs * diffs).mean(axis=1))
        hits += int(np.sum(means >= observed))
        done += block
    return (1 + hits) / (samples + 1)


@dataclass
class EvalReport:
    """Corpus-level evaluation summary."""

    uuas: float
    dspr: float
    per_sentence_uuas: list
    sentence_count: int
    per_length: dict
    per_sentence_dspr: list
    clamp_count: int = 0

    def to_json_obj(self) -> dict:
        return {
            "uuas": self.uuas,
            "dspr": self.dspr,
            "sentence_count": self.sentence_count,
            "per_sentence_uuas": self.per_sentence_uuas,
            "per_sentence_dspr": self.per_sentence_dspr,
            "per_length": {
                str(n): {"dspr": mean, "sentences": count}
                for n, (mean, count) in sorted(self.per_length.items())
            },
            "clamp_count": self.clamp_count,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), sort_keys=True, indent=2)

    def to_table(self) -> str:
        rows = [
            ("uuas", f"{self.uuas:.4f}"),
            ("dspr", f"{self.dspr:.4f}"),
            ("sentences", str(self.sentence_count)),
            ("clamps", str(self.clamp_count)),
        ]
        for n, (mean, count) in sorted(self.per_length.items()):
            rows.append((f"dspr@len={n}", f"{mean:.4f} ({count} sent)"))
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def evaluate(
    spec: KernelSpec,
    B: np.ndarray,
    items: list,
    include_punct: bool = False,
    dspr_mode: str = "banded",
    distances: list | None = None,
) -> EvalReport:
    """Decode and score a list of (Sentence, embedding matrix) pairs.

    Pass precomputed predicted distance matrices to skip the kernel
    evaluation (the oracle path). Sentences whose gold edges are all
    excluded contribute None to per_sentence_uuas and do not enter the
    aggregate numerator or denominator.
    """
    if not items:
        raise ValueError("empty evaluation band")
    counter = ClampCounter()
    preds = []
    golds = []
    per_sentence = []
    per_sentence_rho = []
    correct_sum = 0
    total_sum = 0
    for k, (sentence, H) in enumerate(items):
        if distances is not None:
            D = np.asarray(distances[k], dtype=np.float64)
        else:
            D = predict_distances(spec, B, H, counter=counter)
        preds.append(D)
        golds.append(tree_distances(sentence))
        per_sentence_rho.append(
            _pair_rho(D, golds[-1]) if len(sentence) >= 2 else None
        )
        correct, total = uuas(prim_mst(D), sentence, include_punct=include_punct)
        if total == 0:
            per_sentence.append(None)
        else:
            per_sentence.append(correct / total)
            correct_sum += correct
            total_sum += total
    if total_sum == 0:
        raise ValueError("no scorable gold edges in the evaluation set")
    score, per_length = dspr(preds, golds, mode=dspr_mode)
    return EvalReport(
        uuas=correct_sum / total_sum,
        dspr=score,
        per_sentence_uuas=per_sentence,
        sentence_count=len(items),
        per_length=per_length,
        per_sentence_dspr=per_sentence_rho,
        clamp_count=counter.count,
    )
