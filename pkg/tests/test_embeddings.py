"""Embedding store format, alignment, and the synthetic generator."""

import io
import json
import random
import struct

import numpy as np
import pytest

from conftest import make_sentence, random_heads
from kprobe.embeddings import (
    MAGIC,
    EmbeddingStore,
    SentenceEmbedding,
    StoreError,
    align,
    read_store,
    synth_tree_embeddings,
    write_store,
)
from kprobe.treebank import tree_distances


def small_store():
    rng = np.random.default_rng(42)
    recs = [
        SentenceEmbedding("a", rng.standard_normal((3, 4)).astype(np.float32)),
        SentenceEmbedding("b", rng.standard_normal((1, 4)).astype(np.float32)),
    ]
    return EmbeddingStore(d1=4, model_tag="unit-test", records=recs)


class TestStoreFormat:
    def test_empty_store_is_header_only(self):
        store = EmbeddingStore(d1=4, model_tag="t", records=[])
        sink = io.BytesIO()
        count = write_store(store, sink)
        blob = sink.getvalue()
        assert count == len(blob)
        meta_len = struct.unpack_from("<I", blob, 8)[0]
        assert len(blob) == 12 + meta_len
        meta = json.loads(blob[12:12 + meta_len])
        assert meta == {"d1": 4, "model_tag": "t", "record_count": 0}

    def test_record_length_arithmetic(self):
        """One 2x3 record adds id preamble + row count + 2*3*4 payload bytes."""
        rec = SentenceEmbedding("xy", np.zeros((2, 3), dtype=np.float32))
        store = EmbeddingStore(d1=3, model_tag="t", records=[rec])
        sink = io.BytesIO()
        write_store(store, sink)
        blob = sink.getvalue()
        meta_len = struct.unpack_from("<I", blob, 8)[0]
        assert len(blob) == 12 + meta_len + (2 + 2) + 4 + 2 * 3 * 4

    def test_round_trip_bitwise(self):
        store = small_store()
        sink = io.BytesIO()
        write_store(store, sink)
        back = read_store(io.BytesIO(sink.getvalue()))
        assert back.d1 == store.d1
        assert back.model_tag == store.model_tag
        assert [r.sentence_id for r in back.records] == ["a", "b"]
        for mine, theirs in zip(store.records, back.records):
            assert mine.matrix.tobytes() == theirs.matrix.tobytes()

    def test_write_is_deterministic(self):
        store = small_store()
        a, b = io.BytesIO(), io.BytesIO()
        write_store(store, a)
        write_store(store, b)
        assert a.getvalue() == b.getvalue()


class TestStoreErrors:
    def blob(self):
        sink = io.BytesIO()
        write_store(small_store(), sink)
        return bytearray(sink.getvalue())

    def test_bad_magic(self):
        blob = self.blob()
        blob[:4] = b"NOPE"
        with pytest.raises(StoreError, match="offset 0"):
            read_store(io.BytesIO(bytes(blob)))

    def test_bad_version(self):
        blob = self.blob()
        struct.pack_into("<I", blob, 4, 999)
        with pytest.raises(StoreError, match="version 999"):
            read_store(io.BytesIO(bytes(blob)))

    def test_truncated_payload(self):
        blob = self.blob()
        with pytest.raises(StoreError, match="truncated"):
            read_store(io.BytesIO(bytes(blob[:-5])))

    def test_nan_payload_reports_offset(self):
        blob = self.blob()
        meta_len = struct.unpack_from("<I", blob, 8)[0]
        payload_at = 12 + meta_len + 2 + 1 + 4
        struct.pack_into("<f", blob, payload_at, float("nan"))
        with pytest.raises(StoreError, match=f"offset {payload_at}"):
            read_store(io.BytesIO(bytes(blob)))

    def test_duplicate_ids_rejected(self):
        rec = SentenceEmbedding("a", np.zeros((1, 2), dtype=np.float32))
        store = EmbeddingStore(d1=2, model_tag="t", records=[rec, rec])
        with pytest.raises(ValueError):
            write_store(store, io.BytesIO())

    def test_width_mismatch_rejected(self):
        recs = [
            SentenceEmbedding("a", np.zeros((1, 2), dtype=np.float32)),
            SentenceEmbedding("b", np.zeros((1, 3), dtype=np.float32)),
        ]
        store = EmbeddingStore(d1=2, model_tag="t", records=recs)
        with pytest.raises(ValueError):
            write_store(store, io.BytesIO())


class TestAlign:
    def test_pairs_in_treebank_order(self):
        store = small_store()
        sents = [
            make_sentence([0], sid="b"),
            make_sentence([0, 1, 1], sid="a"),
            make_sentence([0], sid="missing"),
        ]
        pairs = align(store, sents)
        assert [s.id for s, _ in pairs] == ["b", "a"]
        assert pairs[1][1].matrix.shape == (3, 4)

    def test_row_count_mismatch_names_sentence(self):
        store = small_store()
        sents = [make_sentence([0, 1], sid="a")]
        with pytest.raises(ValueError, match="'a'"):
            align(store, sents)


class TestSynth:
    def test_chain_squared_distances(self):
        """Noise-0 squared Euclidean distances equal the tree distances."""
        s = make_sentence([0, 1, 2], sid="chain")
        H = synth_tree_embeddings(s, 8, noise_sigma=0.0, seed=1).matrix
        want = np.array([[0, 1, 2], [1, 0, 1], [2, 1, 0]], dtype=np.float64)
        diff = H[:, None, :] - H[None, :, :]
        got = np.einsum("ijk,ijk->ij", diff, diff)
        np.testing.assert_allclose(got, want, atol=1e-5)

    def test_same_seed_identical(self):
        s = make_sentence([0, 1, 1, 2], sid="x")
        a = synth_tree_embeddings(s, 16, noise_sigma=0.5, seed=9).matrix
        b = synth_tree_embeddings(s, 16, noise_sigma=0.5, seed=9).matrix
        assert a.tobytes() == b.tobytes()

    def test_squared_distance_property_random_trees(self):
        """max |squared distance - tree distance| stays under 1e-5 at noise 0."""
        rng = random.Random(31)
        worst = 0.0
        for k in range(50):
            n = rng.randint(2, 20)
            s = make_sentence(random_heads(rng, n), sid=f"t{k}")
            H = synth_tree_embeddings(s, 24, noise_sigma=0.0, seed=4).matrix
            H = H.astype(np.float64)
            diff = H[:, None, :] - H[None, :, :]
            sq = np.einsum("ijk,ijk->ij", diff, diff)
            worst = max(worst, float(np.abs(sq - tree_distances(s)).max()))
        assert worst <= 1e-5

    def test_width_too_small(self):
        s = make_sentence([0, 1, 2, 3, 4], sid="long")
        with pytest.raises(ValueError):
            synth_tree_embeddings(s, 3, noise_sigma=0.0, seed=0)

    def test_noise_perturbs(self):
        s = make_sentence([0, 1], sid="n")
        clean = synth_tree_embeddings(s, 8, noise_sigma=0.0, seed=2).matrix
        noisy = synth_tree_embeddings(s, 8, noise_sigma=0.5, seed=2).matrix
        assert not np.array_equal(clean, noisy)

    def test_distinct_sentences_get_distinct_noise(self):
        """Noise draws are tied to the sentence id, not just the seed."""
        a = make_sentence([0, 1], sid="one")
        b = make_sentence([0, 1], sid="two")
        ha = synth_tree_embeddings(a, 8, noise_sigma=0.5, seed=2).matrix
        hb = synth_tree_embeddings(b, 8, noise_sigma=0.5, seed=2).matrix
        assert not np.array_equal(ha, hb)

    def test_rotation_shared_across_sentences(self):
        """All sentences live in one rotated frame per seed, so relative
        geometry is consistent corpus-wide: a single tree edge always maps
        to a unit step."""
        a = make_sentence([0, 1], sid="p")
        b = make_sentence([0, 1], sid="q")
        ha = synth_tree_embeddings(a, 8, noise_sigma=0.0, seed=3).matrix
        hb = synth_tree_embeddings(b, 8, noise_sigma=0.0, seed=3).matrix
        np.testing.assert_allclose(ha, hb, atol=1e-6)

    def test_store_written_from_synth_round_trips(self):
        rng = random.Random(8)
        sents = [make_sentence(random_heads(rng, 5), sid=f"s{k}") for k in range(4)]
        recs = [synth_tree_embeddings(s, 8, 0.0, seed=1) for s in sents]
        store = EmbeddingStore(d1=8, model_tag="synth", records=recs)
        sink = io.BytesIO()
        write_store(store, sink)
        back = read_store(io.BytesIO(sink.getvalue()))
        for mine, theirs in zip(recs, back.records):
            assert mine.matrix.tobytes() == theirs.matrix.tobytes()
