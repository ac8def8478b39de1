"""Treebank parsing, tree distances, and split generation."""

import json
import random

import numpy as np
import pytest

from conftest import bfs_distances, make_sentence, random_heads
from kprobe.treebank import (
    ConlluError,
    SplitSpec,
    Token,
    make_splits,
    parse_conllu,
    serialize_conllu,
    tree_distances,
)

TWO_TOKEN = """\
# sent_id = demo-1
1\tHe\t_\tPRON\t_\t_\t2\t_\t_\t_
2\truns\t_\tVERB\t_\t_\t0\t_\t_\t_
"""


class TestParse:
    def test_minimal_sentence(self):
        """A two-token block parses with the root on the head-0 token."""
        sents = parse_conllu(TWO_TOKEN)
        assert len(sents) == 1
        s = sents[0]
        assert s.id == "demo-1"
        assert [t.form for t in s.tokens] == ["He", "runs"]
        assert [t.head for t in s.tokens] == [2, 0]
        assert [t.upos for t in s.tokens] == ["PRON", "VERB"]

    def test_multiword_range_and_empty_nodes_skipped(self):
        text = (
            "1\tdo\t_\tVERB\t_\t_\t0\t_\t_\t_\n"
            "2-3\tdunno\t_\t_\t_\t_\t_\t_\t_\t_\n"
            "2\tnot\t_\tPART\t_\t_\t1\t_\t_\t_\n"
            "3\tknow\t_\tVERB\t_\t_\t1\t_\t_\t_\n"
            "3.1\telided\t_\t_\t_\t_\t_\t_\t_\t_\n"
        )
        sents = parse_conllu(text)
        assert [t.index for t in sents[0].tokens] == [1, 2, 3]
        assert [t.form for t in sents[0].tokens] == ["do", "not", "know"]

    def test_running_counter_ids(self):
        """Blocks without sent_id comments get running-counter ids."""
        block = "1\tx\t_\tX\t_\t_\t0\t_\t_\t_\n"
        sents = parse_conllu(block + "\n" + block)
        assert sents[0].id != sents[1].id

    def test_cycle_is_rejected(self):
        """Heads [2,3,1] form a cycle with no root."""
        text = (
            "# sent_id = bad\n"
            "1\ta\t_\tX\t_\t_\t2\t_\t_\t_\n"
            "2\tb\t_\tX\t_\t_\t3\t_\t_\t_\n"
            "3\tc\t_\tX\t_\t_\t1\t_\t_\t_\n"
        )
        with pytest.raises(ConlluError, match="bad"):
            parse_conllu(text)

    def test_wrong_column_count_names_line(self):
        text = "1\tonly\tfour\tcols\n"
        with pytest.raises(ConlluError, match="line 1"):
            parse_conllu(text)

    def test_non_integer_head(self):
        text = "1\ta\t_\tX\t_\t_\tzzz\t_\t_\t_\n"
        with pytest.raises(ConlluError):
            parse_conllu(text)

    def test_head_out_of_range(self):
        text = "1\ta\t_\tX\t_\t_\t5\t_\t_\t_\n"
        with pytest.raises(ConlluError):
            parse_conllu(text)

    def test_two_roots_rejected(self):
        text = (
            "1\ta\t_\tX\t_\t_\t0\t_\t_\t_\n"
            "2\tb\t_\tX\t_\t_\t0\t_\t_\t_\n"
        )
        with pytest.raises(ConlluError):
            parse_conllu(text)

    def test_noncontiguous_indices_rejected(self):
        text = (
            "1\ta\t_\tX\t_\t_\t0\t_\t_\t_\n"
            "3\tb\t_\tX\t_\t_\t1\t_\t_\t_\n"
        )
        with pytest.raises(ConlluError):
            parse_conllu(text)


class TestSerialize:
    def test_round_trip_identity(self):
        """parse(serialize(sents)) preserves ID, FORM, UPOS, HEAD."""
        rng = random.Random(5)
        sents = [
            make_sentence(random_heads(rng, rng.randint(1, 9)), sid=f"r{k}")
            for k in range(20)
        ]
        back = parse_conllu(serialize_conllu(sents))
        assert back == sents

    def test_serialize_is_stable(self):
        sents = parse_conllu(TWO_TOKEN)
        once = serialize_conllu(sents)
        twice = serialize_conllu(parse_conllu(once))
        assert once == twice


class TestTreeDistances:
    def test_chain(self):
        s = make_sentence([0, 1, 2])
        want = np.array([[0, 1, 2], [1, 0, 1], [2, 1, 0]])
        np.testing.assert_array_equal(tree_distances(s), want)

    def test_star(self):
        s = make_sentence([0, 1, 1, 1])
        d = tree_distances(s)
        for leaf in (1, 2, 3):
            assert d[0, leaf] == 1
        for a in (1, 2, 3):
            for b in (1, 2, 3):
                if a != b:
                    assert d[a, b] == 2

    def test_matches_bfs_on_random_trees(self):
        """Floyd-Warshall equals per-node BFS, exact integers."""
        rng = random.Random(17)
        for _ in range(60):
            heads = random_heads(rng, rng.randint(1, 30))
            s = make_sentence(heads)
            np.testing.assert_array_equal(tree_distances(s), bfs_distances(heads))

    def test_metric_axioms(self):
        rng = random.Random(23)
        for _ in range(20):
            d = tree_distances(make_sentence(random_heads(rng, rng.randint(2, 15))))
            n = d.shape[0]
            np.testing.assert_array_equal(d, d.T)
            assert np.all(np.diag(d) == 0)
            assert d[~np.eye(n, dtype=bool)].min() >= 1
            assert d.max() <= n - 1
            for k in range(n):
                assert np.all(d <= d[:, k:k + 1] + d[k:k + 1, :])


class TestSplits:
    def _corpus(self, count):
        return [make_sentence([0], sid=f"c{k}") for k in range(count)]

    def test_eighty_ten_ten(self):
        spec = make_splits(self._corpus(100), cap=100, seed=0)
        assert (len(spec.train), len(spec.test), len(spec.dev)) == (80, 10, 10)

    def test_cap_selects_prefix(self):
        """Only the first cap sentences in file order are partitioned."""
        sents = self._corpus(60)
        spec = make_splits(sents, cap=50, seed=0)
        used = set(spec.train) | set(spec.test) | set(spec.dev)
        assert used == {f"c{k}" for k in range(50)}
        assert (len(spec.train), len(spec.test), len(spec.dev)) == (40, 5, 5)

    def test_large_cap_counts(self):
        spec = make_splits(self._corpus(12500), cap=12000, seed=0)
        assert (len(spec.train), len(spec.test), len(spec.dev)) == (9600, 1200, 1200)

    def test_ten_sentences(self):
        spec = make_splits(self._corpus(10), cap=12000, seed=0)
        assert (len(spec.train), len(spec.test), len(spec.dev)) == (8, 1, 1)

    def test_seed_determinism(self):
        sents = self._corpus(40)
        a = make_splits(sents, cap=40, seed=7)
        b = make_splits(sents, cap=40, seed=7)
        c = make_splits(sents, cap=40, seed=8)
        assert a == b
        assert a.train != c.train

    def test_sections_disjoint_and_cover(self):
        spec = make_splits(self._corpus(37), cap=37, seed=3)
        train, test, dev = set(spec.train), set(spec.test), set(spec.dev)
        assert not (train & test) and not (train & dev) and not (test & dev)
        assert len(train | test | dev) == 37

    def test_too_few_sentences(self):
        with pytest.raises(ValueError):
            make_splits(self._corpus(9), cap=100, seed=0)

    def test_json_round_trip(self):
        spec = make_splits(self._corpus(20), cap=20, seed=1)
        again = SplitSpec.from_json(spec.to_json())
        assert again == spec
        doc = json.loads(spec.to_json())
        assert set(doc) == {"train", "test", "dev", "seed", "cap"}

    def test_section_lookup(self):
        spec = make_splits(self._corpus(20), cap=20, seed=1)
        assert spec.section("train") == spec.train
        with pytest.raises(ValueError):
            spec.section("validation")


class TestTokenInvariants:
    def test_self_head_rejected(self):
        with pytest.raises(ValueError):
            Token(index=1, form="x", upos="X", head=1)

    def test_negative_head_rejected(self):
        with pytest.raises(ValueError):
            Token(index=1, form="x", upos="X", head=-1)
