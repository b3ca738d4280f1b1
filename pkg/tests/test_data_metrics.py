import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphtrans.data import (ALPHABET, Batch, ParallelCorpus, Vocabulary, detokenize, encode_pairs, make_task,
                             pad_batch, read_corpus, token_batches, tokenize, toy_translate, write_corpus)
from graphtrans.errors import ContractError
from graphtrans.metrics import bleu, bleu_by_length, bleu_stats, bucket_of, token_accuracy
from graphtrans.model import BOS, EOS, PAD, UNK

# clipped matches / totals by order, worked out by hand:
#   s1  the cat sat on the mat | the cat is on the mat   5/6 3/5 1/4 0/3
#   s2  a b c d                | a b c d e               4/4 3/3 2/2 1/1
#   s3  x x x                  | x y                     1/3 0/2 0/1 -
# corpus: 10/13 6/10 3/7 1/4, hyp 13 = ref 13 so no brevity penalty
FIXTURE_HYPS = ["the cat sat on the mat".split(), "a b c d".split(), "x x x".split()]
FIXTURE_REFS = ["the cat is on the mat".split(), "a b c d e".split(), "x y".split()]
FIXTURE_BLEU = 47.1566


class TestBleu:
    def test_hand_computed_fixture(self):
        matches, totals, h, r = bleu_stats(FIXTURE_HYPS, FIXTURE_REFS)
        assert matches == [10, 6, 3, 1] and totals == [13, 10, 7, 4] and h == r == 13
        assert bleu(FIXTURE_HYPS, FIXTURE_REFS) == pytest.approx(FIXTURE_BLEU, abs=0.01)

    def test_brevity_penalty(self):
        score = bleu(["a b c d".split()], ["a b c d e f".split()])
        assert score == pytest.approx(100 * math.exp(1 - 6 / 4), abs=1e-9)

    def test_identity_is_100(self):
        refs = [list("abcdef"), list("ghij")]
        assert bleu(refs, refs) == pytest.approx(100.0)

    def test_no_four_gram_matches(self):
        assert bleu([list("abcde")], [list("abcxe")]) == 0.0

    def test_empty_corpus(self):
        with pytest.raises(ContractError):
            bleu([], [])

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            bleu([["a"]], [])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.lists(st.sampled_from("abcd"), min_size=1, max_size=8), min_size=1, max_size=6),
           st.randoms(use_true_random=False))
    def test_self_bleu_and_order_invariance(self, sents, rnd):
        assert bleu(sents, sents) == pytest.approx(100.0)
        refs = [s[::-1] for s in sents]
        order = list(range(len(sents)))
        rnd.shuffle(order)
        a = bleu(sents, refs)
        b = bleu([sents[i] for i in order], [refs[i] for i in order])
        assert a == pytest.approx(b, abs=1e-9)
        assert 0.0 <= a <= 100.0


class TestBleuByLength:
    def test_single_bucket_equals_corpus(self):
        per = bleu_by_length(FIXTURE_HYPS, FIXTURE_REFS, lengths=[3, 4, 5])
        assert list(per) == [(0, 10)]
        assert per[(0, 10)] == pytest.approx(bleu(FIXTURE_HYPS, FIXTURE_REFS))

    def test_half_open_boundaries(self):
        assert bucket_of(9) == (0, 10)
        assert bucket_of(10) == (10, 20)
        assert bucket_of(40) == (40, math.inf)

    def test_two_bucket_subset_oracle(self):
        lengths = [12, 4, 15]
        per = bleu_by_length(FIXTURE_HYPS, FIXTURE_REFS, lengths=lengths)
        assert set(per) == {(0, 10), (10, 20)}
        assert per[(0, 10)] == pytest.approx(bleu(FIXTURE_HYPS[1:2], FIXTURE_REFS[1:2]))
        assert per[(10, 20)] == pytest.approx(bleu([FIXTURE_HYPS[0], FIXTURE_HYPS[2]], [FIXTURE_REFS[0], FIXTURE_REFS[2]]))
        assert (20, 40) not in per

    def test_defaults_to_reference_lengths(self):
        per = bleu_by_length([list("a" * 12)], [list("a" * 12)])
        assert per == {(10, 20): pytest.approx(100.0)}


class TestTokenAccuracy:
    def test_perfect(self):
        targets = np.array([[3, 4, 1]])
        logits = np.eye(6)[targets] * 5
        assert token_accuracy(logits, targets, PAD) == 1.0

    def test_uniform_logits_monte_carlo(self, rng):
        # ties broken uniformly by tiny noise
        targets = rng.integers(0, 16, 200_000)
        logits = rng.random((200_000, 16)) * 1e-6
        assert token_accuracy(logits, targets, pad_id=-1) == pytest.approx(1 / 16, abs=0.003)

    def test_pad_positions_ignored(self, rng):
        targets = np.array([[3, 4, PAD, PAD]])
        logits = rng.standard_normal((1, 4, 6))
        before = token_accuracy(logits, targets, PAD)
        logits[0, 2:] = -logits[0, 2:]
        assert token_accuracy(logits, targets, PAD) == before

    def test_all_pad(self):
        with pytest.raises(ContractError):
            token_accuracy(np.zeros((2, 5)), np.array([PAD, PAD]), PAD)


class TestTasks:
    def test_copy(self):
        corpus = make_task("copy", 50, (1, 8), 12, seed=3)
        assert all(s == t for s, t in corpus.pairs)

    def test_reverse(self):
        corpus = make_task("reverse", 50, (1, 8), 12, seed=3)
        assert all(t == s[::-1] for s, t in corpus.pairs)

    def test_sort(self):
        corpus = make_task("sort", 50, (1, 8), 12, seed=3)
        assert all(t == sorted(s, key=ALPHABET.index) for s, t in corpus.pairs)

    def test_toy_translation_is_invertible(self):
        corpus = make_task("toy_translation", 200, (1, 9), 14, seed=5)
        srcs = {}
        for s, t in corpus.pairs:
            assert len(t) == len(s)
            # a perfect model exists: equal targets imply equal sources
            assert srcs.setdefault(tuple(t), tuple(s)) == tuple(s)

    def test_toy_translate_rule(self):
        table = {"a": "b", "b": "c", "c": "a"}
        assert toy_translate(list("abc"), table) == ["c", "b", "a"]

    def test_deterministic(self):
        a = make_task("toy_translation", 30, (1, 6), 10, seed=9)
        b = make_task("toy_translation", 30, (1, 6), 10, seed=9)
        assert a.pairs == b.pairs and a.splits == b.splits and a.vocab == b.vocab

    def test_vocab_size_counts_reserved_ids(self):
        assert len(make_task("copy", 20, (1, 3), 8, seed=0).vocab) == 8
        with pytest.raises(ContractError):
            make_task("copy", 20, (1, 3), 7, seed=0)

    def test_length_range_guard(self):
        with pytest.raises(ContractError):
            make_task("copy", 20, (0, 3), 10, seed=0)
        with pytest.raises(ContractError):
            make_task("copy", 20, (1, 251), 10, seed=0)

    def test_splits_partition(self):
        corpus = make_task("copy", 100, (1, 4), 10, seed=0)
        idx = corpus.splits["train"] + corpus.splits["valid"] + corpus.splits["test"]
        assert sorted(idx) == list(range(100))
        assert len(corpus.split("valid")) == 10

    def test_corpus_rejects_empty_and_long(self):
        with pytest.raises(ContractError):
            ParallelCorpus([([], ["a"])], Vocabulary("a"))
        with pytest.raises(ContractError):
            ParallelCorpus([(["a"] * 251, ["a"])], Vocabulary("a"))


class TestVocabulary:
    def test_reserved_ids(self):
        v = Vocabulary("xy")
        assert [v.stoi[s] for s in v.itos[:4]] == [BOS, EOS, PAD, UNK]
        assert v.encode(["x", "y"]) == [4, 5]

    def test_bijection(self):
        v = Vocabulary("abcabc")
        assert len(v) == 7
        assert all(v.stoi[s] == i for i, s in enumerate(v.itos))

    def test_unknown(self):
        v = Vocabulary("ab")
        with pytest.raises(KeyError):
            v.encode(["z"])
        assert v.encode(["z"], strict=False) == [UNK]

    def test_decode_drops_control_ids(self):
        v = Vocabulary("ab")
        assert v.decode([BOS, 4, 5, EOS, PAD]) == ["a", "b"]

    @given(st.text(alphabet=st.characters(blacklist_characters="\t\n\r"), max_size=30))
    def test_char_round_trip(self, text):
        assert detokenize(tokenize(text)) == text


class TestBatching:
    def test_pad_batch_layout(self):
        batch = pad_batch([([4, 5], [6]), ([4], [6, 7, 8])], [0, 1])
        np.testing.assert_array_equal(batch.src, [[4, 5, EOS], [4, EOS, PAD]])
        np.testing.assert_array_equal(batch.tgt_in, [[BOS, 6, PAD, PAD], [BOS, 6, 7, 8]])
        np.testing.assert_array_equal(batch.tgt_out, [[6, EOS, PAD, PAD], [6, 7, 8, EOS]])
        assert batch.n_tokens == 6
        np.testing.assert_array_equal(batch.src_mask, batch.src != PAD)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**16), st.integers(16, 200))
    def test_epoch_preserves_pairs_and_budget(self, seed, budget):
        corpus = make_task("reverse", 60, (1, 7), 10, seed=seed % 50)
        enc = encode_pairs(corpus.pairs, corpus.vocab)
        batches = token_batches(enc, budget, np.random.default_rng(seed))
        seen = sorted(i for b in batches for i in b.indices)
        assert seen == list(range(len(enc)))
        for b in batches:
            assert isinstance(b, Batch)
            assert b.src.size <= budget or len(b.indices) == 1
            assert b.tgt_out.size <= budget or len(b.indices) == 1

    def test_empty_input(self):
        assert token_batches([], 100) == []


def test_corpus_file_round_trip(tmp_path):
    corpus = make_task("toy_translation", 20, (1, 6), 12, seed=1)
    path = tmp_path / "pairs.tsv"
    write_corpus(path, corpus.pairs)
    assert read_corpus(path) == corpus.pairs
    line = path.read_text(encoding="utf-8").splitlines()[0]
    assert line.count("\t") == 1


def test_corpus_file_needs_tab(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("abc\n", encoding="utf-8")
    with pytest.raises(ContractError):
        read_corpus(path)
