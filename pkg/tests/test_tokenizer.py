import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from batlab.errors import ConfigError, DataError
from batlab.tokenizer import (
    CLS_ID,
    PAD_ID,
    RESERVED,
    SEP_ID,
    UNK_ID,
    Tokenizer,
    Vocab,
    align_bio,
    build_vocab,
    decode,
    encode_pair,
    encode_sequence,
    split_words,
    tokenize,
    wordpiece,
)


def _vocab(*tokens):
    return Vocab(list(RESERVED) + list(tokens))


class TestBuildVocab:
    def test_most_frequent_pair_is_merged(self):
        v = build_vocab(["aa aa ab"], 10)
        assert "aa" in v
        assert v.itos[:4] == list(RESERVED)

    def test_stops_when_no_pairs_remain(self):
        v = build_vocab(["aa aa ab"], 10)
        assert v.itos[4:] == ["a", "##a", "##b", "aa", "ab"]

    def test_tie_goes_to_smallest_pair(self):
        v = build_vocab(["ab cd"], 9)
        assert v.itos[-1] == "ab"

    def test_target_must_exceed_reserved(self):
        with pytest.raises(ConfigError):
            build_vocab(["hello"], 4)

    def test_target_must_exceed_alphabet(self):
        with pytest.raises(ConfigError):
            build_vocab(["abcdef"], 8)

    def test_empty_corpus(self):
        with pytest.raises(DataError):
            build_vocab(["   "], 50)

    def test_deterministic(self):
        corpus = ["the battery life is great", "the screen is awful !", "battery died"]
        assert build_vocab(corpus, 60) == build_vocab(list(corpus), 60)

    def test_save_load(self, tmp_path):
        v = build_vocab(["the battery life is great"], 30)
        v.save(tmp_path / "vocab.txt")
        assert Vocab.load(tmp_path / "vocab.txt") == v

    def test_vocab_must_start_with_reserved(self):
        with pytest.raises(DataError):
            Vocab(["a", "[PAD]", "[UNK]", "[CLS]", "[SEP]"])


class TestWordpiece:
    def test_longest_match(self):
        v = _vocab("un", "unh", "##happy", "##h", "##appy")
        ids, starts = tokenize("unhappy", v)
        assert [v.token(i) for i in ids] == ["unh", "##appy"]
        assert starts == [True, False]

    def test_two_pieces(self):
        v = _vocab("un", "##happy")
        ids, starts = tokenize("unhappy", v)
        assert ids == [v.id("un"), v.id("##happy")] and starts == [True, False]

    def test_word_in_vocab_is_one_piece(self):
        v = _vocab("screen")
        assert tokenize("screen", v) == ([v.id("screen")], [True])

    def test_atomic_tokens_map_to_themselves(self):
        v = build_vocab(["the battery life is great", "battery died"], 40)
        for tok in v.itos[4:]:
            if not tok.startswith("##"):
                assert tokenize(tok, v)[0] == [v.id(tok)]

    def test_unknown_word(self):
        v = _vocab("un", "##happy")
        assert wordpiece("xyz", v) == [UNK_ID]
        assert wordpiece("unhappyx", v) == [UNK_ID]

    def test_lowercases(self):
        v = _vocab("good")
        assert tokenize("GOOD", v)[0] == [v.id("good")]
        assert tokenize("GOOD", v, lowercase=False)[0] == [UNK_ID]

    def test_punctuation_detached(self):
        assert [w for w, _, _ in split_words("great,  really!")] == ["great", ",", "really", "!"]
        assert split_words("a b")[1] == ("b", 2, 3)

    def test_trained_vocab_covers_its_corpus(self):
        corpus = ["the battery life is great", "the screen is awful !"]
        v = build_vocab(corpus, 40)
        for text in corpus:
            assert UNK_ID not in tokenize(text, v)[0]


class TestEncode:
    def test_short_sequence(self):
        ex = encode_sequence([7, 8], 6)
        assert ex.input_ids == (CLS_ID, 7, 8, SEP_ID, PAD_ID, PAD_ID)
        assert ex.attention_mask == (1, 1, 1, 1, 0, 0)
        assert ex.segment_ids == (0,) * 6
        assert ex.position_ids == tuple(range(6))

    def test_exact_fit(self):
        ex = encode_sequence([5, 6, 7, 8], 6)
        assert ex.input_ids == (CLS_ID, 5, 6, 7, 8, SEP_ID)
        assert ex.length == 6

    def test_one_token_too_many(self):
        ex = encode_sequence([5, 6, 7, 8, 9], 6)
        assert ex.input_ids == (CLS_ID, 5, 6, 7, 8, SEP_ID)

    def test_truncation_keeps_head(self):
        ex = encode_sequence(list(range(10, 20)), 6)
        assert ex.input_ids == (CLS_ID, 10, 11, 12, 13, SEP_ID)

    def test_max_len_too_small(self):
        with pytest.raises(ConfigError):
            encode_sequence([5], 2)

    def test_empty(self):
        with pytest.raises(DataError):
            encode_sequence([], 8)

    def test_pair_layout(self):
        ex = encode_pair([5, 6], [9], 8)
        assert ex.input_ids == (CLS_ID, 5, 6, SEP_ID, 9, SEP_ID, PAD_ID, PAD_ID)
        assert ex.segment_ids == (0, 0, 0, 0, 1, 1, 0, 0)

    def test_pair_truncates_first_segment(self):
        ex = encode_pair(list(range(10, 20)), [90, 91], 8)
        assert ex.input_ids == (CLS_ID, 10, 11, 12, SEP_ID, 90, 91, SEP_ID)

    def test_decode_strips_specials(self):
        assert decode(encode_pair([5, 6], [9], 8)) == [5, 6, 9]

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(4, 99), min_size=1, max_size=30), st.integers(3, 40))
    def test_round_trip(self, tokens, max_len):
        ex = encode_sequence(tokens, max_len)
        assert len(ex) == max_len
        assert decode(ex) == tokens[: max_len - 2]
        assert ex.input_ids.count(CLS_ID) == 1 and ex.input_ids.count(SEP_ID) == 1


class TestAlignBio:
    def test_continuations_are_masked(self):
        labels, mask = align_bio(["B", "O"], [False, True, False, True, False])
        assert labels == ["O", "B", "O", "O", "O"]
        assert mask == [0, 1, 0, 1, 0]

    def test_single_piece_words(self):
        assert align_bio(["O", "B", "I"], [True, True, True]) == (["O", "B", "I"], [1, 1, 1])

    def test_split_b_word(self):
        assert align_bio(["B"], [True, False, False]) == (["B", "O", "O"], [1, 0, 0])

    def test_zero_words(self):
        ex = encode_sequence([5], 4, [False])
        assert align_bio([], ex.word_starts) == (["O"] * 4, [0] * 4)

    def test_count_mismatch(self):
        with pytest.raises(DataError):
            align_bio(["B"], [True, True])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(1, 4), min_size=1, max_size=15), st.data())
    def test_word_labels_survive(self, piece_counts, data):
        words = data.draw(st.lists(st.sampled_from("OBI"), min_size=len(piece_counts), max_size=len(piece_counts)))
        starts = [True if j == 0 else False for n in piece_counts for j in range(n)]
        labels, mask = align_bio(words, starts)
        assert sum(mask) == len(words)
        assert [l for l, m in zip(labels, mask) if m] == words
        assert all(l == "O" for l, m in zip(labels, mask) if not m)


def test_tokenizer_wrapper_matches_function():
    v = build_vocab(["battery life was great"], 30)
    tok = Tokenizer(v)
    assert tok.tokenize("Battery life") == tokenize("Battery life", v)
    assert np.concatenate(tok.word_pieces(["battery", "life"])).tolist() == tokenize("battery life", v)[0]
