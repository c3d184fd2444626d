import pytest

from stegosync.errors import InvalidToken
from stegosync.tokenizer import (
    VisibleString,
    Vocab,
    detokenize,
    fixture_vocab,
    prefix_order_key,
)


class TestVocab:
    def test_piece_lookup(self, vocab):
        assert vocab.piece(4) == b"dog"
        assert vocab.piece(0) == b""
        assert vocab.eos_id == 0

    def test_unknown_id(self, vocab):
        with pytest.raises(InvalidToken):
            vocab.piece(9999)

    def test_contains_and_len(self, vocab):
        assert 377 in vocab
        assert 9999 not in vocab
        assert len(vocab) == 8
        assert set(vocab.ids()) == set(vocab.pieces)

    def test_eos_must_exist(self):
        with pytest.raises(InvalidToken):
            Vocab(pieces={1: b"a"}, eos_id=0)

    def test_eos_piece_must_be_empty(self):
        with pytest.raises(InvalidToken):
            Vocab(pieces={0: b"x", 1: b"a"}, eos_id=0)

    def test_negative_id_rejected(self):
        with pytest.raises(InvalidToken):
            Vocab(pieces={0: b"", -3: b"a"}, eos_id=0)

    def test_delimiter_free(self, vocab):
        assert vocab.delimiter_free(b"\n") is True
        # "b" occurs inside the pieces "b" and "ab".
        assert vocab.delimiter_free(b"b") is False
        # Cached answer stays stable.
        assert vocab.delimiter_free(b"\n") is True


class TestVocabSerialization:
    def test_lines_round_trip(self, vocab):
        text = vocab.to_lines()
        back = Vocab.from_lines(text)
        assert back.pieces == vocab.pieces
        assert back.eos_id == vocab.eos_id

    def test_file_round_trip(self, vocab, tmp_path):
        path = tmp_path / "v.vocab"
        vocab.save(path)
        assert Vocab.load(path).pieces == vocab.pieces

    def test_missing_eos_header(self):
        with pytest.raises(InvalidToken):
            Vocab.from_lines("1\t61\n")

    def test_duplicate_id(self):
        with pytest.raises(InvalidToken):
            Vocab.from_lines("#eos 0\n0\t\n1\t61\n1\t62\n")

    def test_malformed_line(self):
        with pytest.raises(InvalidToken):
            Vocab.from_lines("#eos 0\n0\t\nnot a line\n")

    def test_comments_and_blanks_skipped(self):
        v = Vocab.from_lines("#eos 0\n\n# comment\n0\t\n1\t61\n")
        assert v.piece(1) == b"a"


class TestDetokenize:
    def test_concatenation(self, vocab):
        assert detokenize((377, 245), vocab) == VisibleString(b"mistrust", False)
        assert detokenize((278,), vocab) == VisibleString(b"mistrust", False)

    def test_end_marked(self, vocab):
        v = detokenize((1, 3, 0), vocab)
        assert v == VisibleString(b"aab", True)

    def test_empty_sequence(self, vocab):
        assert detokenize((), vocab) == VisibleString(b"", False)

    def test_token_after_eos(self, vocab):
        with pytest.raises(InvalidToken):
            detokenize((1, 0, 2), vocab)


class TestOrdering:
    def test_prefix_before_extension(self):
        a = VisibleString(b"a")
        ab = VisibleString(b"ab")
        assert prefix_order_key(a) < prefix_order_key(ab)

    def test_end_marked_before_plain_at_equal_bytes(self):
        done = VisibleString(b"a", True)
        open_ = VisibleString(b"a", False)
        assert prefix_order_key(done) < prefix_order_key(open_)

    def test_extend(self):
        v = VisibleString(b"mis").extend(b"trust", False)
        assert v == VisibleString(b"mistrust", False)
        assert v.extend(b"", True).end_marked
