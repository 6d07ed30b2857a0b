import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from edit_embed.bounds import check_one_hot_bounds
from edit_embed.onehot import (
    BOTTOM,
    binary_edit_distance,
    from_one_hot,
    one_hot,
    one_hot_batch,
    one_hot_bounds,
    restrict_to_char,
)
from edit_embed.strings import Alphabet, edit_distance

AGCT = Alphabet(tuple(b"AGCT"), reserve_unknown=False)


def rows_as_strings(X):
    return ["".join(map(str, r)) for r in X.rows]


class TestOneHot:
    def test_catt(self):
        X = one_hot(b"CATT", AGCT, 4)
        assert rows_as_strings(X) == ["0100", "0000", "1000", "0011"]

    def test_empty(self):
        X = one_hot(b"", AGCT, 3)
        assert X.rows.shape == (4, 3) and not X.rows.any()

    def test_single_symbol(self):
        X = one_hot(b"AA", Alphabet(tuple(b"A"), reserve_unknown=False), 4)
        assert rows_as_strings(X) == ["1100"]

    def test_too_long(self):
        with pytest.raises(ValueError):
            one_hot(b"AAAAA", AGCT, 4)

    def test_unknown_symbol(self):
        with pytest.raises(KeyError):
            one_hot(b"AX", AGCT, 4)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.sampled_from(b"AGCT"), max_size=20), st.integers(0, 10))
    def test_column_invariants_and_roundtrip(self, symbols, pad):
        s = bytes(symbols)
        X = one_hot(s, AGCT, len(s) + pad)
        cols = X.rows.sum(axis=0)
        assert np.all(cols[: len(s)] == 1) and np.all(cols[len(s) :] == 0)
        for j, c in enumerate(AGCT.chars):
            assert np.array_equal(np.flatnonzero(X.rows[j]), [i for i, x in enumerate(s) if x == c])
        assert from_one_hot(X, AGCT) == s

    def test_batch_matches_single(self):
        strings = [b"CATT", b"G", b""]
        batch = one_hot_batch([AGCT.encode(s) for s in strings], 4, 5)
        for b, s in enumerate(strings):
            assert np.array_equal(batch[b], one_hot(s, AGCT, 5).rows)


class TestBinaryEditDistance:
    def test_identical(self):
        X = one_hot(b"GATTACA", AGCT, 10)
        assert binary_edit_distance(X, X) == 0

    def test_single_bits(self):
        at = Alphabet(tuple(b"AT"), reserve_unknown=False)
        assert binary_edit_distance(one_hot(b"A", at, 1), one_hot(b"T", at, 1)) == 2

    def test_padding_excluded(self):
        # Same strings under different L must give the same value.
        a, b = b"ACGT", b"AGT"
        assert binary_edit_distance(one_hot(a, AGCT, 4), one_hot(b, AGCT, 4)) == binary_edit_distance(
            one_hot(a, AGCT, 40), one_hot(b, AGCT, 40)
        )

    def test_mismatched_alphabets(self):
        with pytest.raises(ValueError):
            binary_edit_distance(one_hot(b"A", AGCT, 2), one_hot(b"A", Alphabet(tuple(b"A")), 2))

    def test_random_pairs_within_bounds(self, rng):
        for size in (2, 4):
            alpha = Alphabet(tuple(range(65, 65 + size)), reserve_unknown=False)
            for _ in range(100):
                a = rng.integers(65, 65 + size, rng.integers(0, 33)).astype(np.uint8).tobytes()
                b = rng.integers(65, 65 + size, rng.integers(0, 33)).astype(np.uint8).tobytes()
                X, Y = one_hot(a, alpha, 32), one_hot(b, alpha, 32)
                brute = sum(edit_distance(X.rows[i, : len(a)], Y.rows[i, : len(b)]) for i in range(size))
                got = binary_edit_distance(X, Y)
                lo, hi = one_hot_bounds(edit_distance(a, b), size, len(a), len(b))
                assert got == brute and lo <= got <= hi


class TestRestrict:
    def test_catt(self):
        arr, count = restrict_to_char(b"CATT", ord("T"))
        assert arr.tolist() == [BOTTOM, BOTTOM, ord("T"), ord("T")] and count == 2

    def test_all_match(self):
        arr, count = restrict_to_char(b"AAAA", ord("A"))
        assert bytes(arr.astype(np.uint8)) == b"AAAA" and count == 4

    def test_no_match(self):
        arr, count = restrict_to_char(b"GGGG", ord("A"))
        assert arr.tolist() == [BOTTOM] * 4 and count == 0

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.sampled_from(b"ACGT"), max_size=30), st.sampled_from(b"ACGT"))
    def test_distance_identity(self, symbols, c):
        s = bytes(symbols)
        arr, count = restrict_to_char(s, c)
        assert edit_distance(s, arr) == len(s) - count


def test_bound_suite_small():
    reports = check_one_hot_bounds(n_pairs=500, seed=3)
    assert all(r.passed for r in reports)
    full, support, identity = reports
    assert full.checked == identity.checked == 500
    # Pairs of two empty strings have no support and are skipped.
    assert 450 <= support.checked <= 500
