from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afkit.errors import DegenerateVariance, InvalidPredicate, MixedKinds, SketchUnderfull, ZeroMean
from afkit.seqio import Chunk, Sample
from afkit.stats import (FeatureFilter, KmerHistogram, PartialRecord, SpacedPattern, ValueCondition, aggregate,
                         aggregate_columns, assign_bin, assign_bins, decode, decode_many, encode,
                         extract_kmers, extract_minhash, extract_spaced_words, feature_filter, merge_sketches,
                         normalize, value_filter)

from oracles import dense_counts, random_seq


def _chunk(text: str, sid: int = 0) -> Chunk:
    return Chunk(sid, 0, 0, text.encode())


def test_encode_decode_roundtrip():
    assert encode("A") == 0 and encode("T") == 3 and encode("CA") == 4
    for w in ["ACGT", "TTTT", "GATTACA"]:
        assert decode(encode(w), len(w)) == w
    codes = np.array([encode(w) for w in ["AC", "GT", "TA"]], dtype=np.uint64)
    assert decode_many(codes, 2) == ["AC", "GT", "TA"]


def test_extract_kmers_drops_invalid():
    recs = list(extract_kmers(_chunk("ACNGT"), 2))
    assert [decode(r.key, 2) for r in recs] == ["AC", "GT"]
    assert all(r.value == 1 for r in recs)
    kept = list(extract_kmers(_chunk("ACNGT"), 2, keep_invalid=True))
    assert [r.key for r in kept if isinstance(r.key, str)] == ["CN", "NG"]


def test_histogram_matches_oracle(rng):
    seq = random_seq(rng, 400, "ACGTN")
    h = KmerHistogram.from_sample(Sample(0, "x", (seq,)), 3)
    dense = np.zeros(64)
    for c, v in h.counts.items():
        dense[c] = v
    np.testing.assert_array_equal(dense, dense_counts(seq, 3))


def test_minhash_duplicate_fragment():
    frag = "ACGTTGCAAGGCTTAACG"
    one = extract_minhash(Sample(0, "a", (frag,)), 5, 4)
    two = extract_minhash(Sample(0, "a", (frag, frag)), 5, 4)
    np.testing.assert_array_equal(one.hashes, two.hashes)
    assert len(one) == 4


def test_minhash_underfull_warns():
    with pytest.warns(SketchUnderfull):
        sk = extract_minhash(Sample(0, "a", ("ACGTAC",)), 3, 50)
    assert len(sk) < 50


def test_minhash_canonical_strand_invariant():
    frag = "ACGGTTACCAGTAGGCATTAG"
    rc = frag[::-1].translate(str.maketrans("ACGT", "TGCA"))
    a = extract_minhash(Sample(0, "a", (frag,)), 4, 8)
    b = extract_minhash(Sample(0, "a", (rc,)), 4, 8)
    np.testing.assert_array_equal(a.hashes, b.hashes)


def test_merge_sketches_example():
    out = merge_sketches(np.array([1, 5], dtype=np.uint64), np.array([2, 9], dtype=np.uint64), 3)
    assert out.tolist() == [1, 2, 5]


def test_spaced_words_examples():
    pat = SpacedPattern("101")
    recs = list(extract_spaced_words(_chunk("ACGT"), pat))
    assert [decode(r.key, 2) for r in recs] == ["AG", "CT"]
    assert [r.dontcare for r in recs] == [bytes([1]), bytes([2])]
    recs = list(extract_spaced_words(_chunk("ANGT"), pat))
    # window 0 keeps its N in the don't-care slot, window 1 has N at a match slot
    assert [decode(r.key, 2) for r in recs] == ["AG"]
    assert recs[0].dontcare == bytes([4])


def test_spaced_pattern_validation():
    assert SpacedPattern("1101").weight == 3
    for bad in ["", "0110", "12", "1" * 33]:
        with pytest.raises(ValueError):
            SpacedPattern(bad)


def test_aggregate_kinds():
    recs = [PartialRecord(3, 0, 1), PartialRecord(3, 0, 2)]
    assert aggregate(recs) == 3
    sk = [PartialRecord(0, 0, np.array([1, 5], dtype=np.uint64)),
          PartialRecord(0, 0, np.array([2, 9], dtype=np.uint64))]
    assert aggregate(sk, 3).tolist() == [1, 2, 5]
    assert aggregate([PartialRecord(0, 0, [1]), PartialRecord(0, 0, [2, 3])]) == [1, 2, 3]
    with pytest.raises(MixedKinds):
        aggregate([recs[0], sk[0]])


def test_feature_filter():
    flt = FeatureFilter(include="^A")
    rec = PartialRecord(encode("AC"), 0, 1)
    assert feature_filter(rec, flt, 2)
    assert not feature_filter(PartialRecord(encode("CA"), 0, 1), flt, 2)
    assert not feature_filter(PartialRecord("AN", 0, 1), None)
    codes = np.array([encode(w) for w in ["AC", "CA", "AT"]], dtype=np.uint64)
    assert FeatureFilter(exclude="T").mask(codes, 2).tolist() == [True, True, False]
    with pytest.raises(InvalidPredicate):
        FeatureFilter(include="(")


def test_value_condition():
    cond = ValueCondition.parse(">= 2")
    assert value_filter((0, 0, 2.0), cond) and not value_filter((0, 0, 1.0), cond)
    assert value_filter((0, 0, 1.0), None)
    np.testing.assert_array_equal(ValueCondition.parse("<3")(np.array([1, 3])), [True, False])
    with pytest.raises(InvalidPredicate):
        ValueCondition.parse("~2")


def test_zscore_example():
    h = KmerHistogram(0, 1, {encode("A"): 2, encode("T"): 2})
    z = normalize(h, "zscore").dense()
    np.testing.assert_allclose(z, [1, -1, -1, 1])


def test_normalize_modes(rng):
    seq = random_seq(rng, 200)
    h = KmerHistogram.from_sample(Sample(0, "x", (seq,)), 2)
    dense = dense_counts(seq, 2)
    np.testing.assert_allclose(normalize(h, "frequency").dense(), dense / dense.sum())
    np.testing.assert_allclose(normalize(h, "zscore").dense(), (dense - dense.mean()) / dense.std())
    np.testing.assert_array_equal(normalize(h).dense(), dense)
    with pytest.raises(ZeroMean):
        normalize(KmerHistogram(0, 2, {}), "frequency")
    with pytest.raises(ValueError):
        normalize(h, "rank")


def test_zscore_degenerate():
    h = KmerHistogram(0, 1, {c: 5 for c in range(4)})
    with pytest.warns(DegenerateVariance):
        z = normalize(h, "zscore")
    assert not z.dense().any()


def test_bin_balance():
    keys = np.arange(10_000, dtype=np.uint64)
    bins = assign_bins(keys, 64)
    counts = np.bincount(bins, minlength=64)
    assert counts.max() < 3 * counts.mean()
    assert all(assign_bin(int(k), 64) == b for k, b in zip(keys[:50], bins[:50]))
    assert assign_bins(keys, 1).max() == 0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 3), st.integers(1, 5)), max_size=60))
def test_aggregate_columns_oracle(rows):
    ref: dict = {}
    for k, s, v in rows:
        ref[k, s] = ref.get((k, s), 0) + v
    arr = np.array(rows, dtype=np.int64).reshape(-1, 3)
    k, s, v = aggregate_columns(arr[:, 0], arr[:, 1], arr[:, 2])
    assert list(zip(k.tolist(), s.tolist())) == sorted(ref)
    assert v.tolist() == [ref[key] for key in sorted(ref)]


def test_no_warnings_on_clean_input(rng):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        extract_minhash(Sample(0, "a", (random_seq(rng, 500),)), 8, 100)
