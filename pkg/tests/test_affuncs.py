from __future__ import annotations

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afkit import affuncs
from afkit.affuncs import (CHIAROMONTE, HISTOGRAM_FUNCTIONS, PairContext, SampleStats, evaluate_histograms,
                           fswm_counts, fswm_distance, get_evaluator, jukes_cantor, match_family,
                           resolve_name, spaced_word_index)
from afkit.errors import (ConfigError, NegativeInput, NoMatches, SaturatedDistance, SketchUnderfull,
                          ZeroMean)
from afkit.seqio import Chunk, Sample
from afkit.stats import KmerHistogram, SpacedPattern, encode, extract_minhash, extract_spaced_words

import oracles
from oracles import af_value, background, dense_counts, random_seq


def _sparse(dense: np.ndarray) -> dict[int, float]:
    return {i: float(v) for i, v in enumerate(dense) if v}


def _close(a: float, b: float, rel: float = 1e-9) -> bool:
    return math.isclose(a, b, rel_tol=rel, abs_tol=1e-9)


def test_registry_has_every_histogram_function():
    assert set(HISTOGRAM_FUNCTIONS) == {
        "euclidean", "manhattan", "chebyshev", "jaccard", "chi2", "canberra", "d2", "d2z", "d2s",
        "d2star", "intersection", "kulczynski2", "harmonic_mean", "squared_chord", "jeffrey", "jsd"}


@pytest.mark.parametrize("name,expected", [("fade.affunction.Euclidean", "euclidean"), ("D2*", "d2star"),
                                           ("HarmonicMean", "harmonic_mean"), ("mash", "mash")])
def test_resolve_name(name, expected):
    assert resolve_name(name) == expected


def test_resolve_unknown():
    with pytest.raises(ConfigError):
        resolve_name("cosine")


def test_minkowski_345():
    hs, ht = {0: 3}, {1: 4}
    assert evaluate_histograms("euclidean", hs, ht, 1) == pytest.approx(5)
    assert evaluate_histograms("manhattan", hs, ht, 1) == pytest.approx(7)
    assert evaluate_histograms("chebyshev", hs, ht, 1) == pytest.approx(4)
    for name in ("euclidean", "manhattan", "chebyshev"):
        assert evaluate_histograms(name, hs, hs, 1) == 0


def test_chi2_canberra_single_term():
    assert evaluate_histograms("chi2", {2: 2}, {}, 1) == pytest.approx(2)
    assert evaluate_histograms("canberra", {2: 2}, {}, 1) == pytest.approx(1)


def test_d2_and_d2star_hand_cases():
    assert evaluate_histograms("d2", {5: 2}, {5: 3}, 2) == 6
    # one over-represented word; only its term, other words cancel nothing
    ev = get_evaluator("d2star")
    st = SampleStats(10.0, 0.0, 1, 0.0, np.full(4, 0.25))
    ctx = PairContext(1, st, st)
    term = ev.term(np.array([5 - 10 * 0.25]), np.array([2.5]), np.array([0.25]), np.array([0.25]), ctx)
    assert term[0] == pytest.approx(2.5)


def test_d2z_identity_is_max_over_permutations():
    import itertools
    hs = np.array([5.0, 1.0, 3.0, 0.0])
    self_val = evaluate_histograms("d2z", _sparse(hs), _sparse(hs), 1)
    z = (hs - hs.mean()) / hs.std()
    assert self_val == pytest.approx(float((z * z).sum()))
    for perm in itertools.permutations(hs):
        assert evaluate_histograms("d2z", _sparse(hs), _sparse(np.array(perm)), 1) <= self_val + 1e-12


def test_intersection_kulczynski():
    h = {0: 2, 1: 5, 3: 1}
    assert evaluate_histograms("intersection", h, h, 1) == pytest.approx(3)
    assert evaluate_histograms("intersection", {0: 1}, {1: 1}, 1) == 0
    assert evaluate_histograms("kulczynski2", {0: 1}, {1: 1}, 1) == 0
    a, c, g = encode("A"), encode("C"), encode("G")
    assert evaluate_histograms("kulczynski2", {a: 2, c: 2}, {a: 2, g: 2}, 1) == pytest.approx(8)
    # the printed minus sign vanishes for equal means
    assert evaluate_histograms("kulczynski2", {a: 2, c: 2}, {a: 2, g: 2}, 1, literal_kulczynski=True) == 0
    with pytest.raises(ZeroMean):
        evaluate_histograms("kulczynski2", {}, {a: 1}, 1)


def test_inner_product_hand_cases():
    assert evaluate_histograms("squared_chord", {0: 4}, {0: 1}, 1) == pytest.approx(1)
    assert evaluate_histograms("harmonic_mean", {0: 4}, {0: 1}, 1) == pytest.approx(1.6)
    h = {0: 2, 2: 7}
    assert evaluate_histograms("squared_chord", h, h, 1) == 0
    assert evaluate_histograms("harmonic_mean", h, h, 1) == pytest.approx(9)


def test_squared_chord_rejects_negative():
    with pytest.raises(NegativeInput):
        evaluate_histograms("squared_chord", {0: -1.0}, {0: 1.0}, 1)


def test_divergences():
    h = {0: 3, 1: 1}
    assert evaluate_histograms("jeffrey", h, h, 1) == pytest.approx(0, abs=1e-15)
    assert evaluate_histograms("jsd", h, h, 1) == pytest.approx(0, abs=1e-15)
    assert evaluate_histograms("jsd", {0: 1, 1: 1}, {2: 1, 3: 1}, 1) == pytest.approx(1)
    assert math.isfinite(evaluate_histograms("jeffrey", {0: 1}, {3: 1}, 1))
    ps = np.array([0.5, 0.5, 0, 0])
    pt = np.full(4, 0.25)
    mid = (ps + pt) / 2
    ref = 0.5 * sum(p * math.log2(p / m) for p, m in zip(ps, mid) if p) + \
        0.5 * sum(p * math.log2(p / m) for p, m in zip(pt, mid) if p)
    got = evaluate_histograms("jsd", {0: 2, 1: 2}, {0: 1, 1: 1, 2: 1, 3: 1}, 1)
    assert got == pytest.approx(ref, abs=1e-12)


@pytest.mark.parametrize("name", HISTOGRAM_FUNCTIONS)
@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_oracle_equivalence(name, k):
    rng = np.random.default_rng(1000 * k + len(name))
    s = random_seq(rng, int(rng.integers(k + 20, 500)))
    t = random_seq(rng, int(rng.integers(k + 20, 500)))
    hs, ht = dense_counts(s, k), dense_counts(t, k)
    bs, bt = background(s), background(t)
    got = evaluate_histograms(name, _sparse(hs), _sparse(ht), k, bs, bt)
    want = af_value(name, hs, ht, k, bs, bt)
    assert _close(got, want), (got, want)
    # symmetry
    back = evaluate_histograms(name, _sparse(ht), _sparse(hs), k, bt, bs)
    assert back == pytest.approx(got, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("name", [n for n in HISTOGRAM_FUNCTIONS if n not in oracles.SIMILARITIES])
def test_self_distance_zero(name, rng):
    seq = random_seq(rng, 300)
    h = _sparse(dense_counts(seq, 3))
    assert evaluate_histograms(name, h, h, 3, background(seq), background(seq)) == pytest.approx(0, abs=1e-12)


def test_normalized_inputs_match_dense(rng):
    from afkit.stats import normalize
    s, t = random_seq(rng, 200), random_seq(rng, 250)
    zs = normalize(KmerHistogram.from_sample(Sample(0, "s", (s,)), 2), "zscore")
    zt = normalize(KmerHistogram.from_sample(Sample(1, "t", (t,)), 2), "zscore")
    for name in ("euclidean", "manhattan", "d2"):
        got = evaluate_histograms(name, zs, zt)
        assert _close(got, af_value(name, zs.dense(), zt.dense(), 2))


@pytest.mark.parametrize("name", ["euclidean", "chebyshev", "jaccard", "d2s", "d2star", "kulczynski2", "fswm"])
def test_combine_associative_commutative(name, rng):
    ev = get_evaluator(name)
    # partials are non-negative for max-combined evaluators
    a, b, c = (np.abs(rng.normal(size=ev.width)) for _ in range(3))
    assert np.allclose(ev.combine(a, ev.combine(b, c)), ev.combine(ev.combine(a, b), c))
    assert np.allclose(ev.combine(a, b), ev.combine(b, a))
    assert np.allclose(ev.combine(a, ev.identity()), a)


def test_d2s_large_k_warns():
    with pytest.warns(UserWarning, match="dropped"):
        evaluate_histograms("d2s", {1: 1}, {1: 2}, 9)


def test_d2star_closed_form_complement_matches_enumeration(rng):
    s, t = random_seq(rng, 120), random_seq(rng, 90)
    k = 5
    hs, ht = dense_counts(s, k), dense_counts(t, k)
    got = evaluate_histograms("d2star", _sparse(hs), _sparse(ht), k, background(s), background(t))
    assert _close(got, af_value("d2star", hs, ht, k, background(s), background(t)))


# match family ------------------------------------------------------------------

def _canonical_set(seq, k):
    rc = str.maketrans("ACGT", "TGCA")
    out = set()
    for i in range(len(seq) - k + 1):
        w = seq[i:i + k]
        out.add(min(w, w[::-1].translate(rc)))
    return out


def test_jaccard_identity_and_disjoint():
    h = {0: 1, 5: 2}
    assert match_family("jaccard_exact", h, h, 2) == 1
    assert match_family("jaccard_exact", {0: 1}, {1: 1}, 2) == 0
    assert match_family("jaccard_exact", {}, {}, 2) == 1


def test_mash_exact_when_sketch_holds_everything(rng):
    k = 8
    s, t = random_seq(rng, 300), random_seq(rng, 300)
    t = s[:150] + t[150:]
    A, B = _canonical_set(s, k), _canonical_set(t, k)
    exact = len(A & B) / len(A | B)
    with pytest.warns(SketchUnderfull):
        sk_s = extract_minhash(Sample(0, "s", (s,)), k, 2000)
        sk_t = extract_minhash(Sample(1, "t", (t,)), k, 2000)
    j, d = match_family("mash", sk_s, sk_t)
    assert j == pytest.approx(exact, abs=1e-15)
    assert d == pytest.approx(-math.log(2 * j / (1 + j)) / k)
    j_self, d_self = match_family("mash", sk_s, sk_s)
    assert j_self == 1 and d_self == 0


def test_mash_estimate_half(rng):
    k, s_size = 16, 1000
    shared = random_seq(rng, 6000)
    s = shared + random_seq(rng, 3000)
    t = shared + random_seq(rng, 3000)
    A, B = _canonical_set(s, k), _canonical_set(t, k)
    exact = len(A & B) / len(A | B)
    assert abs(exact - 0.5) < 0.02
    j, _ = match_family("mash", extract_minhash(Sample(0, "s", (s,)), k, s_size),
                        extract_minhash(Sample(1, "t", (t,)), k, s_size))
    assert abs(j - exact) <= 0.05


def test_mash_mismatched_sketches():
    a = extract_minhash(Sample(0, "s", ("ACGTACGTAAAC",)), 3, 4)
    b = extract_minhash(Sample(0, "s", ("ACGTACGTAAAC",)), 4, 4)
    with pytest.raises(ConfigError):
        match_family("mash", a, b)


# spaced words ------------------------------------------------------------------

def test_jukes_cantor_reference():
    ref = -mpmath.mpf(3) / 4 * mpmath.log(1 - mpmath.mpf(4) / 3 * mpmath.mpf("0.1"))
    assert jukes_cantor(1, 10) == pytest.approx(float(ref), rel=1e-14)
    assert float(ref) == pytest.approx(0.10732563273050497)
    assert jukes_cantor(0, 10) == 0


def test_jukes_cantor_sentinels():
    with pytest.warns(NoMatches):
        assert math.isnan(jukes_cantor(0, 0))
    with pytest.warns(SaturatedDistance):
        assert jukes_cantor(8, 10) == math.inf


def _index(frags, pattern):
    recs = []
    for i, f in enumerate(frags):
        recs += list(extract_spaced_words(Chunk(0, i, 0, f.encode()), SpacedPattern(pattern)))
    return spaced_word_index(recs)


def test_fswm_toy_enumeration():
    s_frags, t_frags = ["ACGTAC", "GGATC"], ["ACTTACG", "GCATC"]
    kept, mm, delta = fswm_counts(_index(s_frags, "101"), _index(t_frags, "101"), threshold=-1000)
    ref_mm = ref_delta = 0
    for a in s_frags:
        for b in t_frags:
            m, d = oracles.fswm_enumerate(a, b, "101", -1000)
            ref_mm += m
            ref_delta += d
    assert (mm, delta) == (ref_mm, ref_delta)


@settings(max_examples=40, deadline=None)
@given(s=st.text(alphabet="ACGTN", min_size=4, max_size=40), t=st.text(alphabet="ACGTN", min_size=4, max_size=40),
       pattern=st.sampled_from(["101", "1001", "1101", "10011"]), threshold=st.sampled_from([-200, 0, 100]))
def test_fswm_counts_oracle(s, t, pattern, threshold):
    _, mm, delta = fswm_counts(_index([s], pattern), _index([t], pattern), CHIAROMONTE, threshold)
    assert (mm, delta) == oracles.fswm_enumerate(s, t, pattern, threshold)


def test_fswm_identical_is_zero():
    seq = "ACGTTGCAGGCTAACGGTACCATG"
    idx = _index([seq], "1100101")
    assert fswm_distance(idx, idx, threshold=0) >= 0
    # self pairs alone carry no mismatches
    ev = affuncs.FSWM(dontcare_count=3)
    assert ev.finalize(np.array([10.0, 0.0]), PairContext(4, None, None, {"dontcare_count": 3})) == 0


def test_chiaromonte_values():
    assert CHIAROMONTE[0, 0] == 91 and CHIAROMONTE[1, 2] == -125 and CHIAROMONTE[0, 2] == -31
    assert (CHIAROMONTE == CHIAROMONTE.T).all()
    assert (CHIAROMONTE[4] == -125).all()


def test_load_score_matrix(tmp_path):
    p = tmp_path / "m.txt"
    p.write_text("  A C G T\nA 1 -1 -1 -1\nC -1 1 -1 -1\nG -1 -1 1 -1\nT -1 -1 -1 1\n")
    m = affuncs.load_score_matrix(str(p))
    assert m[0, 0] == 1 and m[0, 1] == -1
