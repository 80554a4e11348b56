import functools
import json
import random

import pytest
from hypothesis import given, strategies as st

from kalchas.metrics import (
    INS,
    MATCH,
    MetricsError,
    cer,
    confusion_pairs,
    edit_distance,
    evaluate,
    wer,
)


def brute_distance(ref, hyp):
    """Exhaustive recursive Levenshtein definition, memoized."""

    @functools.lru_cache(maxsize=None)
    def go(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(
            go(i - 1, j - 1) + (ref[i - 1] != hyp[j - 1]),
            go(i - 1, j) + 1,
            go(i, j - 1) + 1,
        )

    return go(len(ref), len(hyp))


def test_identical():
    d, ops = edit_distance("abc", "abc")
    assert d == 0
    assert [k for k, *_ in ops] == [MATCH, MATCH, MATCH]


def test_kitten_sitting():
    d, _ = edit_distance("kitten", "sitting")
    assert d == 3


def test_empty_sides():
    assert edit_distance("", "abc")[0] == 3
    assert edit_distance("abc", "")[0] == 3
    assert edit_distance("", "")[0] == 0


def test_ops_reconstruct_hypothesis():
    ref, hyp = "γράμμα", "γρᾶμα!"
    d, ops = edit_distance(ref, hyp)
    built = [hyp[hi] for kind, _ri, hi in ops if kind != "del"]
    assert "".join(built) == hyp
    assert sum(k != MATCH for k, *_ in ops) == d


def test_random_pairs_match_recursive_oracle():
    rng = random.Random(1234)
    alphabet = "abc"
    for _ in range(1000):
        ref = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 8)))
        hyp = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 8)))
        d, ops = edit_distance(ref, hyp)
        assert d == brute_distance(ref, hyp)
        assert sum(k != MATCH for k, *_ in ops) == d


small = st.text(alphabet="αβγ", max_size=6)


@given(small, small)
def test_symmetry(a, b):
    assert edit_distance(a, b)[0] == edit_distance(b, a)[0]


@given(small, small, small)
def test_triangle_inequality(a, b, c):
    ab = edit_distance(a, b)[0]
    bc = edit_distance(b, c)[0]
    ac = edit_distance(a, c)[0]
    assert ac <= ab + bc


@given(small)
def test_identity(a):
    assert edit_distance(a, a)[0] == 0


def test_cer_identical():
    assert cer(["abc"], ["abc"]) == 0.0


def test_cer_one_third():
    assert cer(["abc"], ["axc"]) == pytest.approx(1 / 3)


def test_cer_corpus_pooled_quarter():
    assert cer(["ab", "cd"], ["ab", "xd"]) == pytest.approx(1 / 4)


def test_cer_line_order_invariant():
    refs = ["abc", "de", "fgh"]
    hyps = ["axc", "dz", "fgh"]
    assert cer(refs, hyps) == cer(list(reversed(refs)), list(reversed(hyps)))


def test_cer_errors():
    with pytest.raises(MetricsError):
        cer(["a"], [])
    with pytest.raises(MetricsError):
        cer([""], ["a"])


def test_wer_identical():
    assert wer(["τὸ ἡγεμονικὸν"], ["τὸ ἡγεμονικὸν"]) == 0.0


def test_wer_one_substituted_token():
    assert wer(["τὸ ἡγεμονικὸν"], ["τὸ ἡγεμονικόν"]) == pytest.approx(1 / 2)


def test_wer_can_exceed_one():
    assert wer(["a"], ["a b c"]) == pytest.approx(2.0)


def test_wer_matches_token_remap_oracle():
    # WER over word sequences must equal CER over the same sequences with
    # each distinct token remapped to a single character.
    rng = random.Random(7)
    vocab = ["το", "και", "εν", "ου"]
    remap = {w: chr(ord("a") + i) for i, w in enumerate(vocab)}
    for _ in range(100):
        refs, hyps = [], []
        for _line in range(3):
            refs.append(" ".join(rng.choices(vocab, k=rng.randint(1, 5))))
            hyps.append(" ".join(rng.choices(vocab, k=rng.randint(0, 5))))
        remapped_refs = ["".join(remap[w] for w in r.split()) for r in refs]
        remapped_hyps = ["".join(remap[w] for w in h.split()) for h in hyps]
        assert wer(refs, hyps) == pytest.approx(cer(remapped_refs, remapped_hyps))


def test_confusion_single_substitution():
    assert confusion_pairs(["πτ"], ["ττ"]) == [("π", "τ", 1)]


def test_confusion_identical_empty():
    assert confusion_pairs(["abc", "de"], ["abc", "de"]) == []


def test_confusion_sorted_count_then_lexicographic():
    refs = ["aa", "bb", "a"]
    hyps = ["xx", "yy", "y"]
    pairs = confusion_pairs(refs, hyps)
    assert pairs == [("a", "x", 2), ("b", "y", 2), ("a", "y", 1)]


def test_confusion_top_k_truncates():
    refs = ["abc"]
    hyps = ["xyz"]
    assert len(confusion_pairs(refs, hyps, top_k=2)) == 2


def test_substitutions_bounded_by_distance():
    rng = random.Random(99)
    for _ in range(200):
        ref = "".join(rng.choice("ab") for _ in range(rng.randint(0, 6)))
        hyp = "".join(rng.choice("ab") for _ in range(rng.randint(0, 6)))
        d, _ = edit_distance(ref, hyp)
        subs = sum(n for *_pair, n in confusion_pairs([ref], [hyp], top_k=100))
        assert subs <= d


def test_confusion_matches_bruteforce_optimal_alignments():
    # Under the fixed tie-break (match > sub > del > ins) the alignment is
    # unique; check its substitution multiset against an exhaustive search
    # over all optimal alignments.
    def all_alignments(ref, hyp):
        best, _ = edit_distance(ref, hyp)
        results = []

        def go(i, j, cost, subs):
            if cost > best:
                return
            if i == len(ref) and j == len(hyp):
                if cost == best:
                    results.append(tuple(sorted(subs)))
                return
            if i < len(ref) and j < len(hyp):
                if ref[i] == hyp[j]:
                    go(i + 1, j + 1, cost, subs)
                else:
                    go(i + 1, j + 1, cost + 1, subs + [(ref[i], hyp[j])])
            if i < len(ref):
                go(i + 1, j, cost + 1, subs)
            if j < len(hyp):
                go(i, j + 1, cost + 1, subs)

        go(0, 0, 0, [])
        return set(results)

    rng = random.Random(5)
    for _ in range(60):
        ref = "".join(rng.choice("ab") for _ in range(rng.randint(0, 6)))
        hyp = "".join(rng.choice("ab") for _ in range(rng.randint(0, 6)))
        pairs = confusion_pairs([ref], [hyp], top_k=100)
        chosen = []
        for r, h, n in pairs:
            chosen.extend([(r, h)] * n)
        assert tuple(sorted(chosen)) in all_alignments(ref, hyp)


def test_evaluate_report_json_and_text():
    report = evaluate(["πτ ab", "cd"], ["ττ ab", "cd"])
    payload = json.loads(report.to_json())
    assert payload["cer"] == pytest.approx(1 / 7)
    assert payload["n_lines"] == 2
    assert payload["confusion"] == [{"ref": "π", "hyp": "τ", "count": 1}]
    text = report.to_text()
    assert "Pair 1\tPair 2\tCount" in text
    assert "π\tτ\t1" in text
