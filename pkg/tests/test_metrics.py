import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cccvln.metrics import bleu, cider_lite, corpus_bleu, lcs_length, nav_metrics, nav_result, rouge_l
from cccvln.world import World, generate_world, sample_path


def open_world(width=3, height=2):
    n = width * height
    nav = np.zeros((n, 4), bool)
    for node in range(n):
        x, y = node % width, node // width
        nav[node] = [y > 0, x < width - 1, y < height - 1, x > 0]
    return World("hand", width, height, np.zeros((n, 4), np.int64), nav)


# -- hand-computed BLEU ------------------------------------------------------

def test_bleu_precisions_by_hand():
    cand, ref = list("abcd"), list("abce")
    # p1 = 3/4, p2 = 2/3, p3 = 1/2, p4 = 0
    assert bleu(cand, [ref], 2) == pytest.approx(math.sqrt(0.75 * 2 / 3), abs=1e-12)
    assert bleu(cand, [ref], 3) == pytest.approx(0.25 ** (1 / 3), abs=1e-12)
    assert bleu(cand, [ref], 4) == 0.0


def test_bleu_brevity_penalty_by_hand():
    assert bleu(list("ab"), [list("abcd")], 2) == pytest.approx(math.exp(-1.0), abs=1e-12)


def test_bleu_clips_repeated_words():
    assert bleu(["the"] * 3, [["the", "cat"]], 1) == pytest.approx(1 / 3, abs=1e-12)


def test_bleu_uses_closest_reference_length():
    # c = 3, references of length 2 and 5: r = 2, no penalty
    assert bleu(list("abc"), [list("ab"), list("abcde")], 1) == pytest.approx(1.0, abs=1e-12)


def test_corpus_bleu_pools_counts():
    cands = [list("ab"), list("c")]
    refs = [[list("ab")], [list("cde")]]
    # unigram hits 3 / 3; c = 3, r = 5
    assert corpus_bleu(cands, refs, 1) == pytest.approx(math.exp(1 - 5 / 3), abs=1e-12)


def test_bleu_errors():
    with pytest.raises(ValueError):
        bleu(["a"], [], 1)
    with pytest.raises(ValueError):
        corpus_bleu([], [], 1)


# -- ROUGE-L -----------------------------------------------------------------

def test_rouge_l_by_hand():
    cand, ref = list("abcd"), list("acdef")
    assert lcs_length(cand, ref) == 3
    p, r, b2 = 3 / 4, 3 / 5, 1.2 ** 2
    assert rouge_l(cand, [ref]) == pytest.approx((1 + b2) * p * r / (r + b2 * p), abs=1e-12)
    assert rouge_l(cand, [ref]) == pytest.approx(1.098 / 1.68, abs=1e-12)
    assert rouge_l(list("xy"), [list("ab")]) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 3), max_size=8), st.lists(st.integers(0, 3), max_size=8))
def test_lcs_is_symmetric_and_bounded(a, b):
    n = lcs_length(a, b)
    assert n == lcs_length(b, a) and n <= min(len(a), len(b))


# -- CIDEr-lite --------------------------------------------------------------

def test_cider_by_hand():
    # unigram only: both grams have idf log 2; candidate 1 matches its reference exactly
    assert cider_lite([["a"], ["b"]], [[["a"]], [["c"]]], n=1) == pytest.approx([10.0, 0.0], abs=1e-12)
    # with n = 4 the empty higher-order vectors contribute zero cosine
    assert cider_lite([["a"], ["b"]], [[["a"]], [["c"]]]) == pytest.approx([2.5, 0.0], abs=1e-12)


def test_cider_ignores_grams_in_every_reference():
    # "a" appears in both reference sets, so its idf is 0 and only the second word counts
    scores = cider_lite([list("ax"), list("ay")], [[list("ax")], [list("az")]], n=2)
    assert scores == pytest.approx([10.0, 0.0], abs=1e-12)


def test_cider_needs_a_corpus():
    with pytest.raises(ValueError):
        cider_lite([["a"]], [[["a"]]])


# -- navigation ----------------------------------------------------------------

def test_nav_metrics_by_hand():
    w = open_world()
    goal = 2
    res = [nav_result(w, t, goal) for t in ([0, 1, 2], [0, 3, 4, 1, 2], [0, 1, 2, 5], [3])]
    m = nav_metrics(res, radius=0)
    assert m == pytest.approx({"SR": 0.5, "NE": 1.0, "OR": 0.75, "SPL": (1 + 0.5) / 4}, abs=1e-12)
    m1 = nav_metrics(res, radius=1)
    assert m1["SR"] == 0.75


def test_repeated_nodes_do_not_count_as_length():
    w = open_world()
    r = nav_result(w, [0, 0, 1, 1, 2], 2)
    assert r.length == 2 and nav_metrics([r], 0)["SPL"] == 1.0


def test_oracle_policy_scores_perfectly():
    w = generate_world(3, 5, 5, 0.1)
    res = []
    for k in range(20):
        p = sample_path(w, k, 2, 5)
        res.append(nav_result(w, p.nodes, p.nodes[-1]))
    m = nav_metrics(res)
    assert m["SR"] == 1.0 and m["SPL"] == 1.0 and m["NE"] == 0.0


def test_empty_batch_is_an_error():
    with pytest.raises(ValueError):
        nav_metrics([])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 1000), st.lists(st.lists(st.integers(0, 3), min_size=0, max_size=8), min_size=1, max_size=10),
       st.integers(0, 2))
def test_spl_le_sr_le_or(seed, walks, radius):
    w = generate_world(seed, 4, 4, 0.1)
    rng = np.random.default_rng(seed)
    res = []
    for moves in walks:
        node = int(rng.integers(w.n_nodes))
        nodes = [node]
        for d in moves:
            nxt = w.neighbor(nodes[-1], d)
            if nxt is not None:
                nodes.append(nxt)
        res.append(nav_result(w, nodes, int(rng.integers(w.n_nodes))))
    m = nav_metrics(res, radius)
    assert m["SPL"] <= m["SR"] + 1e-12 and m["SR"] <= m["OR"] + 1e-12
