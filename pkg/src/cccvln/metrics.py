"""Navigation metrics (SR, NE, OR, SPL) and text metrics (BLEU, ROUGE-L, CIDEr-lite)."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class NavResult:
    nodes: tuple[int, ...]  # trajectory, start first
    goal: int
    shortest: int  # geodesic(start, goal) in edges
    final_error: int  # geodesic(final, goal)
    oracle_error: int  # min over trajectory of geodesic(node, goal)

    @property
    def length(self) -> int:
        return sum(1 for a, b in zip(self.nodes, self.nodes[1:]) if a != b)


def nav_result(world, nodes, goal: int) -> NavResult:
    dist = world.distances(goal)
    nodes = tuple(int(n) for n in nodes)
    return NavResult(nodes, int(goal), int(dist[nodes[0]]), int(dist[nodes[-1]]),
                     int(min(dist[n] for n in nodes)))


def nav_metrics(results: Sequence[NavResult], radius: int = 1) -> dict[str, float]:
    """SR, OR, SPL as fractions in [0, 1]; NE in edges."""
    if not results:
        raise ValueError("nav_metrics needs at least one result")
    succ = np.array([r.final_error <= radius for r in results], dtype=float)
    ne = np.array([r.final_error for r in results], dtype=float)
    orc = np.array([r.oracle_error <= radius for r in results], dtype=float)
    spl = np.array([s * r.shortest / max(r.length, r.shortest) if max(r.length, r.shortest) > 0 else s
                    for s, r in zip(succ, results)])
    return {"SR": float(succ.mean()), "NE": float(ne.mean()), "OR": float(orc.mean()), "SPL": float(spl.mean())}


# -- text ----------------------------------------------------------------------

def ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _closest_ref_len(c: int, refs) -> int:
    return min((abs(len(r) - c), len(r)) for r in refs)[1]


def bleu(candidate: Sequence, references: Sequence[Sequence], n: int = 4) -> float:
    """Sentence BLEU: clipped n-gram precisions, geometric mean over 1..n, brevity penalty."""
    if not 1 <= n <= 4:
        raise ValueError("n must be in 1..4")
    if not references:
        raise ValueError("bleu needs at least one reference")
    c = len(candidate)
    if c == 0:
        return 0.0
    logs = 0.0
    for k in range(1, n + 1):
        cand = ngrams(candidate, k)
        total = sum(cand.values())
        if total == 0:
            return 0.0
        best: Counter = Counter()
        for ref in references:
            best |= ngrams(ref, k)
        hit = sum(min(v, best[g]) for g, v in cand.items())
        if hit == 0:
            return 0.0
        logs += math.log(hit / total) / n
    r = _closest_ref_len(c, references)
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(logs)


def corpus_bleu(candidates: Sequence[Sequence], references: Sequence[Sequence[Sequence]], n: int = 4) -> float:
    """Corpus BLEU: n-gram matches and lengths pooled over all sentences before the ratio."""
    if len(candidates) != len(references) or not candidates:
        raise ValueError("corpus_bleu needs equally many non-empty candidate and reference lists")
    hits = np.zeros(n)
    totals = np.zeros(n)
    c_len = r_len = 0
    for cand_toks, refs in zip(candidates, references):
        c_len += len(cand_toks)
        r_len += _closest_ref_len(len(cand_toks), refs)
        for k in range(1, n + 1):
            cand = ngrams(cand_toks, k)
            best: Counter = Counter()
            for ref in refs:
                best |= ngrams(ref, k)
            hits[k - 1] += sum(min(v, best[g]) for g, v in cand.items())
            totals[k - 1] += sum(cand.values())
    if c_len == 0 or np.any(hits == 0):
        return 0.0
    logp = float(np.mean(np.log(hits / totals)))
    bp = 1.0 if c_len >= r_len else math.exp(1.0 - r_len / c_len)
    return bp * math.exp(logp)


def lcs_length(a: Sequence, b: Sequence) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence, references: Sequence[Sequence], beta: float = 1.2) -> float:
    """LCS F-measure, best over references."""
    if not references:
        raise ValueError("rouge_l needs at least one reference")
    best = 0.0
    for ref in references:
        lcs = lcs_length(candidate, ref)
        if lcs == 0:
            continue
        prec = lcs / len(candidate)
        rec = lcs / len(ref)
        f = (1 + beta ** 2) * prec * rec / (rec + beta ** 2 * prec)
        best = max(best, f)
    return best


def cider_lite(candidates: Sequence[Sequence], references: Sequence[Sequence[Sequence]], n: int = 4) -> list[float]:
    """Per-candidate CIDEr: tf-idf cosine over 1..n-grams, averaged over n, times 10.

    Document frequency counts each reference set once; idf = log(N) - log(max(1, df)).
    """
    N = len(candidates)
    if N != len(references):
        raise ValueError("candidates and references differ in length")
    if N < 2:
        raise ValueError("cider_lite needs a corpus of at least 2 items for idf")
    log_n = math.log(float(N))
    df: list[Counter] = [Counter() for _ in range(n)]
    for refs in references:
        for k in range(n):
            grams = set()
            for ref in refs:
                grams.update(ngrams(ref, k + 1))
            df[k].update(grams)

    def vec(tokens, k):
        counts = ngrams(tokens, k + 1)
        total = sum(counts.values())
        if total == 0:
            return {}
        return {g: (c / total) * (log_n - math.log(max(1.0, df[k][g]))) for g, c in counts.items()}

    def cos(u, v):
        dot = sum(w * v.get(g, 0.0) for g, w in u.items())
        nu = math.sqrt(sum(w * w for w in u.values()))
        nv = math.sqrt(sum(w * w for w in v.values()))
        return 0.0 if nu == 0.0 or nv == 0.0 else dot / (nu * nv)

    scores = []
    for cand, refs in zip(candidates, references):
        total = 0.0
        for k in range(n):
            cv = vec(cand, k)
            total += sum(cos(cv, vec(ref, k)) for ref in refs) / len(refs)
        scores.append(10.0 * total / n)
    return scores
