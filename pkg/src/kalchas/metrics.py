"""Character/Word Error Rate and alignment-based confusion pairs.

Rates are pooled over the corpus: total edit distance divided by total
reference length, not a mean of per-line rates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

MATCH = "match"
SUB = "sub"
DEL = "del"
INS = "ins"


class MetricsError(ValueError):
    pass


def edit_distance(ref, hyp):
    """Levenshtein distance with one optimal alignment.

    Returns (distance, ops) where ops are (kind, ref_index, hyp_index)
    tuples; the absent side of del/ins is -1. When several moves are
    optimal the preference is match > substitution > deletion > insertion.
    """
    n, m = len(ref), len(hyp)
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dist[i][0] = i
    for j in range(1, m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        row = dist[i]
        prev = dist[i - 1]
        r = ref[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (r != hyp[j - 1])
            up = prev[j] + 1
            left = row[j - 1] + 1
            row[j] = min(diag, up, left)

    ops = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i][j] == dist[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            kind = MATCH if ref[i - 1] == hyp[j - 1] else SUB
            ops.append((kind, i - 1, j - 1))
            i -= 1
            j -= 1
        elif i > 0 and dist[i][j] == dist[i - 1][j] + 1:
            ops.append((DEL, i - 1, -1))
            i -= 1
        else:
            ops.append((INS, -1, j - 1))
            j -= 1
    ops.reverse()
    return dist[n][m], ops


def _check_corpora(refs, hyps):
    if len(refs) != len(hyps):
        raise MetricsError(f"{len(refs)} references vs {len(hyps)} hypotheses")


def cer(refs: list[str], hyps: list[str]) -> float:
    _check_corpora(refs, hyps)
    total_ref = sum(len(r) for r in refs)
    if total_ref == 0:
        raise MetricsError("empty reference corpus")
    total_dist = sum(edit_distance(r, h)[0] for r, h in zip(refs, hyps))
    return total_dist / total_ref


def _tokens(s: str) -> list[str]:
    return s.split()


def wer(refs: list[str], hyps: list[str]) -> float:
    _check_corpora(refs, hyps)
    ref_tok = [_tokens(r) for r in refs]
    hyp_tok = [_tokens(h) for h in hyps]
    total_ref = sum(len(r) for r in ref_tok)
    if total_ref == 0:
        raise MetricsError("empty reference corpus (no tokens)")
    total_dist = sum(edit_distance(r, h)[0] for r, h in zip(ref_tok, hyp_tok))
    return total_dist / total_ref


def confusion_pairs(refs, hyps, top_k=20):
    """Substitution pairs from optimal alignments, most frequent first."""
    _check_corpora(refs, hyps)
    counts: dict[tuple[str, str], int] = {}
    for r, h in zip(refs, hyps):
        _, ops = edit_distance(r, h)
        for kind, ri, hi in ops:
            if kind == SUB:
                pair = (r[ri], h[hi])
                counts[pair] = counts.get(pair, 0) + 1
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [(ref_c, hyp_c, n) for (ref_c, hyp_c), n in ordered[:top_k]]


@dataclass
class EvalReport:
    cer: float
    wer: float
    n_lines: int
    n_chars: int
    n_words: int
    confusion: list[tuple[str, str, int]] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "cer": self.cer,
                "wer": self.wer,
                "n_lines": self.n_lines,
                "n_chars": self.n_chars,
                "n_words": self.n_words,
                "confusion": [
                    {"ref": r, "hyp": h, "count": n} for r, h, n in self.confusion
                ],
            },
            ensure_ascii=False,
            indent=2,
        )

    def to_text(self) -> str:
        lines = [
            f"lines: {self.n_lines}",
            f"CER: {self.cer * 100:.2f}%",
            f"WER: {self.wer * 100:.2f}%",
            "",
            "Pair 1\tPair 2\tCount",
        ]
        for r, h, n in self.confusion:
            lines.append(f"{r}\t{h}\t{n}")
        return "\n".join(lines)


def evaluate(refs: list[str], hyps: list[str], top_k: int = 20) -> EvalReport:
    return EvalReport(
        cer=cer(refs, hyps),
        wer=wer(refs, hyps),
        n_lines=len(refs),
        n_chars=sum(len(r) for r in refs),
        n_words=sum(len(_tokens(r)) for r in refs),
        confusion=confusion_pairs(refs, hyps, top_k),
    )
