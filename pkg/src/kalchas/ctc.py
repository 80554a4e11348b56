"""Connectionist Temporal Classification: exact log-space loss/gradient,
feasibility, greedy decoding, and prefix beam search.

Logit sequences are (T, C) arrays of log-probabilities (post log-softmax)
with the blank at class 0. The loss gradient is reported with respect to
the pre-softmax logits (softmax(z) minus the alignment posterior), so its
rows sum to zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .charset import Charset

NEG_INF = -np.inf


class CtcError(ValueError):
    pass


class InfeasibleTargetError(CtcError):
    pass


@dataclass
class CtcResult:
    loss: float
    grad: np.ndarray  # (T, C), d(loss)/d(pre-softmax logits)


def ctc_feasible(t_len: int, target: list[int]) -> bool:
    """True iff t_len frames can emit the target (repeats need a blank)."""
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return t_len >= len(target) + repeats


def _check_normalized(log_probs: np.ndarray) -> None:
    row_sums = np.logaddexp.reduce(log_probs, axis=1)
    if np.max(np.abs(row_sums)) > 1e-6:
        raise CtcError("logit rows are not normalized log-probabilities")


def ctc_loss(log_probs: np.ndarray, target: list[int]) -> CtcResult:
    """Exact CTC negative log-likelihood and gradient via alpha/beta."""
    t_len, n_classes = log_probs.shape
    if any(not 1 <= k < n_classes for k in target):
        raise CtcError("target contains indices outside [1, C-1]")
    if not ctc_feasible(t_len, target):
        raise InfeasibleTargetError(
            f"target of length {len(target)} (with repeats) does not fit in {t_len} frames"
        )
    _check_normalized(log_probs)

    # Blank-extended label: blank, l1, blank, l2, ..., blank.
    ext = np.zeros(2 * len(target) + 1, dtype=np.int64)
    ext[1::2] = target
    s_len = ext.size
    # Positions allowed to skip from s-2: non-blank and different from s-2.
    can_skip = np.zeros(s_len, dtype=bool)
    for s in range(2, s_len):
        can_skip[s] = ext[s] != 0 and ext[s] != ext[s - 2]

    emit = log_probs[:, ext]  # (T, S)

    alpha = np.full((t_len, s_len), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if s_len > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, t_len):
        stay = alpha[t - 1]
        prev = np.full(s_len, NEG_INF)
        prev[1:] = alpha[t - 1, :-1]
        acc = np.logaddexp(stay, prev)
        skip = np.full(s_len, NEG_INF)
        skip[2:] = alpha[t - 1, :-2]
        skip = np.where(can_skip, skip, NEG_INF)
        alpha[t] = np.logaddexp(acc, skip) + emit[t]

    tail = alpha[t_len - 1, s_len - 1]
    if s_len > 1:
        tail = np.logaddexp(tail, alpha[t_len - 1, s_len - 2])
    log_z = tail
    if not np.isfinite(log_z):
        raise InfeasibleTargetError("no feasible alignment (zero-probability path)")

    # beta[t, s]: log-prob of completing from state s after emitting at t,
    # i.e. emissions at t+1..T-1 only.
    beta = np.full((t_len, s_len), NEG_INF)
    beta[t_len - 1, s_len - 1] = 0.0
    if s_len > 1:
        beta[t_len - 1, s_len - 2] = 0.0
    for t in range(t_len - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        stay = nxt
        fwd = np.full(s_len, NEG_INF)
        fwd[:-1] = nxt[1:]
        acc = np.logaddexp(stay, fwd)
        skip = np.full(s_len, NEG_INF)
        skip[:-2] = np.where(can_skip[2:], nxt[2:], NEG_INF)
        beta[t] = np.logaddexp(acc, skip)

    # Posterior over classes per frame.
    occupancy = np.exp(alpha + beta - log_z)  # (T, S)
    posterior = np.zeros_like(log_probs)
    np.add.at(posterior.T, ext, occupancy.T)
    grad = np.exp(log_probs) - posterior
    return CtcResult(loss=float(-log_z), grad=grad)


def greedy_decode(log_probs: np.ndarray, cs: Charset) -> tuple[str, float]:
    """Best path decoding: argmax, collapse repeats, drop blanks."""
    path = log_probs.argmax(axis=1)
    picked = log_probs[np.arange(len(path)), path]
    indices = collapse_path(path.tolist())
    confidence = float(np.exp(picked.mean())) if len(path) else 1.0
    return cs.decode(indices), confidence


def collapse_path(path: list[int]) -> list[int]:
    """Merge adjacent repeats, then remove blanks."""
    out = []
    prev = None
    for k in path:
        if k != prev and k != 0:
            out.append(k)
        prev = k
    return out


def beam_decode(
    log_probs: np.ndarray, cs: Charset, beam_width: int
) -> list[tuple[str, float]]:
    """Prefix beam search merging prefixes that collapse identically.

    Returns hypotheses as (text, log_prob) sorted by probability descending,
    ties broken lexicographically by text.
    """
    if beam_width < 1:
        raise CtcError("beam_width must be >= 1")
    t_len, n_classes = log_probs.shape
    # prefix -> (log p ending in blank, log p ending in non-blank)
    beams: dict[tuple[int, ...], tuple[float, float]] = {(): (0.0, NEG_INF)}
    for t in range(t_len):
        row = log_probs[t]
        new: dict[tuple[int, ...], list[float]] = {}

        def add(prefix, kind, lp):
            pb, pnb = new.setdefault(prefix, [NEG_INF, NEG_INF])
            slot = 0 if kind == "b" else 1
            new[prefix][slot] = np.logaddexp(new[prefix][slot], lp)

        for prefix, (pb, pnb) in beams.items():
            total = np.logaddexp(pb, pnb)
            # Emit blank: prefix unchanged, now blank-ended.
            add(prefix, "b", total + row[0])
            # Repeat last char without separating blank: extends nothing.
            if prefix:
                add(prefix, "nb", pnb + row[prefix[-1]])
            for k in range(1, n_classes):
                lp_k = row[k]
                if prefix and prefix[-1] == k:
                    # Needs a blank-ended prefix to start a new copy.
                    add(prefix + (k,), "nb", pb + lp_k)
                else:
                    add(prefix + (k,), "nb", total + lp_k)

        scored = sorted(
            new.items(),
            key=lambda kv: (-np.logaddexp(kv[1][0], kv[1][1]), cs.decode(list(kv[0]))),
        )
        beams = {p: (v[0], v[1]) for p, v in scored[:beam_width]}

    results = [
        (cs.decode(list(p)), float(np.logaddexp(pb, pnb)))
        for p, (pb, pnb) in beams.items()
    ]
    results.sort(key=lambda r: (-r[1], r[0]))
    return results
