"""Time-synchronous decoding for transducer-style models.

Models plug in through three duck-typed methods:

    decode_start() -> state            # predictor state for the empty prefix
    decode_step(state, token) -> state # advance the predictor by one token
    joint_log_probs(frame, state) -> (V,) log distribution over the vocab

The search walks the encoder output frame by frame.  Within a frame every
live hypothesis is expanded over all symbols; a blank parks the hypothesis
at the next frame, a label keeps it at the current one.  After each
expansion round the pooled candidates (parked + live) are pruned to the
beam width, so ``beam=1`` reduces exactly to greedy decoding.  Ties break
toward the lexicographically smaller token sequence, which prefers blank
over any label and lower token indices among labels.

The greedy trajectory is always kept as a fallback candidate, making the
returned score monotone in the beam width.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import BLANK, LabelSequence

__all__ = ["DecodeResult", "beam_search_decode", "greedy_decode"]

# labels emitted within one frame before expansion is cut off
MAX_SYMBOLS_PER_FRAME = 8


@dataclass(frozen=True)
class DecodeResult:
    labels: LabelSequence
    score: float


class _Hyp:
    __slots__ = ("yseq", "score", "state", "pending")

    def __init__(self, yseq, score, state, pending=None):
        self.yseq = yseq
        self.score = score
        self.state = state
        self.pending = pending  # (parent_state, token) not yet pushed through the predictor

    def materialize(self, model):
        if self.pending is not None:
            self.state = model.decode_step(*self.pending)
            self.pending = None
        return self


def _sort_key(h: _Hyp):
    return (-h.score, h.yseq)


def _dedupe_best(hyps: list[_Hyp]) -> list[_Hyp]:
    # Viterbi merge: identical prefixes keep only the best-scoring copy.
    # A parked hypothesis (blank taken, pending is None) and a live one with
    # the same prefix sit at different search positions and never merge.
    best: dict[tuple, _Hyp] = {}
    for h in hyps:
        key = (h.yseq, h.pending is None)
        cur = best.get(key)
        if cur is None or h.score > cur.score:
            best[key] = h
    return list(best.values())


def greedy_decode(encoder_out, model, max_symbols: int = MAX_SYMBOLS_PER_FRAME) -> DecodeResult:
    """Follow the locally best symbol at every expansion step."""
    frames = np.asarray(encoder_out.frames)
    state = model.decode_start()
    yseq: tuple[int, ...] = ()
    score = 0.0
    for t in range(frames.shape[0]):
        for _ in range(max_symbols):
            logp = model.joint_log_probs(frames[t], state)
            k = int(np.argmax(logp))
            # argmax takes the lowest index on ties: blank first, then lowest token
            if k == BLANK:
                break
            yseq = yseq + (k,)
            score += float(logp[k])
            state = model.decode_step(state, k)
        else:
            logp = model.joint_log_probs(frames[t], state)
        score += float(logp[BLANK])
    return DecodeResult(LabelSequence(yseq), score)


def beam_search_decode(
    encoder_out,
    model,
    beam: int,
    max_symbols: int = MAX_SYMBOLS_PER_FRAME,
) -> DecodeResult:
    """Time-synchronous Viterbi beam search over the joint output.

    Deterministic for fixed inputs: candidates are ordered by score and the
    tie-break is lexicographic in the token sequence.
    """
    if beam < 1:
        raise ValueError(f"beam width must be >= 1, got {beam}")
    frames = np.asarray(encoder_out.frames)
    live = [_Hyp((), 0.0, model.decode_start())]
    for t in range(frames.shape[0]):
        parked: list[_Hyp] = []
        for _ in range(max_symbols):
            if not live:
                break
            candidates = [_Hyp(h.yseq, h.score, h.state) for h in parked]
            for h in live:
                logp = model.joint_log_probs(frames[t], h.state)
                candidates.append(_Hyp(h.yseq, h.score + float(logp[BLANK]), h.state))
                for k in range(1, logp.shape[0]):
                    candidates.append(
                        _Hyp(h.yseq + (k,), h.score + float(logp[k]), None, pending=(h.state, k))
                    )
            survivors = sorted(_dedupe_best(candidates), key=_sort_key)[:beam]
            live = [h.materialize(model) for h in survivors if h.pending is not None]
            parked = [h for h in survivors if h.pending is None]
        else:
            # expansion budget exhausted: park the stragglers via a blank
            for h in live:
                logp = model.joint_log_probs(frames[t], h.state)
                parked.append(_Hyp(h.yseq, h.score + float(logp[BLANK]), h.state))
            parked = sorted(_dedupe_best(parked), key=_sort_key)[:beam]
        live = parked
    greedy = greedy_decode(encoder_out, model, max_symbols)
    finals = _dedupe_best(live + [_Hyp(greedy.labels.tokens, greedy.score, None)])
    best = min(finals, key=_sort_key)
    return DecodeResult(LabelSequence(best.yseq), best.score)
