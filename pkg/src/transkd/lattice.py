"""Transducer distribution lattices: losses, oracles, and Viterbi alignment.

A distribution lattice is the (T, U+1, V) tensor of per-node output
distributions over the vocabulary, stored in the log domain.  Node (t, u)
holds the distribution emitted after consuming t frames and outputting the
first u labels.  The blank symbol has index 0 everywhere in this package.

An alignment is a monotone path from (0, 0) to (T, U) that interleaves
exactly T blank emissions (advance t) with U label emissions (advance u)
and ends with a blank, giving C(T+U-1, U) valid paths in total.  The
transducer loss is -log of the probability summed over all of them,
computed by a forward-backward recursion; ``brute_force_loss`` recomputes
it by exhaustive enumeration and is the verification oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional, Sequence

import numpy as np

from .autograd import Tensor
from .errors import EnumerationLimitError, NormalizationError, ShapeMismatchError

BLANK = 0

# rows must log-sum-exp to 0 within this tolerance
ROW_NORM_TOL = 1e-6

# brute-force oracles refuse to enumerate more paths than this
MAX_ENUMERATED_PATHS = 10**6

__all__ = [
    "BLANK",
    "DistributionLattice",
    "LabelSequence",
    "Alignment",
    "rnnt_loss",
    "rnnt_loss_graph",
    "brute_force_loss",
    "enumerate_alignments",
    "one_best_alignment",
    "alignment_log_prob",
]


@dataclass(frozen=True)
class LabelSequence:
    """An output token sequence; never contains the blank symbol."""

    tokens: tuple[int, ...]

    def __init__(self, tokens: Sequence[int]):
        object.__setattr__(self, "tokens", tuple(int(t) for t in tokens))
        if any(t == BLANK for t in self.tokens):
            raise ShapeMismatchError("label sequences must not contain the blank symbol")
        if any(t < 0 for t in self.tokens):
            raise ShapeMismatchError("label tokens must be non-negative vocabulary indices")

    def __len__(self) -> int:
        return len(self.tokens)

    def validate_vocab(self, vocab: int) -> None:
        if any(t >= vocab for t in self.tokens):
            raise ShapeMismatchError(f"label token out of range for vocabulary of size {vocab}")


@dataclass(frozen=True)
class DistributionLattice:
    """(T, U+1, V) tensor of log-domain per-node output distributions."""

    log_values: np.ndarray

    def __post_init__(self):
        lv = np.asarray(self.log_values, dtype=np.float64)
        object.__setattr__(self, "log_values", lv)
        self.validate()

    @property
    def T(self) -> int:
        return self.log_values.shape[0]

    @property
    def U(self) -> int:
        return self.log_values.shape[1] - 1

    @property
    def V(self) -> int:
        return self.log_values.shape[2]

    def validate(self) -> None:
        lv = self.log_values
        if lv.ndim != 3:
            raise ShapeMismatchError(f"lattice must be 3-d (T, U+1, V), got shape {lv.shape}")
        if lv.shape[0] < 1 or lv.shape[1] < 1 or lv.shape[2] < 2:
            raise ShapeMismatchError(f"lattice needs T >= 1, U >= 0, V >= 2, got shape {lv.shape}")
        if np.isnan(lv).any() or (lv == np.inf).any():
            raise NormalizationError("lattice log values must not contain NaN or +inf")
        norms = _logsumexp(lv, axis=-1)
        worst = float(np.abs(norms).max())
        if worst > ROW_NORM_TOL:
            raise NormalizationError(
                f"lattice rows must be normalized distributions (max |logsumexp| = {worst:.3g})"
            )

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_values)

    @classmethod
    def from_probs(cls, values: np.ndarray) -> "DistributionLattice":
        values = np.asarray(values, dtype=np.float64)
        with np.errstate(divide="ignore"):
            return cls(np.log(values))

    @classmethod
    def random(cls, rng: np.random.Generator, T: int, U: int, V: int) -> "DistributionLattice":
        logits = rng.normal(size=(T, U + 1, V))
        return cls(logits - _logsumexp(logits, axis=-1, keepdims=True))

    @classmethod
    def uniform(cls, T: int, U: int, V: int) -> "DistributionLattice":
        return cls(np.full((T, U + 1, V), -math.log(V)))


@dataclass(frozen=True)
class Alignment:
    """One monotone lattice path; ``steps`` are (t, u, symbol) emissions."""

    steps: tuple[tuple[int, int, int], ...] = field()

    def __init__(self, steps: Sequence[tuple[int, int, int]]):
        object.__setattr__(self, "steps", tuple((int(t), int(u), int(k)) for t, u, k in steps))

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def nodes(self) -> tuple[tuple[int, int], ...]:
        return tuple((t, u) for t, u, _ in self.steps)

    def validate(self, T: int, U: int, y: Optional[LabelSequence] = None) -> None:
        """Check the path runs (0,0) -> (T,U), interleaving T blanks / U labels."""
        if len(self.steps) != T + U:
            raise ShapeMismatchError(f"alignment has {len(self.steps)} steps, expected T+U = {T + U}")
        t = u = 0
        for i, (st, su, sym) in enumerate(self.steps):
            if (st, su) != (t, u):
                raise ShapeMismatchError(f"step {i} at ({st},{su}), expected ({t},{u})")
            if sym == BLANK:
                t += 1
            else:
                if y is not None and sym != y.tokens[u]:
                    raise ShapeMismatchError(f"step {i} emits {sym}, labels say {y.tokens[u]}")
                u += 1
            if t > T or u > U:
                raise ShapeMismatchError("alignment leaves the (T, U) grid")
        if (t, u) != (T, U):
            raise ShapeMismatchError(f"alignment ends at ({t},{u}), expected ({T},{U})")
        if self.steps[-1][2] != BLANK:
            raise ShapeMismatchError("the final alignment step must be a blank")


def _logsumexp(x: np.ndarray, axis=None, keepdims: bool = False) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    return out if keepdims else np.squeeze(out, axis=axis)


def _check_pair(lattice: DistributionLattice, y: LabelSequence) -> None:
    lattice.validate()
    if len(y) != lattice.U:
        raise ShapeMismatchError(f"labels have length {len(y)} but lattice expects U = {lattice.U}")
    y.validate_vocab(lattice.V)


def _forward_backward(logz: np.ndarray, tokens: tuple[int, ...]) -> tuple[float, np.ndarray]:
    """Transducer loss and its exact gradient w.r.t. the log lattice values.

    alpha(t, u) is the log probability of reaching the node where t frames
    are consumed and u labels emitted; beta(t, u) the log probability of
    completing the path from there.  The gradient of -log P at entry
    (t, u, k) is minus the posterior mass of the corresponding edge; it is
    zero for symbols that are neither blank nor the next label.
    """
    T, U1, V = logz.shape
    U = U1 - 1
    blank = logz[:, :, BLANK]  # (T, U+1)
    if U > 0:
        label = logz[np.arange(T)[:, None], np.arange(U)[None, :], np.array(tokens)[None, :]]  # (T, U)

    neg_inf = -np.inf
    alpha = np.full((T + 1, U + 1), neg_inf)
    alpha[0, 0] = 0.0
    for t in range(T + 1):
        for u in range(U + 1):
            acc = []
            if t > 0:
                acc.append(alpha[t - 1, u] + blank[t - 1, u])
            if u > 0 and t <= T - 1:
                acc.append(alpha[t, u - 1] + label[t, u - 1])
            if acc:
                alpha[t, u] = _pairwise_lse(acc)

    beta = np.full((T + 1, U + 1), neg_inf)
    beta[T, U] = 0.0
    for t in range(T, -1, -1):
        for u in range(U, -1, -1):
            if (t, u) == (T, U):
                continue
            acc = []
            if t < T:
                acc.append(blank[t, u] + beta[t + 1, u])
            if u < U and t <= T - 1:
                acc.append(label[t, u] + beta[t, u + 1])
            if acc:
                beta[t, u] = _pairwise_lse(acc)

    log_p = beta[0, 0]
    grad = np.zeros_like(logz)
    # blank edges (t, u) -> (t+1, u)
    grad[:, :, BLANK] = -np.exp(alpha[:T, :] + blank + beta[1:, :] - log_p)
    # label edges (t, u) -> (t, u+1)
    if U > 0:
        occ = -np.exp(alpha[:T, :U] + label + beta[:T, 1:] - log_p)
        grad[np.arange(T)[:, None], np.arange(U)[None, :], np.array(tokens)[None, :]] = occ
    return float(-log_p), grad


def _pairwise_lse(vals: list[float]) -> float:
    if len(vals) == 1:
        return vals[0]
    a, b = vals
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    m = a if a > b else b
    return m + math.log(math.exp(a - m) + math.exp(b - m))


def rnnt_loss(lattice: DistributionLattice, y: LabelSequence) -> tuple[float, np.ndarray]:
    """-log P(y | X) summed over all valid alignments, plus its gradient.

    Returns ``(loss, grad)`` where ``grad`` has the lattice's shape and
    holds d(loss)/d(log_values), treating every log value as a free input.
    """
    _check_pair(lattice, y)
    return _forward_backward(lattice.log_values, y.tokens)


def rnnt_loss_graph(logz: Tensor, y: LabelSequence) -> Tensor:
    """Autograd node for the transducer loss; backward uses the DP gradient."""
    value, grad = _forward_backward(logz.data, y.tokens)

    def backward(g):
        logz._accum(g * grad)

    return Tensor._node(np.float64(value), (logz,), backward)


def enumerate_alignments(T: int, U: int, y: Optional[LabelSequence] = None) -> list[Alignment]:
    """All C(T+U-1, U) valid alignments for a (T, U) grid.

    Label steps carry tokens from ``y`` when given, else the placeholder
    token 1 (any non-blank index keeps the Alignment invariants intact).
    """
    if T < 1 or U < 0:
        raise ShapeMismatchError("enumeration needs T >= 1 and U >= 0")
    n_paths = math.comb(T + U - 1, U)
    if n_paths > MAX_ENUMERATED_PATHS:
        raise EnumerationLimitError(
            f"{n_paths} alignments exceed the oracle guard of {MAX_ENUMERATED_PATHS}; too large for oracle"
        )
    tokens = y.tokens if y is not None else tuple([1] * U)
    paths = []
    # choose which of the first T+U-1 steps are labels; the last step is always blank
    for label_positions in combinations(range(T + U - 1), U):
        label_set = set(label_positions)
        t = u = 0
        steps = []
        for i in range(T + U):
            if i in label_set:
                steps.append((t, u, tokens[u]))
                u += 1
            else:
                steps.append((t, u, BLANK))
                t += 1
        paths.append(Alignment(steps))
    return paths


def alignment_log_prob(lattice: DistributionLattice, path: Alignment) -> float:
    """Sum of log node probabilities along the path."""
    lv = lattice.log_values
    return float(sum(lv[t, u, k] for t, u, k in path.steps))


def brute_force_loss(lattice: DistributionLattice, y: LabelSequence) -> float:
    """Oracle for ``rnnt_loss``: enumerate every alignment, sum linear-domain
    path probabilities with compensated summation, return -log of the sum."""
    _check_pair(lattice, y)
    probs = lattice.probs
    total = math.fsum(
        math.prod(probs[t, u, k] for t, u, k in path.steps)
        for path in enumerate_alignments(lattice.T, lattice.U, y)
    )
    return -math.log(total)


def one_best_alignment(lattice: DistributionLattice, y: LabelSequence) -> Alignment:
    """The alignment maximizing the product of its step probabilities.

    Ties are broken by preferring the blank step (advance t first), applied
    at the earliest point of divergence: a backward Viterbi pass computes
    best-to-go scores, then a greedy forward walk picks blank on ties.
    """
    _check_pair(lattice, y)
    T, U = lattice.T, lattice.U
    lv = lattice.log_values
    blank = lv[:, :, BLANK]
    best = np.full((T + 1, U + 1), -np.inf)
    best[T, U] = 0.0
    for t in range(T, -1, -1):
        for u in range(U, -1, -1):
            if (t, u) == (T, U):
                continue
            cands = []
            if t < T:
                cands.append(blank[t, u] + best[t + 1, u])
            if u < U and t <= T - 1:
                cands.append(lv[t, u, y.tokens[u]] + best[t, u + 1])
            if cands:
                best[t, u] = max(cands)
    t = u = 0
    steps = []
    while (t, u) != (T, U):
        blank_score = blank[t, u] + best[t + 1, u] if t < T else -np.inf
        label_score = lv[t, u, y.tokens[u]] + best[t, u + 1] if (u < U and t <= T - 1) else -np.inf
        if blank_score >= label_score:
            steps.append((t, u, BLANK))
            t += 1
        else:
            steps.append((t, u, y.tokens[u]))
            u += 1
    return Alignment(steps)
