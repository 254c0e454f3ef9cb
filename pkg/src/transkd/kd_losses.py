"""Distillation losses between teacher and student transducer outputs.

Every loss comes in two flavours: a plain-numpy function returning the
value together with exact gradients w.r.t. the student-side inputs, and a
``*_graph`` variant operating on autograd tensors for use inside training
graphs.  The numpy versions are thin wrappers over the graph versions, so
there is a single implementation of each formula.

Conventions shared by all cross-entropies here: 0 * log 0 := 0, and
student log probabilities are clamped at -80 before being multiplied by
teacher mass, so one-hot teachers always yield finite losses.

The time-shift ``tau`` delays the student relative to the teacher: student
frame (or lattice column) t + tau is matched against teacher frame t, and
the trailing tau teacher frames, which have no student counterpart, drop
out of the sum.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .autograd import Tensor, concat
from .errors import NormalizationError, ShapeMismatchError
from .lattice import BLANK, Alignment, DistributionLattice, LabelSequence

LOG_FLOOR = -80.0

__all__ = [
    "EmbeddingSequence",
    "CollapsedLattice",
    "KDWeights",
    "full_lattice_kd",
    "full_lattice_kd_graph",
    "collapse",
    "collapse_graph",
    "collapsed_kd",
    "collapsed_kd_graph",
    "one_best_kd",
    "one_best_kd_graph",
    "embedding_kd",
    "embedding_kd_graph",
    "EmbeddingKDResult",
    "nbest_kd",
    "nbest_kd_graph",
    "final_loss",
    "final_loss_graph",
]


@dataclass(frozen=True)
class EmbeddingSequence:
    """A (T, D) matrix of encoder embeddings."""

    frames: np.ndarray

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        object.__setattr__(self, "frames", frames)
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise ShapeMismatchError(f"embeddings must be (T>=1, D>=1), got shape {frames.shape}")
        if not np.isfinite(frames).all():
            raise ShapeMismatchError("embeddings must be finite")

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def D(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class CollapsedLattice:
    """(T, U+1, 3) linear-domain buckets: p(correct y_{u+1}), p(blank), p(rest)."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 3 or values.shape[2] != 3:
            raise ShapeMismatchError(f"collapsed lattice must be (T, U+1, 3), got {values.shape}")
        if (values < 0).any():
            raise NormalizationError("collapsed buckets must be non-negative")
        worst = float(np.abs(values.sum(axis=-1) - 1.0).max())
        if worst > 1e-6:
            raise NormalizationError(f"collapsed buckets must sum to 1 (max deviation {worst:.3g})")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def U(self) -> int:
        return self.values.shape[1] - 1


@dataclass(frozen=True)
class KDWeights:
    """Hyperparameters of the combined distillation loss."""

    tau: int = 0
    lam: float = 0.0
    omegas: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        object.__setattr__(self, "omegas", tuple(float(w) for w in self.omegas))
        if self.tau < 0:
            raise ValueError("time shift tau must be >= 0")
        if self.lam < 0:
            raise ValueError("interpolation coefficient must be >= 0")
        if any(w < 0 for w in self.omegas):
            raise NormalizationError("per-teacher weights must be >= 0")
        if abs(sum(self.omegas) - 1.0) > 1e-9:
            raise NormalizationError(f"per-teacher weights must sum to 1, got {sum(self.omegas)!r}")


def _require_same_shape(a, b, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{what} shapes differ: {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# full-lattice KL / cross-entropy
# ---------------------------------------------------------------------------

def full_lattice_kd_graph(teacher: DistributionLattice, student_logz: Tensor) -> Tensor:
    """Cross-entropy between the teacher lattice and the student log lattice,
    summed over every (t, u) node and vocabulary entry."""
    _require_same_shape(teacher.log_values, student_logz.data, "lattice")
    return -(Tensor(teacher.probs) * student_logz.clamp_min(LOG_FLOOR)).sum()


def full_lattice_kd(teacher: DistributionLattice, student: DistributionLattice) -> tuple[float, np.ndarray]:
    """Returns the loss and its gradient w.r.t. the student log values."""
    s = Tensor(student.log_values, requires_grad=True)
    loss = full_lattice_kd_graph(teacher, s)
    loss.backward()
    return loss.item(), s.grad


# ---------------------------------------------------------------------------
# collapsed 3-bucket variant
# ---------------------------------------------------------------------------

def _bucket_masks(T: int, U: int, V: int, tokens: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
    """Per-node indicator masks for the correct-symbol and rest buckets."""
    correct = np.zeros((T, U + 1, V))
    rest = np.ones((T, U + 1, V))
    rest[:, :, BLANK] = 0.0
    for u, tok in enumerate(tokens):
        correct[:, u, tok] = 1.0
        rest[:, u, tok] = 0.0
    # row u = U has no next label; its correct bucket stays identically zero
    return correct, rest


def collapse_graph(student_logz: Tensor, y: LabelSequence) -> Tensor:
    """Differentiable collapse of a log lattice into the 3 linear buckets."""
    T, U1, V = student_logz.data.shape
    correct_mask, rest_mask = _bucket_masks(T, U1 - 1, V, y.tokens)
    probs = student_logz.exp()
    correct = (probs * Tensor(correct_mask)).sum(axis=-1, keepdims=True)
    blank = probs[:, :, BLANK : BLANK + 1]
    rest = (probs * Tensor(rest_mask)).sum(axis=-1, keepdims=True)
    return concat([correct, blank, rest], axis=2)


def collapse(lattice: DistributionLattice, y: LabelSequence) -> CollapsedLattice:
    """3-way bucketing of each node: correct next symbol, blank, all others."""
    if len(y) != lattice.U:
        raise ShapeMismatchError(f"labels have length {len(y)} but lattice expects U = {lattice.U}")
    y.validate_vocab(lattice.V)
    vals = collapse_graph(Tensor(lattice.log_values), y)
    return CollapsedLattice(vals.data)


def collapsed_kd_graph(teacher: CollapsedLattice, student_values: Tensor) -> Tensor:
    _require_same_shape(teacher.values, student_values.data, "collapsed lattice")
    return -(Tensor(teacher.values) * student_values.clamped_log(LOG_FLOOR)).sum()


def collapsed_kd(teacher: CollapsedLattice, student: CollapsedLattice) -> tuple[float, np.ndarray]:
    """Cross-entropy over the 3 buckets; gradient w.r.t. the student buckets."""
    s = Tensor(student.values, requires_grad=True)
    loss = collapsed_kd_graph(teacher, s)
    loss.backward()
    return loss.item(), s.grad


# ---------------------------------------------------------------------------
# 1-best alignment KD with time shift
# ---------------------------------------------------------------------------

def one_best_kd_graph(
    teacher: DistributionLattice,
    student_logz: Tensor,
    path: Alignment,
    tau: int = 0,
) -> Tensor:
    """Cross-entropy restricted to the path nodes; the student column is read
    at frame t + tau, and nodes shifted past the last frame drop out."""
    _require_same_shape(teacher.log_values, student_logz.data, "lattice")
    if tau < 0:
        raise ValueError("time shift tau must be >= 0")
    path.validate(teacher.T, teacher.U)
    T = teacher.T
    kept = [(t, u) for t, u, _ in path.steps if t + tau < T]
    if not kept:
        warnings.warn(f"time shift {tau} leaves no overlapping path nodes; loss is 0", stacklevel=2)
        return student_logz.sum() * 0.0
    t_idx = np.array([t for t, _ in kept])
    u_idx = np.array([u for _, u in kept])
    teacher_rows = teacher.probs[t_idx, u_idx, :]
    student_rows = student_logz[t_idx + tau, u_idx]
    return -(Tensor(teacher_rows) * student_rows.clamp_min(LOG_FLOOR)).sum()


def one_best_kd(
    teacher: DistributionLattice,
    student: DistributionLattice,
    path: Alignment,
    tau: int = 0,
) -> tuple[float, np.ndarray]:
    """Returns the loss and its gradient w.r.t. the student log values."""
    s = Tensor(student.log_values, requires_grad=True)
    loss = one_best_kd_graph(teacher, s, path, tau)
    loss.backward()
    grad = s.grad if s.grad is not None else np.zeros_like(s.data)
    return loss.item(), grad


# ---------------------------------------------------------------------------
# embedding regression KD with time shift
# ---------------------------------------------------------------------------

class EmbeddingKDResult(NamedTuple):
    value: float
    frame_grad: np.ndarray
    weight_grad: np.ndarray
    bias_grad: np.ndarray


def embedding_kd_graph(
    student_frames: Tensor,
    teacher: EmbeddingSequence,
    lossnet,
    dist: str = "l1",
    tau: int = 0,
) -> Tensor:
    """Frame-wise regression of projected student embeddings onto the teacher.

    Student frame t + tau is matched to teacher frame t for t = 1 .. T - tau;
    the distance is summed over embedding dimensions and the total divided by
    T (the full frame count, not T - tau).  ``dist`` is "l1" (absolute) or
    "l2" (squared differences).
    """
    T = student_frames.data.shape[0]
    if teacher.T != T:
        raise ShapeMismatchError(f"student has {T} frames, teacher has {teacher.T}")
    if not 0 <= tau < T:
        raise ValueError(f"time shift must satisfy 0 <= tau < T, got tau={tau}, T={T}")
    proj = lossnet.apply_graph(student_frames[tau:, :])
    if proj.data.shape[1] != teacher.D:
        raise ShapeMismatchError(
            f"projection maps to dimension {proj.data.shape[1]}, teacher has {teacher.D}"
        )
    diff = proj - Tensor(teacher.frames[: T - tau])
    if dist == "l1":
        total = diff.abs().sum()
    elif dist == "l2":
        total = (diff * diff).sum()
    else:
        raise ValueError(f"unknown distance {dist!r}; expected 'l1' or 'l2'")
    return total / T


def embedding_kd(
    student: EmbeddingSequence,
    teacher: EmbeddingSequence,
    lossnet,
    dist: str = "l1",
    tau: int = 0,
) -> EmbeddingKDResult:
    """Returns the loss with gradients w.r.t. student frames and the lossnet."""
    frames = Tensor(student.frames, requires_grad=True)
    w, b = lossnet.weight, lossnet.bias
    w_req, b_req = w.requires_grad, b.requires_grad
    w.requires_grad = b.requires_grad = True
    w.grad = b.grad = None
    try:
        loss = embedding_kd_graph(frames, teacher, lossnet, dist, tau)
        loss.backward()
    finally:
        w.requires_grad, b.requires_grad = w_req, b_req
    return EmbeddingKDResult(loss.item(), frames.grad, w.grad.copy(), b.grad.copy())


# ---------------------------------------------------------------------------
# combination losses
# ---------------------------------------------------------------------------

def nbest_kd(per_teacher_losses: Sequence[float], weights: KDWeights) -> float:
    """Weighted sum of the per-teacher 1-best losses."""
    if len(per_teacher_losses) != len(weights.omegas):
        raise ShapeMismatchError(
            f"{len(per_teacher_losses)} losses but {len(weights.omegas)} weights"
        )
    if len(per_teacher_losses) == 1:
        return float(per_teacher_losses[0])  # exact degeneracy for a single teacher
    return float(sum(w * l for w, l in zip(weights.omegas, per_teacher_losses)))


def nbest_kd_graph(per_teacher_losses: Sequence[Tensor], weights: KDWeights) -> Tensor:
    if len(per_teacher_losses) != len(weights.omegas):
        raise ShapeMismatchError(
            f"{len(per_teacher_losses)} losses but {len(weights.omegas)} weights"
        )
    if len(per_teacher_losses) == 1:
        return per_teacher_losses[0]
    out = per_teacher_losses[0] * weights.omegas[0]
    for w, l in zip(weights.omegas[1:], per_teacher_losses[1:]):
        out = out + l * w
    return out


def final_loss(rnnt: float, nbest: float, lam: float) -> float:
    """Transducer loss plus lam times the alignment-KD loss."""
    if lam < 0:
        raise ValueError("interpolation coefficient must be >= 0")
    if lam == 0:
        return float(rnnt)
    return float(rnnt + lam * nbest)


def final_loss_graph(rnnt: Tensor, nbest: Tensor | None, lam: float) -> Tensor:
    if lam < 0:
        raise ValueError("interpolation coefficient must be >= 0")
    if lam == 0 or nbest is None:
        return rnnt
    return rnnt + nbest * lam
