"""Training objectives over insertion actions.

Three generation-order losses share one interface: every slot loss
consumes joint log-probabilities log p(content, location) (the factorized
head supplies log p(l) + log p(c|l)) and targets the tokens of the slot's
missing span.

  * left_to_right -- supervise only the next token at the rightmost slot
    of a sampled prefix (end-of-sequence once the prefix is complete).
  * binary_tree   -- weight each span token by a softmax over its distance
    from the span center; low temperature concentrates on the center.
  * uniform       -- the temperature -> infinity limit: plain mean over
    the span (kept as an independent implementation for cross-checking).

Termination supervision comes in two regimes: slot finalization turns
every empty span into an end-of-slot target; sequence finalization drops
empty spans, except that a fully complete canvas targets end-of-sequence
at every location.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .canvas import Canvas, CanvasSample, SlotSpan, TokenSeq, slot_spans
from .vocab import EOS, EOSLOT

ORDERS = ("left_to_right", "binary_tree", "uniform")
TERMINATIONS = ("slot", "sequence")


@dataclass
class LossConfig:
    order: str = "binary_tree"
    temperature: float = 1.0
    termination: str = "slot"

    def __post_init__(self):
        if self.order not in ORDERS:
            raise ValueError(f"unknown order {self.order!r}")
        if self.termination not in TERMINATIONS:
            raise ValueError(f"unknown termination {self.termination!r}")
        if self.order == "left_to_right" and self.termination != "sequence":
            raise ValueError("left_to_right training requires sequence finalization")
        if self.order == "binary_tree" and not self.temperature > 0:
            raise ValueError("binary tree temperature must be positive")


@dataclass(frozen=True)
class SlotTarget:
    """Supervision for one slot: a weighted token span or a terminal token."""

    location: int
    kind: str  # "span" | "end_of_slot" | "end_of_sequence"
    span: SlotSpan | None = None
    weights: tuple[float, ...] = (1.0,)

    def token_ids(self, y: TokenSeq) -> tuple[int, ...]:
        if self.kind == "span":
            return tuple(y[self.span.first : self.span.last + 1])
        return (EOSLOT,) if self.kind == "end_of_slot" else (EOS,)


def span_center_distance(span: SlotSpan, i: int) -> float:
    """Distance of index i from the span center, in real arithmetic."""
    if not span.first <= i <= span.last:
        raise ValueError(f"index {i} outside span [{span.first}, {span.last}]")
    return abs((span.first + span.last) / 2.0 - i)


def slot_weights(span: SlotSpan, tau: float) -> np.ndarray:
    """Softmax weighting exp(-d/tau), normalized over the span.

    tau -> 0 concentrates on the centermost token(s); tau -> inf tends to
    uniform. Computed with max-subtraction so tiny temperatures stay finite.
    """
    if span.empty:
        raise ValueError("slot_weights needs a nonempty span")
    if not tau > 0:
        raise ValueError("temperature must be positive")
    d = np.array([span_center_distance(span, i) for i in range(span.first, span.last + 1)])
    z = -d / tau
    z -= z.max()
    e = np.exp(z)
    return e / e.sum()


def _nll_terms(logp, location: int, token_ids, weights) -> Tensor:
    rows = np.full(len(token_ids), location, dtype=np.int64)
    cols = np.asarray(token_ids, dtype=np.int64)
    picked = ad.take(logp if isinstance(logp, Tensor) else Tensor(logp), (rows, cols))
    return ad.neg(ad.tsum(ad.mul(picked, np.asarray(weights, dtype=np.float64))))


def binary_tree_slot_loss(logp, y: TokenSeq, span: SlotSpan, location: int, tau: float) -> Tensor:
    """Center-weighted sum of negative log-likelihoods over the span's tokens."""
    if span.empty:
        raise ValueError("binary_tree_slot_loss needs a nonempty span")
    w = slot_weights(span, tau)
    tokens = tuple(y[span.first : span.last + 1])
    return _nll_terms(logp, location, tokens, w)


def uniform_slot_loss(logp, y: TokenSeq, span: SlotSpan, location: int) -> Tensor:
    """Plain mean of negative log-likelihoods over the span's tokens.

    Independent of the temperature-weighted path; the two must agree in the
    tau -> infinity limit.
    """
    if span.empty:
        raise ValueError("uniform_slot_loss needs a nonempty span")
    tokens = tuple(y[span.first : span.last + 1])
    rows = np.full(len(tokens), location, dtype=np.int64)
    cols = np.asarray(tokens, dtype=np.int64)
    picked = ad.take(logp if isinstance(logp, Tensor) else Tensor(logp), (rows, cols))
    return ad.neg(ad.tmean(picked))


def full_loss(slot_losses: list) -> Tensor:
    """Arithmetic mean of the included slot losses."""
    if not slot_losses:
        raise ValueError("full_loss needs at least one slot loss")
    ts = [l if isinstance(l, Tensor) else Tensor(np.asarray(float(l))) for l in slot_losses]
    return ad.tmean(ad.stack([ad.reshape(t, ()) for t in ts]))


def build_slot_targets(y: TokenSeq, sample: CanvasSample, config: LossConfig) -> list[SlotTarget]:
    """Per-slot supervision for one sampled canvas under the configured loss."""
    spans = slot_spans(y, sample)
    complete = all(s.empty for s in spans)
    targets: list[SlotTarget] = []
    for l, span in enumerate(spans):
        if span.empty:
            if config.termination == "slot":
                targets.append(SlotTarget(location=l, kind="end_of_slot"))
            elif complete:
                targets.append(SlotTarget(location=l, kind="end_of_sequence"))
            continue
        if config.order == "uniform":
            w = np.full(len(span), 1.0 / len(span))
        else:
            w = slot_weights(span, config.temperature)
        targets.append(SlotTarget(location=l, kind="span", span=span, weights=tuple(w.tolist())))
    return targets


def left_to_right_targets(y: TokenSeq, k: int) -> list[SlotTarget]:
    """The single left-to-right target for prefix length k: (y_{k+1}, k), or EOS at |y|."""
    if not 0 <= k <= len(y):
        raise ValueError(f"prefix length {k} outside [0, {len(y)}]")
    if k == len(y):
        return [SlotTarget(location=k, kind="end_of_sequence")]
    return [SlotTarget(location=k, kind="span", span=SlotSpan(k, k), weights=(1.0,))]


def targets_loss(logp, y: TokenSeq, targets: list[SlotTarget]) -> Tensor:
    """Mean over slot-target losses for one item (single-item reference route)."""
    per_slot = [_nll_terms(logp, t.location, t.token_ids(y), t.weights) for t in targets]
    return full_loss(per_slot)


def sample_loss(logp, y: TokenSeq, sample: CanvasSample, config: LossConfig) -> Tensor:
    """Full loss of one (target, sampled canvas) pair."""
    return targets_loss(logp, y, build_slot_targets(y, sample, config))


def left_to_right_loss(model, x: TokenSeq, y: TokenSeq, k: int | None = None, rng=None) -> Tensor:
    """NLL of inserting the next token at the rightmost slot of a sampled prefix."""
    if k is None:
        if rng is None:
            raise ValueError("need either an explicit prefix length k or an rng to draw one")
        k = int(rng.integers(0, len(y) + 1))
    targets = left_to_right_targets(y, k)
    memory = model.encode(x)
    logp = model_joint_tensor(model, memory, Canvas(tuple(y[:k])))
    return targets_loss(logp, y, targets)


def model_joint_tensor(model, memory, canvas: Canvas) -> Tensor:
    """Joint log-prob Tensor (T+1, vocab) for one canvas, kept on the tape."""
    mem, src_mask = memory
    ids = np.asarray([list(canvas.tokens)], dtype=np.int64).reshape(1, len(canvas))
    H, slot_mask = model.slot_matrix_batch(mem, src_mask, ids, np.array([len(canvas)]))
    joint = model.joint_log_probs_batch(H, slot_mask)
    return ad.reshape(joint, joint.shape[1:])
