"""Optimization loop: canvas-sampled batches, Adam with warmup, checkpoints.

Each batch item pairs a source with ONE sampled canvas and its slot
targets; states are never reused across generation steps, every item is an
independent forward pass. The whole batch runs as one padded forward, and
the loss is a single weighted gather over the joint log-probs, equal to
the mean over items of the mean over each item's slot losses.

The batch rng for step t derives from (seed, t), so resuming from a
checkpoint (parameters + optimizer moments) reproduces an uninterrupted
run exactly.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from .autodiff import Tape, Tensor
from .canvas import sample_subsequence
from .losses import LossConfig, SlotTarget, build_slot_targets, left_to_right_targets
from .model import InsertionModel
from .tasks import Dataset
from .vocab import PAD


@dataclass
class TrainConfig:
    batch_size: int = 64
    steps: int = 5000
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-9
    warmup_steps: int = 200
    clip_norm: float = 1.0
    seed: int = 0
    checkpoint_interval: int = 1000
    samples_per_example: int = 1
    # items are bucketed by length into micro-batches of this size so short
    # canvases don't pay for the longest one's padding; 0 disables bucketing
    micro_batch: int = 8

    def __post_init__(self):
        for name in ("learning_rate", "adam_beta1", "adam_beta2", "adam_eps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.samples_per_example < 1:
            raise ValueError("samples_per_example must be >= 1")


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_model(cls, model: InsertionModel) -> "OptimizerState":
        return cls(
            m={k: np.zeros_like(p.data) for k, p in model.params.items()},
            v={k: np.zeros_like(p.data) for k, p in model.params.items()},
            step=0,
        )


class TrainingDiverged(RuntimeError):
    pass


def scheduled_learning_rate(config: TrainConfig, step: int) -> float:
    """Linear warmup to the base rate, then inverse-square-root decay (step is 1-based)."""
    if config.warmup_steps <= 0:
        return config.learning_rate * step**-0.5
    return config.learning_rate * min(
        step / config.warmup_steps, (config.warmup_steps / step) ** 0.5
    )


def clip_gradients(grads: dict[str, np.ndarray], clip_norm: float | None) -> float:
    """Scale all gradients so the global norm is at most clip_norm; returns the raw norm."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if clip_norm is not None and clip_norm > 0 and total > clip_norm:
        scale = clip_norm / total
        for g in grads.values():
            g *= scale
    return total


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    config: TrainConfig,
    lr: float | None = None,
) -> None:
    """Bias-corrected Adam update, in place."""
    if set(params) != set(grads):
        raise ValueError("parameter and gradient name sets differ")
    if lr is None:
        lr = config.learning_rate
    state.step += 1
    t = state.step
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p.data -= (lr / c1) * m / (np.sqrt(v / c2) + eps)


# -- batches -----------------------------------------------------------------


@dataclass
class BatchItem:
    x: tuple[int, ...]
    y: tuple[int, ...]
    canvas: tuple[int, ...]
    targets: list[SlotTarget]


def make_training_batch(
    dataset: Dataset,
    loss_config: LossConfig,
    rng: np.random.Generator,
    batch_size: int,
    samples_per_example: int = 1,
) -> list[BatchItem]:
    """Draw examples (with replacement) and one sampled canvas per item."""
    if not dataset:
        raise ValueError("empty dataset")
    n_examples = max(1, batch_size // samples_per_example)
    idx = rng.integers(0, len(dataset), size=n_examples)
    items: list[BatchItem] = []
    for i in idx:
        x, y = dataset[int(i)]
        for _ in range(samples_per_example):
            if loss_config.order == "left_to_right":
                k = int(rng.integers(0, len(y) + 1))
                items.append(BatchItem(x, y, tuple(y[:k]), left_to_right_targets(y, k)))
            else:
                sample = sample_subsequence(y, rng)
                targets = build_slot_targets(y, sample, loss_config)
                items.append(BatchItem(x, y, sample.canvas.tokens, targets))
    return items


def batch_loss(model: InsertionModel, batch: list[BatchItem]) -> Tensor:
    """Single padded forward over the batch; mean over items of their full losses."""
    B = len(batch)
    src_len = np.array([len(it.x) for it in batch], dtype=np.int64)
    can_len = np.array([len(it.canvas) for it in batch], dtype=np.int64)
    S = max(1, int(src_len.max()))
    C = int(can_len.max())
    src = np.full((B, S), PAD, dtype=np.int64)
    canvas = np.full((B, C), PAD, dtype=np.int64)
    for b, it in enumerate(batch):
        src[b, : len(it.x)] = it.x
        canvas[b, : len(it.canvas)] = it.canvas

    memory, src_mask = model.encode_batch(src, src_len)
    H, slot_mask = model.slot_matrix_batch(memory, src_mask, canvas, can_len)
    logp = model.joint_log_probs_batch(H, slot_mask)

    rows_b, rows_l, rows_c, weights = [], [], [], []
    for b, it in enumerate(batch):
        share = 1.0 / (len(it.targets) * B)
        for t in it.targets:
            for tok, w in zip(t.token_ids(it.y), t.weights):
                rows_b.append(b)
                rows_l.append(t.location)
                rows_c.append(tok)
                weights.append(w * share)
    idx = (
        np.asarray(rows_b, dtype=np.int64),
        np.asarray(rows_l, dtype=np.int64),
        np.asarray(rows_c, dtype=np.int64),
    )
    picked = ad.take(logp, idx)
    return ad.neg(ad.tsum(ad.mul(picked, np.asarray(weights, dtype=logp.dtype))))


def train_step(
    model: InsertionModel,
    batch: list[BatchItem],
    opt_state: OptimizerState,
    config: TrainConfig,
) -> float:
    model.zero_grads()
    groups = _length_buckets(batch, config.micro_batch)
    with Tape() as tape:
        losses = [batch_loss(model, g) for g in groups]
        if len(losses) == 1:
            loss = losses[0]
        else:
            weights = np.array([len(g) / len(batch) for g in groups])
            loss = ad.tsum(ad.mul(ad.stack([ad.reshape(l, ()) for l in losses]), weights))
    tape.backward(loss)
    grads = {name: p.grad for name, p in model.params.items() if p.grad is not None}
    for name, p in model.params.items():
        grads.setdefault(name, np.zeros_like(p.data))
    clip_gradients(grads, config.clip_norm)
    lr = scheduled_learning_rate(config, opt_state.step + 1)
    adam_step(model.params, grads, opt_state, config, lr=lr)
    return loss.item()


def _length_buckets(batch: list[BatchItem], micro_batch: int) -> list[list[BatchItem]]:
    """Split the batch into length-sorted micro-batches (mean loss is unchanged)."""
    if micro_batch <= 0 or len(batch) <= micro_batch:
        return [batch]
    order = sorted(range(len(batch)), key=lambda i: (len(batch[i].canvas), len(batch[i].x), i))
    return [
        [batch[i] for i in order[s : s + micro_batch]]
        for s in range(0, len(order), micro_batch)
    ]


# -- optimizer state persistence ----------------------------------------------


def save_optimizer_state(path: str, state: OptimizerState) -> None:
    manifest = []
    blobs = []
    offset = 0
    for group, arrays in (("m", state.m), ("v", state.v)):
        for name, arr in arrays.items():
            raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            manifest.append({"name": f"{group}.{name}", "shape": list(arr.shape), "offset": offset})
            blobs.append(raw)
            offset += len(raw)
    payload = json.dumps({"step": state.step, "manifest": manifest}).encode()
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(len(payload).to_bytes(4, "little"))
        f.write(payload)
        for raw in blobs:
            f.write(raw)
    os.replace(tmp, path)


def load_optimizer_state(path: str, model: InsertionModel) -> OptimizerState:
    with open(path, "rb") as f:
        data = f.read()
    n = int.from_bytes(data[:4], "little")
    meta = json.loads(data[4 : 4 + n])
    blob = data[4 + n :]
    state = OptimizerState.for_model(model)
    state.step = meta["step"]
    for entry in meta["manifest"]:
        group, name = entry["name"].split(".", 1)
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=entry["offset"]).reshape(shape)
        getattr(state, group)[name] = arr.astype(model.config.np_dtype)
    return state


# -- the loop ------------------------------------------------------------------


def train(
    model: InsertionModel,
    dataset: Dataset,
    loss_config: LossConfig,
    config: TrainConfig,
    run_dir: str | None = None,
    extra_meta: dict | None = None,
    resume_step: int = 0,
    opt_state: OptimizerState | None = None,
    log_fh=None,
) -> tuple[OptimizerState, list[tuple[int, float]]]:
    """Run the optimization loop; returns optimizer state and (step, loss) history.

    With a run_dir, appends to metrics.log and writes ckpt-{step}.insr (+
    .opt sidecar with the Adam moments) every checkpoint_interval steps and
    at the end. Aborts on a non-finite loss with a diagnostic snapshot.
    """
    if opt_state is None:
        opt_state = OptimizerState.for_model(model)
    history: list[tuple[int, float]] = []
    own_fh = None
    if run_dir is not None:
        os.makedirs(run_dir, exist_ok=True)
        if log_fh is None:
            own_fh = log_fh = open(os.path.join(run_dir, "metrics.log"), "a", encoding="utf-8")
    start = time.monotonic()

    def write_checkpoint(step: int) -> None:
        if run_dir is None:
            return
        path = os.path.join(run_dir, f"ckpt-{step}.insr")
        ckpt.save(path, model, extra=extra_meta or {})
        save_optimizer_state(path + ".opt", opt_state)

    wrote_final = False
    try:
        for step in range(resume_step + 1, config.steps + 1):
            rng = np.random.default_rng([config.seed, step])
            batch = make_training_batch(
                dataset, loss_config, rng, config.batch_size, config.samples_per_example
            )
            loss = train_step(model, batch, opt_state, config)
            if not math.isfinite(loss):
                snapshot = {
                    "step": step,
                    "loss": repr(loss),
                    "grad_norms": {
                        k: float(np.abs(p.grad).max()) if p.grad is not None else 0.0
                        for k, p in model.params.items()
                    },
                }
                if run_dir is not None:
                    with open(os.path.join(run_dir, "diverged.json"), "w") as f:
                        json.dump(snapshot, f, indent=2)
                raise TrainingDiverged(f"non-finite loss at step {step}")
            history.append((step, loss))
            if log_fh is not None:
                log_fh.write(f"step={step}\tloss={loss!r}\telapsed={time.monotonic() - start:.3f}\n")
                log_fh.flush()
            if config.checkpoint_interval > 0 and step % config.checkpoint_interval == 0:
                write_checkpoint(step)
                wrote_final = step == config.steps
        if not wrote_final:
            write_checkpoint(config.steps)
    finally:
        if own_fh is not None:
            own_fh.close()
    return opt_state, history
