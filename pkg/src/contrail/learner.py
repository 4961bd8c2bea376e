"""Streaming trainers: one-pass continual learning strategies.

``train_stream`` consumes an ordered sample stream in consecutive
batches, takes one Adam step per batch, and (strategy permitting)
feeds each trained sample to replay memory.  The fixed order per batch
is: snapshot the model's logits for the batch, compute the strategy
loss and step, then offer the batch to the buffers carrying the
pre-update logits.

Task labels are evaluation metadata.  The four task-free strategies
(vanilla, dual replay, DER-style, GSS-style) never read them on the
training path; checkpoint placement uses the evaluation-side boundary
helper.  AGem keys its per-task reference memories off labels and
Joint reorders the stream, which is exactly the privilege those
baselines are defined to have.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import core
from .core import Sample, Scene, GroundTruth, target_cell
from .losses import LossSpec, Target, replay_targets
from .memory import (
    CompletionBuffer,
    MemoryTriplet,
    SeparationBuffer,
    draw_minibatch,
)
from .predictor import AdamState, HeatmapPredictor, adam_step

__all__ = [
    "Strategy",
    "TrainConfig",
    "TrainResult",
    "agem_project",
    "dual_replay_step",
    "gss_style_step",
    "train_stream",
]


class Strategy(enum.Enum):
    """Training strategies over one data pass.

    VANILLA ignores the past entirely.  DUAL_REPLAY trains with replay
    from both memory buffers plus logit distillation.  DER_STYLE keeps
    only the reservoir buffer with distillation; GSS_STYLE keeps only
    the diversity buffer and mixes replayed samples into the training
    batch without distillation.  AGEM constrains gradients against
    per-task reference memories; JOINT shuffles the whole stream first
    (the offline upper bound).
    """

    VANILLA = "vanilla"
    DUAL_REPLAY = "dual"
    DER_STYLE = "der"
    GSS_STYLE = "gss"
    AGEM = "agem"
    JOINT = "joint"

    @classmethod
    def parse(cls, name: str) -> "Strategy":
        for member in cls:
            if member.value == name.lower():
                return member
        raise ValueError(
            f"unknown strategy {name!r}; choose from "
            f"{[m.value for m in cls]}"
        )


TASK_FREE = (Strategy.VANILLA, Strategy.DUAL_REPLAY, Strategy.DER_STYLE, Strategy.GSS_STYLE)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of the streaming trainer.

    ``buffer_total`` is the whole memory budget; dual replay splits it
    evenly between its two buffers, every other strategy hands it to
    its single store.  ``replay_batch`` defaults to ``batch_size``.
    ``score_per_batch`` scores a whole batch with its mean gradient
    instead of per sample; ``cached_score_grads`` reuses each stored
    item's insertion-time gradient when scoring (an approximation that
    trades fidelity for speed).  Both are off by default.
    """

    lr: float = 1e-3
    batch_size: int = 8
    buffer_total: int = 200
    replay_batch: int | None = None
    loss: LossSpec = field(default_factory=LossSpec)
    b_compare: int = 10
    seed: int = 0
    checkpoint_after_each_task: bool = True
    score_per_batch: bool = False
    cached_score_grads: bool = False
    agem_ref_batch: int = 64

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.buffer_total < 0:
            raise ValueError("buffer_total must be >= 0")
        if self.replay_batch is not None and self.replay_batch < 0:
            raise ValueError("replay_batch must be >= 0")
        if self.b_compare < 1:
            raise ValueError("b_compare must be >= 1")
        if self.agem_ref_batch < 1:
            raise ValueError("agem_ref_batch must be >= 1")

    @property
    def replay_n(self) -> int:
        return self.batch_size if self.replay_batch is None else self.replay_batch


@dataclass
class TrainResult:
    """Everything a run leaves behind, buffers included."""

    final_params: np.ndarray
    adam_state: AdamState
    checkpoints: list[tuple[int, np.ndarray]]
    separation: SeparationBuffer | None
    completion: CompletionBuffer | None
    visits: np.ndarray
    label_reads: int
    agem_dots: list[float]
    n_steps: int


def _base_targets(
    pairs: Sequence[tuple[Scene, GroundTruth]], grid
) -> list[tuple[Scene, Target]]:
    return [(scene, Target(target_cell(scene, truth, grid))) for scene, truth in pairs]


def dual_replay_step(
    model: HeatmapPredictor,
    params: np.ndarray,
    batch: Sequence[tuple[Scene, GroundTruth]],
    sp_buffer: SeparationBuffer | None,
    cp_buffer: CompletionBuffer | None,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> tuple[float, np.ndarray]:
    """Loss and gradient of the current batch plus weighted replay from
    both buffers (base loss + logit distillation on replayed samples).

    A missing or empty buffer, a zero replay weight, or replay_batch 0
    silently drops that term, which makes the alpha = beta = 0 case
    coincide with a vanilla step.
    """
    spec = cfg.loss
    grid = model.config.grid
    loss, grad = model.loss_and_grad(params, _base_targets(batch, grid), spec)
    for weight, buffer in ((spec.alpha, sp_buffer), (spec.beta, cp_buffer)):
        if weight == 0.0 or buffer is None or len(buffer) == 0 or cfg.replay_n == 0:
            continue
        drawn = draw_minibatch(buffer, cfg.replay_n, rng)
        r_loss, r_grad = model.loss_and_grad(params, replay_targets(drawn, grid), spec)
        loss += weight * r_loss
        grad += weight * r_grad
    return loss, grad


def gss_style_step(
    model: HeatmapPredictor,
    params: np.ndarray,
    batch: Sequence[tuple[Scene, GroundTruth]],
    buffer: SeparationBuffer | None,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> tuple[float, np.ndarray]:
    """Base loss over the current batch concatenated with a buffer
    draw; no distillation.  The mean runs over the mixed batch, so the
    sub-batches weigh in proportion to their sizes."""
    grid = model.config.grid
    mixed = list(batch)
    if buffer is not None and len(buffer) > 0 and cfg.replay_n > 0:
        drawn = draw_minibatch(buffer, cfg.replay_n, rng)
        mixed.extend((t.scene, t.truth) for t in drawn)
    return model.loss_and_grad(params, _base_targets(mixed, grid), cfg.loss)


def agem_project(grad: np.ndarray, ref_grad: np.ndarray) -> tuple[np.ndarray, bool]:
    """Project a gradient to not increase the reference loss: when the
    dot product is negative, remove the component along the reference
    gradient.  Returns the (possibly unchanged) gradient and whether a
    projection happened."""
    dot = float(grad @ ref_grad)
    if dot >= 0.0:
        return grad, False
    denom = float(ref_grad @ ref_grad)
    if denom == 0.0:
        return grad, False
    return grad - (dot / denom) * ref_grad, True


class _AgemMemory:
    """Per-task reservoirs under one shared budget.

    When a new task shows up every existing reservoir shrinks to the
    new even quota (a random keep-subset), so the budget never grows
    with the task count.
    """

    def __init__(self, total: int, rng: np.random.Generator):
        self.total = total
        self.rng = rng
        self.reservoirs: dict[int, CompletionBuffer] = {}

    def observe(self, label: int, item: MemoryTriplet) -> None:
        if self.total <= 0:
            return
        if label not in self.reservoirs:
            quota = max(1, self.total // (len(self.reservoirs) + 1))
            for buf in self.reservoirs.values():
                if len(buf.items) > quota:
                    keep = self.rng.choice(len(buf.items), size=quota, replace=False)
                    buf.items = [buf.items[int(i)] for i in sorted(keep)]
                buf.capacity = quota
            self.reservoirs[label] = CompletionBuffer(capacity=quota)
        self.reservoirs[label].observe(item, self.rng)

    def reference_items(self, exclude_label: int, n: int) -> list[MemoryTriplet]:
        pool = [
            item
            for label, buf in self.reservoirs.items()
            if label != exclude_label
            for item in buf.items
        ]
        if not pool:
            return []
        idx = self.rng.integers(0, len(pool), size=n)
        return [pool[int(i)] for i in idx]


def _make_buffers(
    strategy: Strategy, cfg: TrainConfig
) -> tuple[SeparationBuffer | None, CompletionBuffer | None]:
    total = cfg.buffer_total
    if total == 0:
        return None, None
    if strategy is Strategy.DUAL_REPLAY:
        if total % 2:
            raise ValueError("dual replay splits buffer_total evenly; use an even total")
        half = total // 2
        return (
            SeparationBuffer(capacity=half, b_compare=cfg.b_compare),
            CompletionBuffer(capacity=half),
        )
    if strategy is Strategy.DER_STYLE:
        return None, CompletionBuffer(capacity=total)
    if strategy is Strategy.GSS_STYLE:
        return SeparationBuffer(capacity=total, b_compare=cfg.b_compare), None
    return None, None


def train_stream(
    model: HeatmapPredictor,
    stream: Sequence[Sample],
    strategy: Strategy,
    cfg: TrainConfig,
    init_params: np.ndarray | None = None,
) -> TrainResult:
    """Train over the stream once and return params, checkpoints, and
    final buffer contents.

    The stream must be ordered by task label (checkpoints are recorded
    right after the step that consumes a task's last sample).  Given
    the same model config, stream, strategy, and train config, the run
    is bit-reproducible.
    """
    stream = list(stream)
    if not stream:
        raise ValueError("cannot train on an empty stream")
    boundaries = core.task_boundaries(stream)  # also validates ordering

    reads_before = core.task_label_reads()
    grid = model.config.grid
    spec = cfg.loss

    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    rng_replay = np.random.default_rng(seeds[0])
    rng_buffers = np.random.default_rng(seeds[1])
    rng_joint = np.random.default_rng(seeds[2])
    rng_agem = np.random.default_rng(seeds[3])

    if strategy is Strategy.JOINT:
        order = rng_joint.permutation(len(stream))
        stream = [stream[int(i)] for i in order]
        boundaries = []

    sp_buffer, cp_buffer = _make_buffers(strategy, cfg)
    agem_memory = (
        _AgemMemory(cfg.buffer_total, rng_agem) if strategy is Strategy.AGEM else None
    )
    grad_cache: dict[int, np.ndarray] = {}

    params = model.init_params() if init_params is None else init_params.copy()
    adam = AdamState.zeros(model.param_count)
    visits = np.zeros(len(stream), dtype=np.int64)
    checkpoints: list[tuple[int, np.ndarray]] = []
    agem_dots: list[float] = []
    pending = list(boundaries) if cfg.checkpoint_after_each_task else []
    needs_snapshot = strategy in (
        Strategy.DUAL_REPLAY,
        Strategy.DER_STYLE,
        Strategy.GSS_STYLE,
        Strategy.AGEM,
    ) and cfg.buffer_total > 0
    n_steps = 0

    for start in range(0, len(stream), cfg.batch_size):
        batch = stream[start : start + cfg.batch_size]
        pairs = [(s.scene, s.truth) for s in batch]
        scenes = [scene for scene, _ in pairs]

        snapshot = model.forward_logits(params, scenes) if needs_snapshot else None

        if strategy in (Strategy.VANILLA, Strategy.JOINT):
            loss, grad = model.loss_and_grad(params, _base_targets(pairs, grid), spec)
        elif strategy is Strategy.DUAL_REPLAY:
            loss, grad = dual_replay_step(
                model, params, pairs, sp_buffer, cp_buffer, cfg, rng_replay
            )
        elif strategy is Strategy.DER_STYLE:
            loss, grad = dual_replay_step(
                model, params, pairs, None, cp_buffer, cfg, rng_replay
            )
        elif strategy is Strategy.GSS_STYLE:
            loss, grad = gss_style_step(model, params, pairs, sp_buffer, cfg, rng_replay)
        else:  # AGEM
            loss, grad = model.loss_and_grad(params, _base_targets(pairs, grid), spec)
            assert agem_memory is not None
            refs = agem_memory.reference_items(
                exclude_label=batch[-1].task_label, n=cfg.agem_ref_batch
            )
            if refs:
                ref_pairs = [(t.scene, t.truth) for t in refs]
                _, g_ref = model.loss_and_grad(
                    params, _base_targets(ref_pairs, grid), spec
                )
                grad, projected = agem_project(grad, g_ref)
                if projected:
                    agem_dots.append(float(grad @ g_ref))

        params, adam = adam_step(params, grad, adam, cfg.lr)
        visits[start : start + len(batch)] += 1
        n_steps += 1

        if snapshot is not None:
            _offer_batch(
                model,
                params,
                batch,
                snapshot,
                strategy,
                sp_buffer,
                cp_buffer,
                agem_memory,
                cfg,
                rng_buffers,
                grad_cache,
            )

        end = start + len(batch)
        while pending and pending[0][1] <= end:
            label, _ = pending.pop(0)
            checkpoints.append((label, params.copy()))

    return TrainResult(
        final_params=params,
        adam_state=adam,
        checkpoints=checkpoints,
        separation=sp_buffer,
        completion=cp_buffer,
        visits=visits,
        label_reads=core.task_label_reads() - reads_before,
        agem_dots=agem_dots,
        n_steps=n_steps,
    )


def _offer_batch(
    model: HeatmapPredictor,
    params: np.ndarray,
    batch: Sequence[Sample],
    snapshot: np.ndarray,
    strategy: Strategy,
    sp_buffer: SeparationBuffer | None,
    cp_buffer: CompletionBuffer | None,
    agem_memory: "_AgemMemory | None",
    cfg: TrainConfig,
    rng: np.random.Generator,
    grad_cache: dict[int, np.ndarray],
) -> None:
    """Feed one trained batch to the strategy's stores.  Scoring
    gradients are base-loss gradients at the current (post-step)
    parameters, batched across the offered samples."""
    grid = model.config.grid
    rows, cols = grid.rows_h, grid.cols_w
    triplets = [
        MemoryTriplet(s.scene, s.truth, snapshot[k].reshape(rows, cols))
        for k, s in enumerate(batch)
    ]

    if strategy is Strategy.AGEM:
        assert agem_memory is not None
        for s, t in zip(batch, triplets):
            agem_memory.observe(s.task_label, t)
        return

    new_grads: np.ndarray | None = None
    if sp_buffer is not None:
        pairs = [(s.scene, s.truth) for s in batch]
        new_grads = model.per_sample_grads(params, _base_targets(pairs, grid), cfg.loss)
        if cfg.score_per_batch:
            shared = new_grads.mean(axis=0)
            new_grads = np.broadcast_to(shared, new_grads.shape)

    def grads_of(items: Sequence[MemoryTriplet]) -> np.ndarray:
        if cfg.cached_score_grads:
            hits = [grad_cache.get(id(it)) for it in items]
            if all(h is not None for h in hits):
                return np.stack(hits)  # type: ignore[arg-type]
        pairs = [(it.scene, it.truth) for it in items]
        return model.per_sample_grads(params, _base_targets(pairs, grid), cfg.loss)

    def grad_of(item: MemoryTriplet) -> np.ndarray:
        return grads_of([item])[0]

    for k, (sample, triplet) in enumerate(zip(batch, triplets)):
        if sp_buffer is not None:
            assert new_grads is not None
            stored = sp_buffer.offer(
                triplet, new_grads[k], rng, grad_of=grad_of, grads_of=grads_of
            )
            if cfg.cached_score_grads and stored:
                grad_cache[id(triplet)] = new_grads[k].copy()
        if cp_buffer is not None:
            cp_buffer.observe(triplet, rng)

    if cfg.cached_score_grads and sp_buffer is not None:
        live = {id(it) for it in sp_buffer.items}
        for key in list(grad_cache):
            if key not in live:
                del grad_cache[key]
