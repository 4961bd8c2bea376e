"""Loss definitions over heatmap logits.

Two ingredients: a per-cell classification loss against the true
endpoint cell (cross-entropy or its focal variant), and a logit
distillation penalty that anchors replayed samples to the logits they
were stored with.  The replay loss pairs both; the total stream loss
adds weighted replay terms from the two memory buffers to the
current-batch loss.

All kernels operate on flat logit vectors so the predictor's backward
pass can reuse them; ``base_loss``/``replay_loss``/``total_loss`` are
the heatmap-level entry points.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .core import GroundTruth, Heatmap, Scene, target_cell

if TYPE_CHECKING:  # pragma: no cover
    from .memory import MemoryTriplet
    from .predictor import HeatmapPredictor

__all__ = [
    "LossSpec",
    "Target",
    "base_loss",
    "batch_loss_and_dlogits",
    "replay_loss",
    "total_loss",
]

_BASE_KINDS = ("cross_entropy", "focal")


@dataclass(frozen=True)
class LossSpec:
    """Configuration for the composite stream loss.

    ``alpha`` weights replay from the diversity-selected buffer,
    ``beta`` replay from the reservoir buffer.  ``focal_gamma`` is used
    only when ``base_kind`` is ``"focal"``; gamma 0 reduces focal to
    plain cross-entropy.
    """

    base_kind: str = "cross_entropy"
    focal_gamma: float = 2.0
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self) -> None:
        if self.base_kind not in _BASE_KINDS:
            raise ValueError(f"base_kind must be one of {_BASE_KINDS}")
        if self.focal_gamma < 0:
            raise ValueError("focal_gamma must be non-negative")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("replay weights alpha and beta must be non-negative")


@dataclass(frozen=True)
class Target:
    """Supervision for one sample: the true endpoint cell, plus the
    stored logits to distill toward when the sample is replayed from
    memory (``init_logits`` is a flat vector or None)."""

    cell: tuple[int, int]
    init_logits: np.ndarray | None = None


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def batch_loss_and_dlogits(
    logits: np.ndarray,
    targets: Sequence[Target],
    spec: LossSpec,
    cols_w: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample losses and their logit gradients for a batch.

    ``logits`` has shape ``(n, n_cells)``; each target's cell index is
    ``row * cols_w + col``.  Returns ``(losses, dlogits)`` with shapes
    ``(n,)`` and ``(n, n_cells)``.
    """
    n, n_cells = logits.shape
    if len(targets) != n:
        raise ValueError("batch size mismatch between logits and targets")
    idx = np.array([t.cell[0] * cols_w + t.cell[1] for t in targets])
    if np.any(idx < 0) or np.any(idx >= n_cells):
        raise ValueError("target cell outside the grid")

    lsm = _log_softmax(logits)
    softmax = np.exp(lsm)
    rows = np.arange(n)
    lsm_t = lsm[rows, idx]

    onehot = np.zeros_like(logits)
    onehot[rows, idx] = 1.0

    if spec.base_kind == "cross_entropy":
        losses = -lsm_t
        dlogits = softmax - onehot
    else:
        gamma = spec.focal_gamma
        p_t = np.exp(lsm_t)
        one_m = 1.0 - p_t
        losses = -(one_m**gamma) * lsm_t
        # d/dz_j = (delta - s_j) * (gamma (1-p)^(g-1) p log p - (1-p)^g);
        # the first factor vanishes smoothly as p -> 1, guard the 0**neg.
        safe = np.where(one_m > 0.0, one_m, 1.0)
        lead = np.where(one_m > 0.0, gamma * safe ** (gamma - 1.0) * p_t * lsm_t, 0.0)
        coeff = lead - one_m**gamma
        dlogits = (onehot - softmax) * coeff[:, None]

    for k, t in enumerate(targets):
        if t.init_logits is not None:
            stored = np.asarray(t.init_logits, dtype=np.float64).reshape(-1)
            if stored.shape[0] != n_cells:
                raise ValueError("stored logits do not match the grid size")
            diff = logits[k] - stored
            losses[k] = losses[k] + diff.dot(diff) / n_cells
            dlogits[k] += 2.0 * diff / n_cells

    return losses, dlogits


def base_loss(heatmap: Heatmap, cell: tuple[int, int], spec: LossSpec | None = None) -> float:
    """Classification loss of a heatmap against the true endpoint cell."""
    spec = spec or LossSpec()
    flat = heatmap.logits.reshape(1, -1)
    losses, _ = batch_loss_and_dlogits(flat, [Target(cell)], spec, heatmap.grid.cols_w)
    return float(losses[0])


def replay_targets(
    triplets: Sequence["MemoryTriplet"], grid
) -> list[tuple[Scene, Target]]:
    """Replay supervision for stored triplets: true cell plus stored
    logits as the distillation anchor."""
    out = []
    for t in triplets:
        cell = target_cell(t.scene, t.truth, grid)
        out.append((t.scene, Target(cell, t.init_logits.reshape(-1))))
    return out


def replay_loss(
    model: "HeatmapPredictor",
    params: np.ndarray,
    triplets: Sequence["MemoryTriplet"],
    spec: LossSpec | None = None,
) -> float:
    """Mean over a replayed batch of base loss plus the squared logit
    distance to the stored logits, normalised by the cell count.

    An empty batch contributes zero.
    """
    spec = spec or LossSpec()
    if not triplets:
        return 0.0
    batch = replay_targets(triplets, model.config.grid)
    value, _ = model.loss_and_grad(params, batch, spec)
    return value


def total_loss(
    model: "HeatmapPredictor",
    params: np.ndarray,
    current: Sequence[tuple[Scene, GroundTruth]],
    sp_batch: Sequence["MemoryTriplet"],
    cp_batch: Sequence["MemoryTriplet"],
    spec: LossSpec | None = None,
) -> float:
    """Stream loss plus ``alpha`` / ``beta`` weighted replay terms from
    the two buffers."""
    spec = spec or LossSpec()
    grid = model.config.grid
    batch = [(scene, Target(target_cell(scene, truth, grid))) for scene, truth in current]
    value, _ = model.loss_and_grad(params, batch, spec)
    return (
        value
        + spec.alpha * replay_loss(model, params, sp_batch, spec)
        + spec.beta * replay_loss(model, params, cp_batch, spec)
    )
