"""Feedforward heatmap predictor with hand-rolled reverse-mode gradients.

The network maps a flattened scene feature vector (target vehicle and
neighbor tracks, expressed in the target-centric frame) through tanh
hidden layers to one logit per grid cell.  Forward activations are kept
and reused by the backward sweep, so gradients are exact reverse-mode
derivatives of the configured loss; a finite-difference oracle in the
test suite pins this down.

Parameters live in a single flat float64 vector (weights row-major,
then bias, layer by layer) so the optimizer, checkpointing, and the
gradient-similarity buffer all see one canonical layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .core import GridSpec, Heatmap, Scene, scene_frame
from .losses import LossSpec, Target, batch_loss_and_dlogits

__all__ = [
    "AdamState",
    "HeatmapPredictor",
    "PredictorConfig",
    "adam_step",
    "scene_features",
]


@dataclass(frozen=True)
class PredictorConfig:
    """Architecture and initialisation of the predictor.

    ``input_dim`` is fixed by the scene layout: ``(1 + k_sv)`` tracks of
    ``t_obs`` steps with 4 channels each.
    """

    t_obs: int
    k_sv: int
    hidden_dims: tuple[int, ...]
    grid: GridSpec
    seed: int = 0

    def __post_init__(self) -> None:
        if self.t_obs < 1:
            raise ValueError("t_obs must be >= 1")
        if self.k_sv < 0:
            raise ValueError("k_sv must be >= 0")
        if len(self.hidden_dims) < 1:
            raise ValueError("at least one hidden layer is required")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden layer widths must be positive")

    @property
    def input_dim(self) -> int:
        return (1 + self.k_sv) * self.t_obs * 4

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.grid.n_cells)


@lru_cache(maxsize=16384)
def scene_features(scene: Scene) -> np.ndarray:
    """Flatten a scene into the network input.

    All states are re-expressed in the target-centric frame (positions
    translated and rotated, velocities rotated), target track first and
    then the neighbor slots; masked-out slots are zero-filled.  Layout
    per track: t_obs rows of (x, y, vx, vy).
    """
    frame = scene_frame(scene)
    t_obs = len(scene.tv_history)
    tracks = 1 + len(scene.sv_histories)
    out = np.zeros((tracks, t_obs, 4), dtype=np.float64)
    for t, st in enumerate(scene.tv_history):
        out[0, t, 0:2] = frame.to_local((st.x, st.y))
        out[0, t, 2:4] = frame.vector_to_local((st.vx, st.vy))
    for k, track in enumerate(scene.sv_histories):
        if not scene.sv_mask[k]:
            continue
        for t, st in enumerate(track):
            out[k + 1, t, 0:2] = frame.to_local((st.x, st.y))
            out[k + 1, t, 2:4] = frame.vector_to_local((st.vx, st.vy))
    return out.reshape(-1)


class HeatmapPredictor:
    """MLP over scene features producing per-cell endpoint logits."""

    def __init__(self, config: PredictorConfig):
        self.config = config
        dims = config.layer_dims
        self._shapes = [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]
        self.param_count = sum(o * i + o for o, i in self._shapes)

    def init_params(self) -> np.ndarray:
        """Seeded uniform init in +-1/sqrt(fan_in) per layer."""
        rng = np.random.default_rng(self.config.seed)
        chunks = []
        for out_dim, in_dim in self._shapes:
            bound = 1.0 / np.sqrt(in_dim)
            chunks.append(rng.uniform(-bound, bound, size=out_dim * in_dim))
            chunks.append(rng.uniform(-bound, bound, size=out_dim))
        return np.concatenate(chunks)

    def _layers(self, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        if params.shape != (self.param_count,):
            raise ValueError(
                f"expected {self.param_count} parameters, got {params.shape}"
            )
        layers = []
        pos = 0
        for out_dim, in_dim in self._shapes:
            w = params[pos : pos + out_dim * in_dim].reshape(out_dim, in_dim)
            pos += out_dim * in_dim
            b = params[pos : pos + out_dim]
            pos += out_dim
            layers.append((w, b))
        return layers

    def _check_scene(self, scene: Scene) -> None:
        if (
            len(scene.tv_history) != self.config.t_obs
            or len(scene.sv_histories) != self.config.k_sv
        ):
            raise ValueError(
                f"scene with t_obs={len(scene.tv_history)}, "
                f"k_sv={len(scene.sv_histories)} does not match config "
                f"(t_obs={self.config.t_obs}, k_sv={self.config.k_sv})"
            )

    def _features_matrix(self, scenes: Sequence[Scene]) -> np.ndarray:
        for s in scenes:
            self._check_scene(s)
        return np.stack([scene_features(s) for s in scenes])

    def _forward_cached(
        self, params: np.ndarray, x: np.ndarray
    ) -> tuple[np.ndarray, list[np.ndarray]]:
        """Batched forward pass keeping every activation for backprop."""
        layers = self._layers(params)
        acts = [x]
        h = x
        for li, (w, b) in enumerate(layers):
            z = h @ w.T + b
            if not np.all(np.isfinite(z)):
                raise ArithmeticError(f"layer {li} produced non-finite activations")
            h = np.tanh(z) if li < len(layers) - 1 else z
            acts.append(h)
        return acts[-1], acts

    def forward_logits(self, params: np.ndarray, scenes: Sequence[Scene]) -> np.ndarray:
        """Logits for a batch of scenes, shape ``(n, n_cells)``."""
        x = self._features_matrix(scenes)
        logits, _ = self._forward_cached(params, x)
        return logits

    def forward(self, params: np.ndarray, scene: Scene) -> Heatmap:
        logits = self.forward_logits(params, [scene])[0]
        grid = self.config.grid
        return Heatmap(logits.reshape(grid.rows_h, grid.cols_w), grid)

    def _backward(
        self,
        params: np.ndarray,
        acts: list[np.ndarray],
        dlogits: np.ndarray,
    ) -> np.ndarray:
        """Reverse sweep: gradient of ``sum_i loss_i`` given per-sample
        logit gradients (scale ``dlogits`` beforehand for means)."""
        layers = self._layers(params)
        grads: list[np.ndarray | None] = [None] * len(layers)
        delta = dlogits
        for li in range(len(layers) - 1, -1, -1):
            w, _ = layers[li]
            h_prev = acts[li]
            dw = delta.T @ h_prev
            db = delta.sum(axis=0)
            grads[li] = np.concatenate([dw.reshape(-1), db])
            if li > 0:
                delta = (delta @ w) * (1.0 - acts[li] ** 2)
        return np.concatenate(grads)  # type: ignore[arg-type]

    def loss_and_grad(
        self,
        params: np.ndarray,
        batch: Sequence[tuple[Scene, Target]],
        loss_spec: LossSpec,
    ) -> tuple[float, np.ndarray]:
        """Mean loss over the batch and its full parameter gradient."""
        if not batch:
            raise ValueError("loss_and_grad requires a non-empty batch")
        scenes = [scene for scene, _ in batch]
        targets = [t for _, t in batch]
        x = self._features_matrix(scenes)
        logits, acts = self._forward_cached(params, x)
        losses, dlogits = batch_loss_and_dlogits(
            logits, targets, loss_spec, self.config.grid.cols_w
        )
        n = len(batch)
        grad = self._backward(params, acts, dlogits / n)
        return float(losses.mean()), grad

    def per_sample_grads(
        self,
        params: np.ndarray,
        batch: Sequence[tuple[Scene, Target]],
        loss_spec: LossSpec,
    ) -> np.ndarray:
        """One full-parameter loss gradient per sample, shape ``(n, P)``.

        This is the scoring path of the gradient-similarity buffer, so
        it is batched: the per-layer weight gradients are per-sample
        outer products assembled with einsum rather than n separate
        backward passes.
        """
        if not batch:
            return np.zeros((0, self.param_count))
        scenes = [scene for scene, _ in batch]
        targets = [t for _, t in batch]
        x = self._features_matrix(scenes)
        logits, acts = self._forward_cached(params, x)
        _, dlogits = batch_loss_and_dlogits(
            logits, targets, loss_spec, self.config.grid.cols_w
        )
        layers = self._layers(params)
        n = x.shape[0]
        pieces: list[np.ndarray | None] = [None] * len(layers)
        delta = dlogits
        for li in range(len(layers) - 1, -1, -1):
            w, _ = layers[li]
            h_prev = acts[li]
            dw = np.einsum("no,ni->noi", delta, h_prev).reshape(n, -1)
            pieces[li] = np.concatenate([dw, delta], axis=1)
            if li > 0:
                delta = (delta @ w) * (1.0 - acts[li] ** 2)
        return np.concatenate(pieces, axis=1)  # type: ignore[arg-type]


@dataclass
class AdamState:
    """First/second moment accumulators and the step counter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n_params: int) -> "AdamState":
        return cls(m=np.zeros(n_params), v=np.zeros(n_params), t=0)


def adam_step(
    params: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[np.ndarray, AdamState]:
    """One Adam update; returns fresh arrays, inputs are untouched."""
    if params.shape != grad.shape:
        raise ValueError("params and grad shapes differ")
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite gradient passed to adam_step")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad**2
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_params, AdamState(m=m, v=v, t=t)
