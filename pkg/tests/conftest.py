"""Shared fixtures: a tiny model and scene factories."""

from __future__ import annotations

import numpy as np
import pytest

from contrail.core import AgentState, GridSpec, GroundTruth, Sample, Scene
from contrail.predictor import HeatmapPredictor, PredictorConfig


def make_scene(
    rng: np.random.Generator, t_obs: int = 2, k_sv: int = 1, span: float = 20.0
) -> Scene:
    def track():
        return tuple(
            AgentState(*(float(v) for v in rng.uniform(-span, span, size=4)))
            for _ in range(t_obs)
        )

    return Scene(
        tv_history=track(),
        sv_histories=tuple(track() for _ in range(k_sv)),
        sv_mask=tuple(bool(rng.random() < 0.8) for _ in range(k_sv)),
        t_c=t_obs - 1,
    )


def make_sample(
    rng: np.random.Generator,
    grid: GridSpec,
    task_label: int = 1,
    t_obs: int = 2,
    k_sv: int = 1,
) -> Sample:
    scene = make_scene(rng, t_obs, k_sv)
    endpoint = (
        float(rng.uniform(grid.origin[0], grid.origin[0] + grid.cols_w * grid.cell_size)),
        float(rng.uniform(grid.origin[1], grid.origin[1] + grid.rows_h * grid.cell_size)),
    )
    truth = GroundTruth(endpoint=endpoint, speed_v=float(rng.uniform(0.5, 12.0)))
    return Sample(scene, truth, task_label)


@pytest.fixture
def tiny_grid() -> GridSpec:
    return GridSpec(rows_h=4, cols_w=5, origin=(-10.0, -8.0), cell_size=4.0)


@pytest.fixture
def tiny_model(tiny_grid: GridSpec) -> HeatmapPredictor:
    return HeatmapPredictor(
        PredictorConfig(t_obs=2, k_sv=1, hidden_dims=(6,), grid=tiny_grid, seed=42)
    )
