"""Checkpoint files: parameters, optimizer state, and buffer contents.

One JSON document per checkpoint.  Floats go through Python's repr, so
a save/load cycle is bit-exact; the architecture header lets a loader
rebuild the predictor without outside context, and the optional buffer
dump makes a checkpoint a full run-resumption unit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import AgentState, GridSpec, GroundTruth, Scene
from .memory import CompletionBuffer, MemoryTriplet, SeparationBuffer
from .predictor import AdamState, PredictorConfig

__all__ = ["load_checkpoint", "save_checkpoint"]

FORMAT = "contrail-checkpoint-v1"


def _scene_to_json(scene: Scene) -> dict:
    return {
        "tv": [[st.x, st.y, st.vx, st.vy] for st in scene.tv_history],
        "svs": [
            [[st.x, st.y, st.vx, st.vy] for st in track]
            for track in scene.sv_histories
        ],
        "mask": list(scene.sv_mask),
        "t_c": scene.t_c,
    }


def _scene_from_json(data: dict) -> Scene:
    return Scene(
        tv_history=tuple(AgentState(*row) for row in data["tv"]),
        sv_histories=tuple(
            tuple(AgentState(*row) for row in track) for track in data["svs"]
        ),
        sv_mask=tuple(bool(m) for m in data["mask"]),
        t_c=data["t_c"],
    )


def _triplet_to_json(t: MemoryTriplet) -> dict:
    return {
        "scene": _scene_to_json(t.scene),
        "truth": {"endpoint": list(t.truth.endpoint), "speed_v": t.truth.speed_v},
        "init_logits": t.init_logits.tolist(),
    }


def _triplet_from_json(data: dict) -> MemoryTriplet:
    return MemoryTriplet(
        scene=_scene_from_json(data["scene"]),
        truth=GroundTruth(
            endpoint=tuple(data["truth"]["endpoint"]), speed_v=data["truth"]["speed_v"]
        ),
        init_logits=np.array(data["init_logits"], dtype=np.float64),
    )


def save_checkpoint(
    path: Path | str,
    config: PredictorConfig,
    params: np.ndarray,
    adam: AdamState | None = None,
    separation: SeparationBuffer | None = None,
    completion: CompletionBuffer | None = None,
) -> None:
    payload: dict = {
        "format": FORMAT,
        "config": {
            "t_obs": config.t_obs,
            "k_sv": config.k_sv,
            "hidden_dims": list(config.hidden_dims),
            "grid": {
                "rows_h": config.grid.rows_h,
                "cols_w": config.grid.cols_w,
                "origin": list(config.grid.origin),
                "cell_size": config.grid.cell_size,
            },
            "seed": config.seed,
        },
        "params": params.tolist(),
        "adam": None
        if adam is None
        else {"m": adam.m.tolist(), "v": adam.v.tolist(), "t": adam.t},
        "separation": None
        if separation is None
        else {
            "capacity": separation.capacity,
            "b_compare": separation.b_compare,
            "stream_count": separation.stream_count,
            "scores": list(separation.scores),
            "items": [_triplet_to_json(t) for t in separation.items],
        },
        "completion": None
        if completion is None
        else {
            "capacity": completion.capacity,
            "stream_count": completion.stream_count,
            "items": [_triplet_to_json(t) for t in completion.items],
        },
    }
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(
    path: Path | str,
) -> tuple[
    PredictorConfig,
    np.ndarray,
    AdamState | None,
    SeparationBuffer | None,
    CompletionBuffer | None,
]:
    data = json.loads(Path(path).read_text())
    if data.get("format") != FORMAT:
        raise ValueError(f"{path} is not a {FORMAT} file")
    c = data["config"]
    config = PredictorConfig(
        t_obs=c["t_obs"],
        k_sv=c["k_sv"],
        hidden_dims=tuple(c["hidden_dims"]),
        grid=GridSpec(
            rows_h=c["grid"]["rows_h"],
            cols_w=c["grid"]["cols_w"],
            origin=tuple(c["grid"]["origin"]),
            cell_size=c["grid"]["cell_size"],
        ),
        seed=c["seed"],
    )
    params = np.array(data["params"], dtype=np.float64)
    adam = None
    if data["adam"] is not None:
        adam = AdamState(
            m=np.array(data["adam"]["m"], dtype=np.float64),
            v=np.array(data["adam"]["v"], dtype=np.float64),
            t=data["adam"]["t"],
        )
    separation = None
    if data["separation"] is not None:
        s = data["separation"]
        separation = SeparationBuffer(
            capacity=s["capacity"],
            b_compare=s["b_compare"],
            items=[_triplet_from_json(t) for t in s["items"]],
            scores=[float(q) for q in s["scores"]],
            stream_count=s["stream_count"],
        )
    completion = None
    if data["completion"] is not None:
        s = data["completion"]
        completion = CompletionBuffer(
            capacity=s["capacity"],
            items=[_triplet_from_json(t) for t in s["items"]],
            stream_count=s["stream_count"],
        )
    return config, params, adam, separation, completion
