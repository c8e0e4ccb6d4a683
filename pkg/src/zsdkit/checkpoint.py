"""Shape-tagged JSON checkpoints for torch parameter collections."""

from __future__ import annotations

import json
from pathlib import Path

import torch

from .errors import IngestionError


def state_to_json(state: dict[str, torch.Tensor]) -> dict:
    return {
        name: {"shape": list(t.shape), "data": t.detach().reshape(-1).tolist()}
        for name, t in state.items()
    }


def state_from_json(raw: dict) -> dict[str, torch.Tensor]:
    state = {}
    for name, entry in raw.items():
        t = torch.tensor(entry["data"], dtype=torch.float64)
        state[name] = t.reshape(entry["shape"])
    return state


def save_checkpoint(path: str | Path, kind: str, meta: dict, state: dict[str, torch.Tensor]) -> None:
    payload = {"kind": kind, "meta": meta, "arrays": state_to_json(state)}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path: str | Path, kind: str) -> tuple[dict, dict[str, torch.Tensor]]:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise IngestionError(f"{path}: invalid JSON ({exc})") from None
    if payload.get("kind") != kind:
        raise IngestionError(f"{path}: expected checkpoint kind {kind!r}, got {payload.get('kind')!r}")
    return payload["meta"], state_from_json(payload["arrays"])
