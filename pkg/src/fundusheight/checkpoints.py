"""Checkpoint files: a torch-serialized payload plus a JSON sidecar.

The sidecar carries run metadata (config, stage, epoch, seed, parameter
count, state digest) so artifacts stay auditable without unpickling. The
digest hashes parameter names, dtypes, shapes, and raw bytes, giving a
stable fingerprint for determinism checks.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import torch

from .errors import CheckpointError


def state_digest(state):
    """SHA-256 over a name-sorted parameter/buffer map."""
    h = hashlib.sha256()
    for name in sorted(state):
        t = state[name]
        if not torch.is_tensor(t):
            t = torch.as_tensor(t)
        t = t.detach().cpu().contiguous()
        h.update(name.encode())
        h.update(str(t.dtype).encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.numpy().tobytes())
    return h.hexdigest()


@dataclass
class CheckpointFile:
    payload: dict
    meta: dict

    @property
    def state(self):
        return self.payload["state"]


def _sidecar(path):
    return Path(path).with_suffix(".json")


def save_checkpoint(path, state, meta=None):
    """Write `state` (a name->tensor map) and its JSON sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = {k: (v.detach().cpu() if torch.is_tensor(v) else torch.as_tensor(v)) for k, v in state.items()}
    torch.save({"state": state}, path)
    meta = dict(meta or {})
    meta.setdefault("parameter_count", int(sum(v.numel() for v in state.values())))
    meta["state_digest"] = state_digest(state)
    with open(_sidecar(path), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=str)
    return path


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(payload, dict) or "state" not in payload:
        raise CheckpointError(f"{path} is not a checkpoint file (no state map)")
    meta = {}
    sidecar = _sidecar(path)
    if sidecar.exists():
        with open(sidecar) as fh:
            meta = json.load(fh)
    return CheckpointFile(payload=payload, meta=meta)
