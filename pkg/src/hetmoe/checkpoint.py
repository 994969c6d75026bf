"""Versioned JSON checkpoint container.

Layout::

    {
      "format": "hetmoe-checkpoint",
      "version": 1,
      "kind": "expert_pool" | "prompt_set" | ...,
      "config": {...},          # echo of the producing configuration
      "manifest": {...},        # kind-specific metadata
      "params": {"<path>": {"shape": [rows, cols], "data": [row-major floats]}}
    }

Floats are written with Python's shortest round-trip ``repr``, so a
save/load cycle reproduces every parameter bit for bit. Parameter paths use
``/``-separated names such as ``layer/0/expert/1/weight``.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import ValidationError

FORMAT = "hetmoe-checkpoint"
VERSION = 1


def params_digest(params: Mapping[str, np.ndarray]) -> str:
    """SHA-256 over sorted parameter paths, shapes and raw float64 bytes."""
    h = hashlib.sha256()
    for path in sorted(params):
        arr = np.ascontiguousarray(params[path], dtype=np.float64)
        h.update(path.encode())
        h.update(repr(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def save_checkpoint(path: str | Path, kind: str, params: Mapping[str, np.ndarray], config: Mapping[str, Any] | None = None, manifest: Mapping[str, Any] | None = None) -> Path:
    body = {
        "format": FORMAT,
        "version": VERSION,
        "kind": kind,
        "config": dict(config or {}),
        "manifest": dict(manifest or {}),
        "digest": params_digest(params),
        "params": {
            k: {"shape": list(np.shape(v)), "data": np.asarray(v, dtype=np.float64).ravel().tolist()}
            for k, v in sorted(params.items())
        },
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(body, indent=1, allow_nan=False) + "\n", encoding="utf-8")
    return path


def load_checkpoint(path: str | Path, kind: str | None = None) -> tuple[dict[str, np.ndarray], dict[str, Any], dict[str, Any]]:
    """Return ``(params, config, manifest)``."""
    body = json.loads(Path(path).read_text(encoding="utf-8"))
    if body.get("format") != FORMAT:
        raise ValidationError(f"{path}: not a {FORMAT} file")
    if body.get("version") != VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {body.get('version')}")
    if kind is not None and body.get("kind") != kind:
        raise ValidationError(f"{path}: expected kind {kind!r}, found {body.get('kind')!r}")
    params = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in body["params"].items()}
    if "digest" in body and params_digest(params) != body["digest"]:
        raise ValidationError(f"{path}: parameter digest mismatch")
    return params, body.get("config", {}), body.get("manifest", {})
