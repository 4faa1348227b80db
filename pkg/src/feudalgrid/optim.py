"""Parameter registry, optimizers, and checkpoint serialization.

Checkpoint format: one line of compact JSON (the manifest: format tag,
dtype, metadata, and per-parameter name/shape/offset/length) followed
by the raw little-endian flat float arrays in manifest order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autodiff import Tensor

__all__ = [
    "ParameterStore",
    "MissingGradError",
    "optimizer_step",
    "adam_step",
    "rmsprop_step",
    "clip_grad_norm",
    "save_checkpoint",
    "load_checkpoint",
    "restore_checkpoint",
]

_DTYPES = {"float64": "<f8", "float32": "<f4"}


class MissingGradError(RuntimeError):
    """Raised when an optimizer step finds parameters without gradients."""

    def __init__(self, names: list[str]):
        super().__init__(f"parameters missing gradients: {', '.join(names)}")
        self.names = names


class ParameterStore:
    """Named map from dotted parameter paths to trainable tensors."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.slots: dict[str, dict] = {}

    def param(self, name: str, data) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=True)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def names(self) -> list[str]:
        return list(self.params)

    def n_values(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def clear_grads(self) -> None:
        for p in self.params.values():
            p.grad = None

    def missing_grads(self) -> list[str]:
        return [n for n, p in self.params.items() if p.grad is None]

    def copy_values(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        missing = sorted(set(self.params) - set(values))
        extra = sorted(set(values) - set(self.params))
        if missing or extra:
            raise KeyError(f"parameter name mismatch; missing={missing} extra={extra}")
        for n, arr in values.items():
            p = self.params[n]
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {n}: {arr.shape} vs {p.shape}")
            p.data = arr.copy()


def _require_grads(store: ParameterStore) -> None:
    missing = store.missing_grads()
    if missing:
        raise MissingGradError(missing)


def adam_step(store: ParameterStore, lr: float = 1e-4,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update; gradients are zeroed afterwards."""
    _require_grads(store)
    slot = store.slots.setdefault("adam", {"step": 0})
    slot["step"] += 1
    t = slot["step"]
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in store.items():
        if name not in slot:
            slot[name] = (np.zeros_like(p.data), np.zeros_like(p.data))
        m, v = slot[name]
        g = p.grad
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        p.zero_grad()


def rmsprop_step(store: ParameterStore, lr: float = 1e-4,
                 alpha: float = 0.99, eps: float = 0.01) -> None:
    """RMSProp with running squared-gradient average; grads zeroed after."""
    _require_grads(store)
    slot = store.slots.setdefault("rmsprop", {})
    for name, p in store.items():
        if name not in slot:
            slot[name] = np.zeros_like(p.data)
        sq = slot[name]
        g = p.grad
        sq *= alpha
        sq += (1.0 - alpha) * g * g
        p.data -= lr * g / (np.sqrt(sq) + eps)
        p.zero_grad()


def optimizer_step(store: ParameterStore, kind: str, hyper: dict | None = None) -> None:
    """Dispatch an optimizer update by name ('adam' or 'rmsprop')."""
    hyper = dict(hyper or {})
    if kind == "adam":
        adam_step(store, **hyper)
    elif kind == "rmsprop":
        rmsprop_step(store, **hyper)
    else:
        raise ValueError(f"unknown optimizer kind {kind!r}")


def clip_grad_norm(store: ParameterStore, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    _require_grads(store)
    total = 0.0
    for _, p in store.items():
        total += float((p.grad * p.grad).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        factor = max_norm / norm
        for _, p in store.items():
            p.grad *= factor
    return norm


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(store: ParameterStore, path, dtype: str = "float64",
                    meta: dict | None = None) -> None:
    if dtype not in _DTYPES:
        raise ValueError(f"unsupported checkpoint dtype {dtype!r}")
    np_dtype = np.dtype(_DTYPES[dtype])
    entries = []
    blobs = []
    offset = 0
    for name, p in store.items():
        raw = np.ascontiguousarray(p.data, dtype=np_dtype).tobytes()
        entries.append({"name": name, "shape": list(p.shape),
                        "offset": offset, "length": p.size})
        blobs.append(raw)
        offset += len(raw)
    manifest = {"format": "feudalgrid-checkpoint-v1", "dtype": dtype,
                "meta": meta or {}, "params": entries}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(json.dumps(manifest, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        for raw in blobs:
            f.write(raw)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        header = f.readline()
        blob = f.read()
    manifest = json.loads(header.decode("utf-8"))
    if manifest.get("format") != "feudalgrid-checkpoint-v1":
        raise ValueError(f"not a feudalgrid checkpoint: {path}")
    np_dtype = np.dtype(_DTYPES[manifest["dtype"]])
    itemsize = np_dtype.itemsize
    values = {}
    for entry in manifest["params"]:
        start = entry["offset"]
        stop = start + entry["length"] * itemsize
        arr = np.frombuffer(blob[start:stop], dtype=np_dtype)
        values[entry["name"]] = arr.astype(np.float64).reshape(entry["shape"])
    return values, manifest.get("meta", {})


def restore_checkpoint(store: ParameterStore, path) -> dict:
    """Load a checkpoint into an existing store; returns the metadata."""
    values, meta = load_checkpoint(path)
    store.load_values(values)
    return meta
