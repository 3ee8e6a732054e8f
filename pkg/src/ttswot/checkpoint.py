"""Binary checkpoint format.

Layout (all integers little-endian):

    b"ZSTW"  u32 version
    u32 n_tensors, then per tensor:
        u32 name_len, name (UTF-8), u32 ndim, u32 dims[ndim], f32 data (row-major)
    u64 reservoir_seed, f64 reservoir_radius (the reservoir is rebuilt from these;
    its matrices also appear in the tensor table under ``reservoir.*``)
    u64 iteration, u64 adam_step
    u32 len, master RNG state (JSON)
    u32 len, metadata (JSON: run config, speaker names, corpus frame count)
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .errors import FormatError
from .model import Model

MAGIC = b"ZSTW"
VERSION = 1


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


@dataclass
class Checkpoint:
    tensors: dict  # name -> float32 ndarray
    reservoir_seed: int
    reservoir_radius: float
    iteration: int = 0
    adam_step: int = 0
    rng_state: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    # -- serialization -------------------------------------------------------

    def to_bytes(self) -> bytes:
        out = io.BytesIO()
        out.write(MAGIC)
        out.write(struct.pack("<I", VERSION))
        out.write(struct.pack("<I", len(self.tensors)))
        for name in sorted(self.tensors):
            arr = np.ascontiguousarray(self.tensors[name], dtype="<f4")
            raw = name.encode("utf-8")
            out.write(struct.pack("<I", len(raw)))
            out.write(raw)
            out.write(struct.pack("<I", arr.ndim))
            out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            out.write(arr.tobytes())
        out.write(struct.pack("<Qd", self.reservoir_seed, self.reservoir_radius))
        out.write(struct.pack("<QQ", self.iteration, self.adam_step))
        for blob in (_dumps(self.rng_state), _dumps(self.meta)):
            out.write(struct.pack("<I", len(blob)))
            out.write(blob)
        return out.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        buf = memoryview(data)
        pos = 0

        def take(n):
            nonlocal pos
            if pos + n > len(buf):
                raise FormatError("truncated checkpoint")
            chunk = bytes(buf[pos : pos + n])
            pos += n
            return chunk

        def unpack(fmt):
            return struct.unpack(fmt, take(struct.calcsize(fmt)))

        if take(4) != MAGIC:
            raise FormatError("not a checkpoint (bad magic)")
        (version,) = unpack("<I")
        if version != VERSION:
            raise FormatError(f"unsupported checkpoint version {version} (expected {VERSION})")
        (n_tensors,) = unpack("<I")
        tensors = {}
        for _ in range(n_tensors):
            (name_len,) = unpack("<I")
            name = take(name_len).decode("utf-8")
            (ndim,) = unpack("<I")
            shape = unpack(f"<{ndim}I") if ndim else ()
            count = int(np.prod(shape)) if ndim else 1
            tensors[name] = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape).copy()
        seed, radius = unpack("<Qd")
        iteration, adam_step = unpack("<QQ")
        blobs = []
        for _ in range(2):
            (n,) = unpack("<I")
            blobs.append(json.loads(take(n).decode("utf-8")))
        if pos != len(buf):
            raise FormatError("trailing bytes after checkpoint")
        return cls(tensors, seed, radius, iteration, adam_step, blobs[0], blobs[1])

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
        return cls.from_bytes(data)

    # -- model conversion --------------------------------------------------------

    @property
    def config(self) -> TrainConfig:
        return TrainConfig.from_json(json.dumps(self.meta["config"]))

    def to_model(self) -> Model:
        cfg = self.config
        if self.reservoir_seed != cfg.seed or self.reservoir_radius != cfg.esn_radius:
            raise FormatError("reservoir record disagrees with the stored run config")
        model = Model(cfg, self.meta["speakers"], self.meta["n_frames_total"],
                      np.random.default_rng(0))
        params = model.parameters()
        missing = set(params) - set(self.tensors)
        if missing:
            raise FormatError(f"checkpoint lacks tensors: {sorted(missing)[:3]}")
        for name, p in params.items():
            value = self.tensors[name]
            if value.shape != p.data.shape:
                raise FormatError(f"tensor {name} has shape {value.shape}, expected {p.data.shape}")
            p.data = value.astype(model.dtype)
        return model


def checkpoint_from_model(model: Model, iteration: int = 0, adam_step: int = 0,
                          rng: np.random.Generator | None = None) -> Checkpoint:
    tensors = {name: p.data.astype(np.float32) for name, p in model.parameters().items()}
    # the reservoir is regenerated from its seed on load; the matrices are kept for reference
    res = model.reservoir
    tensors["reservoir.w_in"] = res.w_in.astype(np.float32)
    tensors["reservoir.w_rec.data"] = res.w_rec.data.astype(np.float32)
    tensors["reservoir.w_rec.indices"] = res.w_rec.indices.astype(np.float32)
    tensors["reservoir.w_rec.indptr"] = res.w_rec.indptr.astype(np.float32)
    meta = {
        "config": json.loads(model.cfg.to_json()),
        "speakers": list(model.speakers),
        "n_frames_total": model.n_frames_total,
    }
    state = rng.bit_generator.state if rng is not None else {}
    return Checkpoint(tensors, model.reservoir.seed, float(model.reservoir.spectral_radius),
                      iteration, adam_step, state, meta)


def checkpoint_from_result(result) -> Checkpoint:
    return checkpoint_from_model(result.model, result.iteration, result.adam.step, result.rng)
