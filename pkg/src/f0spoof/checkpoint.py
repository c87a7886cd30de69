"""Binary checkpoint format.

Layout (little-endian)::

    b"SRLA" | u16 version | u32 n | n bytes of JSON metadata (model config, training settings)
    tensor table: parameters
    tensor table: buffers (batch-norm running statistics)
    u8 has_optimizer [ | u64 step | tensor table: first moments | tensor table: second moments ]

A tensor table is ``u32 count`` followed by records of
``u16 name_len | name | u8 ndim | u32 dims... | float32 data``.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .model import ModelConfig, SRLARes2Net

MAGIC = b"SRLA"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _write_table(fh, tensors: dict[str, torch.Tensor]) -> None:
    fh.write(struct.pack("<I", len(tensors)))
    for name, t in tensors.items():
        raw = name.encode()
        arr = t.detach().cpu().to(torch.float32).numpy()
        fh.write(struct.pack("<H", len(raw)) + raw)
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read(fh, fmt: str):
    size = struct.calcsize(fmt)
    raw = fh.read(size)
    if len(raw) != size:
        raise CheckpointError("truncated checkpoint")
    return struct.unpack(fmt, raw)


def _read_table(fh) -> dict[str, torch.Tensor]:
    (count,) = _read(fh, "<I")
    out = {}
    for _ in range(count):
        (n,) = _read(fh, "<H")
        name = fh.read(n).decode()
        (ndim,) = _read(fh, "<B")
        shape = _read(fh, f"<{ndim}I") if ndim else ()
        numel = int(np.prod(shape)) if shape else 1
        raw = fh.read(4 * numel)
        if len(raw) != 4 * numel:
            raise CheckpointError(f"truncated tensor {name}")
        out[name] = torch.from_numpy(np.frombuffer(raw, dtype="<f4").reshape(shape).copy())
    return out


def save_checkpoint(
    path: str | Path,
    model: SRLARes2Net,
    meta: dict | None = None,
    optimizer_state: dict | None = None,
) -> None:
    """``optimizer_state`` is ``{"step": int, "m": {name: tensor}, "v": {name: tensor}}``."""
    header = {"model": model.cfg.to_dict(), "lam": model.head.lam, **(meta or {})}
    blob = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(MAGIC + struct.pack("<HI", VERSION, len(blob)) + blob)
    _write_table(buf, dict(model.named_parameters()))
    _write_table(buf, dict(model.named_buffers()))
    if optimizer_state is None:
        buf.write(struct.pack("<B", 0))
    else:
        buf.write(struct.pack("<BQ", 1, optimizer_state["step"]))
        _write_table(buf, optimizer_state["m"])
        _write_table(buf, optimizer_state["v"])
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path) -> tuple[SRLARes2Net, dict, dict | None]:
    """Return ``(model in eval mode, metadata, optimizer_state or None)``."""
    fh = io.BytesIO(Path(path).read_bytes())
    if fh.read(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, n = _read(fh, "<HI")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    meta = json.loads(fh.read(n).decode())
    model = SRLARes2Net(ModelConfig.from_dict(meta["model"]))
    params = _read_table(fh)
    buffers = _read_table(fh)
    state = model.state_dict()
    expected = set(state)
    got = set(params) | set(buffers)
    if got != expected:
        raise CheckpointError(
            f"{path}: tensor names differ from the architecture "
            f"(missing {sorted(expected - got)[:3]}, unexpected {sorted(got - expected)[:3]})"
        )
    model.load_state_dict({**params, **buffers})
    model.head.lam = meta.get("lam", model.head.lam)
    (has_opt,) = _read(fh, "<B")
    opt = None
    if has_opt:
        (step,) = _read(fh, "<Q")
        opt = {"step": step, "m": _read_table(fh), "v": _read_table(fh)}
    return model.eval(), meta, opt
