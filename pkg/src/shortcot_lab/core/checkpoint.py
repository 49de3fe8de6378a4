"""Binary checkpoint files.

Layout (all integers and floats little-endian)::

    b"SCOTI1"
    u32 x 5        semantic vocab, scene vocab, prompt vocab, d, h
    f64 block      embeddings, hidden weights, hidden bias,
                   output weights, output bias (row-major)
    u64            parameter version tag
    u8             kind: 0 = policy only, 1 = training state

Kind 1 continues with ``u32 epoch``, ``u64 optimizer step`` and three more
f64 blocks in the same order: reference parameters, Adam first moment,
Adam second moment.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from shortcot_lab.core.errors import CheckpointError
from shortcot_lab.core.export import atomic_write_bytes
from shortcot_lab.core.grpo import AdamState
from shortcot_lab.core.policy import PolicyParams

logger = logging.getLogger(__name__)

MAGIC = b"SCOTI1"
_HEADER = struct.Struct("<5I")
_TRAILER = struct.Struct("<QB")
_STATE = struct.Struct("<IQ")
_F64 = np.dtype("<f8")

KIND_POLICY = 0
KIND_TRAINING = 1


@dataclass(frozen=True, eq=False)
class Checkpoint:
    """Policy parameters plus, for training checkpoints, everything needed to resume."""

    params: PolicyParams
    epoch: int = 0
    ref_params: PolicyParams | None = None
    optimizer: AdamState | None = None

    @property
    def kind(self) -> int:
        return KIND_TRAINING if self.ref_params is not None else KIND_POLICY


def _param_block(params: PolicyParams) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype=_F64).tobytes() for a in params.arrays())


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    params = checkpoint.params
    parts = [MAGIC, _HEADER.pack(*params.header), _param_block(params),
             _TRAILER.pack(params.version, checkpoint.kind)]
    if checkpoint.kind == KIND_TRAINING:
        ref, opt = checkpoint.ref_params, checkpoint.optimizer
        assert ref is not None
        if opt is None:
            opt = AdamState.zeros(params)
        parts += [
            _STATE.pack(checkpoint.epoch, opt.step),
            _param_block(ref),
            _param_block(opt.first_moment),
            _param_block(opt.second_moment),
        ]
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.data):
            raise CheckpointError(
                f"Truncated checkpoint while reading {what}: need {n} bytes, "
                f"{len(self.data) - self.offset} left",
                self.offset,
            )
        chunk = self.data[self.offset: self.offset + n]
        self.offset += n
        return chunk

    def params(self, header: tuple[int, ...], what: str) -> PolicyParams:
        semantic, scene, prompt, d, h = header
        v = semantic + scene + prompt
        shapes = [(v, d), (2 * d + 2, h), (h,), (h, v), (v,)]
        arrays = []
        for name, shape in zip(PolicyParams.ARRAY_NAMES, shapes, strict=True):
            count = math.prod(shape)
            start = self.offset
            raw = self.take(count * _F64.itemsize, f"{what} {name}")
            arr = np.frombuffer(raw, dtype=_F64).astype(np.float64).reshape(shape)
            if not np.isfinite(arr).all():
                raise CheckpointError(f"Non-finite value in {what} {name}", start)
            arrays.append(arr)
        return PolicyParams(*arrays, prompt_size=prompt, semantic_size=semantic,
                            scene_size=scene)


def decode_checkpoint(data: bytes) -> Checkpoint:
    """Parse checkpoint bytes; nothing is returned unless the whole file is valid."""
    reader = _Reader(data)
    magic = reader.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise CheckpointError(f"Bad magic {magic!r}, expected {MAGIC!r}", 0)
    header_offset = reader.offset
    header = _HEADER.unpack(reader.take(_HEADER.size, "header"))
    if any(n == 0 for n in header):
        raise CheckpointError(f"Zero dimension in header {header}", header_offset)

    params = reader.params(header, "parameters")
    trailer_offset = reader.offset
    version, kind = _TRAILER.unpack(reader.take(_TRAILER.size, "trailer"))
    params = params.with_flat(params.flatten(), version=version)

    if kind == KIND_POLICY:
        checkpoint = Checkpoint(params)
    elif kind == KIND_TRAINING:
        epoch, step = _STATE.unpack(reader.take(_STATE.size, "training state"))
        ref = reader.params(header, "reference parameters")
        first = reader.params(header, "first moment")
        second = reader.params(header, "second moment")
        checkpoint = Checkpoint(params, epoch, ref, AdamState(step, first, second))
    else:
        raise CheckpointError(f"Unknown checkpoint kind {kind}", trailer_offset + 8)

    if reader.offset != len(data):
        raise CheckpointError(
            f"{len(data) - reader.offset} trailing bytes after checkpoint", reader.offset
        )
    return checkpoint


def save_checkpoint(checkpoint: Checkpoint, path: str | Path) -> Path:
    """Write *checkpoint* atomically; the file is either complete or absent."""
    dest = atomic_write_bytes(path, encode_checkpoint(checkpoint))
    logger.info("Wrote checkpoint %s (epoch %d)", dest, checkpoint.epoch)
    return dest


def load_checkpoint(path: str | Path) -> Checkpoint:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"Checkpoint not found: {p}")
    return decode_checkpoint(p.read_bytes())


def save_policy(params: PolicyParams, path: str | Path) -> Path:
    return save_checkpoint(Checkpoint(params), path)


def load_policy(path: str | Path) -> PolicyParams:
    return load_checkpoint(path).params
