"""Checkpoint files: a text header followed by a little-endian float64 payload.

Layout::

    MONGOOSE-CHECKPOINT 1
    dimension = 2
    hidden_size = 128
    step = 2000
    adam_t = 2000
    rng_digest = <sha256 of the next step's RNG state>
    config.<key> = <value>            (one line per TrainConfig field)
    segment <name> <shape> <crc32>    (one line per payload segment, in order)
    payload_bytes = <n>
    END
    <n bytes>

Every segment is checked against its CRC on load, so a corrupted byte is
reported with the name of the segment that contains it.
"""

from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ConfigError, TrainConfig, format_config, parse_config
from .params import ParamVector
from .policy import SEGMENTS, PolicyParams

__all__ = ["Checkpoint", "CheckpointError", "save_checkpoint", "load_checkpoint",
           "rng_digest", "FORMAT_VERSION"]

MAGIC = "MONGOOSE-CHECKPOINT"
FORMAT_VERSION = 1
_DTYPE = np.dtype("<f8")


class CheckpointError(ValueError):
    pass


def rng_digest(seed: int, step: int) -> str:
    """SHA-256 of the RNG state used for training step ``step``."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(step,)))
    state = json.dumps(rng.bit_generator.state, sort_keys=True)
    return hashlib.sha256(state.encode()).hexdigest()


@dataclass
class Checkpoint:
    params: PolicyParams
    config: TrainConfig
    step: int = 0
    adam_t: int = 0
    adam_m: ParamVector | None = None
    adam_v: ParamVector | None = None

    @property
    def dimension(self) -> int:
        return self.params.dimension

    @property
    def hidden_size(self) -> int:
        return self.params.hidden_size

    def segments(self) -> list[tuple[str, np.ndarray]]:
        segs = [(n, getattr(self.params, n)) for n in SEGMENTS]
        for prefix, vec in (("adam_m", self.adam_m), ("adam_v", self.adam_v)):
            if vec is not None:
                segs += [(f"{prefix}.{n}", a) for n, a in vec.segments().items()]
        return segs


def _shape_str(shape) -> str:
    return "x".join(str(s) for s in shape) if shape else "scalar"


def _parse_shape(text: str) -> tuple[int, ...]:
    return () if text == "scalar" else tuple(int(s) for s in text.split("x"))


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    lines = [f"{MAGIC} {FORMAT_VERSION}",
             f"dimension = {ckpt.dimension}",
             f"hidden_size = {ckpt.hidden_size}",
             f"step = {ckpt.step}",
             f"adam_t = {ckpt.adam_t}",
             f"rng_digest = {rng_digest(ckpt.config.seed, ckpt.step)}"]
    lines += [f"config.{ln}" for ln in format_config(ckpt.config).splitlines()]
    blobs = []
    for name, arr in ckpt.segments():
        blob = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
        blobs.append(blob)
        lines.append(f"segment {name} {_shape_str(np.shape(arr))} {zlib.crc32(blob):08x}")
    payload = b"".join(blobs)
    lines += [f"payload_bytes = {len(payload)}", "END"]
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode())
        fh.write(payload)
    return path


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    end = raw.find(b"\nEND\n")
    if end < 0:
        raise CheckpointError(f"{path}: missing header terminator")
    header = raw[:end].decode().splitlines()
    payload = raw[end + len(b"\nEND\n"):]

    magic = header[0].split()
    if len(magic) != 2 or magic[0] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if int(magic[1]) != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {magic[1]} unsupported (expected {FORMAT_VERSION})")

    meta, cfg_lines, segs = {}, [], []
    for line in header[1:]:
        if line.startswith("segment "):
            _, name, shape, crc = line.split()
            segs.append((name, _parse_shape(shape), int(crc, 16)))
        elif line.startswith("config."):
            cfg_lines.append(line[len("config."):])
        else:
            key, value = (s.strip() for s in line.split("=", 1))
            meta[key] = value
    try:
        config = parse_config("\n".join(cfg_lines))
    except ConfigError as exc:
        raise CheckpointError(f"{path}: bad config echo: {exc}") from None

    expected = sum(int(np.prod(s)) * _DTYPE.itemsize for _, s, _ in segs)
    declared = int(meta.get("payload_bytes", -1))
    if declared != expected:
        raise CheckpointError(
            f"{path}: header declares {declared} payload bytes but segments need {expected}")
    arrays, offset = {}, 0
    for name, shape, crc in segs:
        nbytes = int(np.prod(shape)) * _DTYPE.itemsize
        blob = payload[offset:offset + nbytes]
        if len(blob) != nbytes:
            raise CheckpointError(f"{path}: payload truncated in segment {name}")
        if zlib.crc32(blob) != crc:
            raise CheckpointError(f"{path}: checksum mismatch in segment {name}")
        arrays[name] = np.frombuffer(blob, dtype=_DTYPE).astype(np.float64).reshape(shape)
        offset += nbytes
    if offset != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - offset} trailing payload bytes")

    missing = [n for n in SEGMENTS if n not in arrays]
    if missing:
        raise CheckpointError(f"{path}: missing parameter segments {missing}")
    params = PolicyParams(**{n: arrays[n] for n in SEGMENTS})
    if params.dimension != int(meta["dimension"]) or params.hidden_size != int(meta["hidden_size"]):
        raise CheckpointError(f"{path}: header dimension/hidden size disagree with payload")

    def moments(prefix):
        names = [f"{prefix}.{n}" for n in SEGMENTS]
        if not all(n in arrays for n in names):
            return None
        return PolicyParams(**{n: arrays[f"{prefix}.{n}"] for n in SEGMENTS}).to_vector()

    return Checkpoint(params, config, int(meta.get("step", 0)), int(meta.get("adam_t", 0)),
                      moments("adam_m"), moments("adam_v"))
