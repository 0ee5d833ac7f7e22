"""Binary persistence and synthetic feature generation.

Two little-endian container formats, both carrying 32-bit floats on disk
(widened to float64 in memory):

  feature file ("TPKF"): magic, version u32, ndim u32, dims u32 * ndim,
      row-major f32 payload.
  weight file ("TPKW"): magic, version u32, section count u32, then per
      section: name length u32, UTF-8 name, ndim u32, dims, f32 payload.
      Sections appear in the canonical order of ``expected_weight_shapes``.

There is no padding anywhere, so files are byte-for-byte reproducible.
Configs travel as strict JSON (exactly the ProjectorConfig field names;
unknown keys are rejected).
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from . import layout
from .projector import (
    ConfigError,
    LevelFeatures,
    ProjectorConfig,
    ProjectorWeights,
    expected_weight_shapes,
)
from .tensor import Array, Rng, as_tensor

FEATURE_MAGIC = b"TPKF"
WEIGHT_MAGIC = b"TPKW"
FORMAT_VERSION = 1


class FileFormatError(Exception):
    """Base class for container format violations."""


class BadMagicError(FileFormatError):
    pass


class TruncatedPayloadError(FileFormatError):
    pass


class SectionNameError(FileFormatError):
    pass


class SectionShapeError(FileFormatError):
    pass


class _Reader:
    def __init__(self, data: bytes, label: str):
        self.data = data
        self.pos = 0
        self.label = label

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedPayloadError(
                f"{self.label}: needed {n} bytes at offset {self.pos}, "
                f"only {len(self.data) - self.pos} left"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def done(self) -> None:
        if self.pos != len(self.data):
            raise TruncatedPayloadError(
                f"{self.label}: {len(self.data) - self.pos} unexpected trailing bytes"
            )


def _encode_array(t: Array) -> bytes:
    t = as_tensor(t)
    dims = struct.pack(f"<I{t.ndim}I", t.ndim, *t.shape)
    return dims + t.astype("<f4").tobytes(order="C")


def _decode_array(r: _Reader) -> Array:
    ndim = r.u32()
    dims = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
    count = 1
    for d in dims:
        count *= d
    payload = r.take(4 * count)
    flat = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return flat.reshape(dims)


def encode_tensor(t: Array) -> bytes:
    return FEATURE_MAGIC + struct.pack("<I", FORMAT_VERSION) + _encode_array(t)


def decode_tensor(data: bytes) -> Array:
    r = _Reader(data, "feature file")
    if r.take(4) != FEATURE_MAGIC:
        raise BadMagicError(f"bad magic, expected {FEATURE_MAGIC!r}")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise FileFormatError(f"unsupported feature file version {version}")
    t = _decode_array(r)
    r.done()
    return t


def save_tensor(path, t: Array) -> None:
    Path(path).write_bytes(encode_tensor(t))


def load_tensor(path) -> Array:
    return decode_tensor(Path(path).read_bytes())


def encode_weights(cfg: ProjectorConfig, weights: ProjectorWeights) -> bytes:
    sections = expected_weight_shapes(cfg)
    out = [WEIGHT_MAGIC, struct.pack("<II", FORMAT_VERSION, len(sections))]
    for name in sections:
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw)
        out.append(_encode_array(getattr(weights, name)))
    return b"".join(out)


def decode_weights(data: bytes, cfg: ProjectorConfig) -> ProjectorWeights:
    r = _Reader(data, "weight file")
    if r.take(4) != WEIGHT_MAGIC:
        raise BadMagicError(f"bad magic, expected {WEIGHT_MAGIC!r}")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise FileFormatError(f"unsupported weight file version {version}")
    count = r.u32()
    found: dict[str, Array] = {}
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        if name in found:
            raise SectionNameError(f"duplicate weight section '{name}'")
        found[name] = _decode_array(r)
    r.done()

    expected = expected_weight_shapes(cfg)
    unknown = set(found) - set(expected)
    if unknown:
        raise SectionNameError(f"unknown weight sections {sorted(unknown)}")
    missing = set(expected) - set(found)
    if missing:
        raise SectionNameError(f"missing weight sections {sorted(missing)}")
    for name, want in expected.items():
        if found[name].shape != want:
            raise SectionShapeError(
                f"section '{name}' has shape {found[name].shape}, config expects {want}"
            )
    return ProjectorWeights(**found)


def save_weights(path, cfg: ProjectorConfig, weights: ProjectorWeights) -> None:
    Path(path).write_bytes(encode_weights(cfg, weights))


def load_weights(path, cfg: ProjectorConfig) -> ProjectorWeights:
    return decode_weights(Path(path).read_bytes(), cfg)


_CONFIG_FIELDS = {f.name for f in dataclasses.fields(ProjectorConfig)}
_CONFIG_REQUIRED = ("channels", "grid_h", "grid_w", "scale", "out_dim")


def config_to_json(cfg: ProjectorConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_from_json(doc: dict) -> ProjectorConfig:
    unknown = set(doc) - _CONFIG_FIELDS
    if unknown:
        raise ConfigError(f"unknown config fields {sorted(unknown)}")
    missing = [k for k in _CONFIG_REQUIRED if k not in doc]
    if missing:
        raise ConfigError(f"missing config fields {missing}")
    return ProjectorConfig(**doc)


def save_config(path, cfg: ProjectorConfig) -> None:
    Path(path).write_text(json.dumps(config_to_json(cfg), indent=2) + "\n")


def load_config(path) -> ProjectorConfig:
    return config_from_json(json.loads(Path(path).read_text()))


def synth_features(seed: int, grid_h: int, grid_w: int, channels: int, levels: int) -> LevelFeatures:
    """Deterministic stand-in features in (-1, 1), no encoder required.

    Level i draws from stream seed + i; the query source uses seed + levels.
    """
    if min(grid_h, grid_w, channels, levels) < 1:
        raise ValueError("grid extents, channels and levels must be positive")
    shape = (grid_h, grid_w, channels)
    level_tensors = tuple(Rng(seed + i).uniform(-1.0, 1.0, shape) for i in range(levels))
    query_source = Rng(seed + levels).uniform(-1.0, 1.0, shape)
    return LevelFeatures(levels=level_tensors, query_source=query_source)


def save_token_sequence(directory, seq: layout.TokenSequence) -> None:
    """Persist a sequence as manifest.json plus a stacked blocks tensor."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = layout.sequence_manifest(seq)
    manifest["blocks_file"] = "blocks.tpkf"
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    save_tensor(directory / "blocks.tpkf", layout.stack_blocks(seq))


def load_token_sequence(directory) -> layout.TokenSequence:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    blocks = load_tensor(directory / manifest["blocks_file"])
    return layout.sequence_from_manifest(manifest, blocks)
