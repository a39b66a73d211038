"""Model configuration, named parameter store, and the checkpoint format.

Every trainable tensor has a unique dotted name and exactly one component
tag in {output, norm, encoder, decoder, embedding}; fine-tuning masks select
tensors by tag. Checkpoints are a little-endian binary container holding the
config as JSON plus each tensor as float32.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError, VersionError

COMPONENTS = ("output", "norm", "encoder", "decoder", "embedding")

_MAGIC = b"MMCP"
_VERSION = 1
_TAG_BYTE = {name: i for i, name in enumerate(COMPONENTS)}
_BYTE_TAG = {i: name for name, i in _TAG_BYTE.items()}


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ffn: int = 256
    n_classes: int = 2  # |E| + 1; class 0 is padding
    dropout: float = 0.1
    max_len: int = 64

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValidationError("d_model must be divisible by n_heads")
        if self.n_classes < 2:
            raise ValidationError("n_classes must be >= 2")
        if not (0.0 <= self.dropout < 1.0):
            raise ValidationError("dropout must be in [0, 1)")
        if min(self.d_model, self.n_heads, self.n_layers, self.d_ffn, self.max_len) < 1:
            raise ValidationError("all size fields must be >= 1")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return {
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_layers": self.n_layers,
            "d_ffn": self.d_ffn,
            "n_classes": self.n_classes,
            "dropout": self.dropout,
            "max_len": self.max_len,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        return cls(**doc)


def _attention_shapes(prefix: str, d: int, tag: str) -> list[tuple[str, tuple[int, ...], str]]:
    return [(f"{prefix}.{w}", (d, d), tag) for w in ("wq", "wk", "wv", "wo")]


def _norm_shapes(prefix: str, d: int) -> list[tuple[str, tuple[int, ...], str]]:
    return [(f"{prefix}.gain", (d,), "norm"), (f"{prefix}.bias", (d,), "norm")]


def _ffn_shapes(prefix: str, d: int, f: int, tag: str) -> list[tuple[str, tuple[int, ...], str]]:
    return [
        (f"{prefix}.w1", (d, f), tag),
        (f"{prefix}.b1", (f,), tag),
        (f"{prefix}.w2", (f, d), tag),
        (f"{prefix}.b2", (d,), tag),
    ]


def parameter_spec(config: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """Canonical (name, shape, tag) list; also fixes initialization order."""
    d, f = config.d_model, config.d_ffn
    spec: list[tuple[str, tuple[int, ...], str]] = [
        ("embed.spatial.w1", (2, d), "embedding"),
        ("embed.spatial.b1", (d,), "embedding"),
        ("embed.spatial.w2", (d, d), "embedding"),
        ("embed.spatial.b2", (d,), "embedding"),
        ("embed.position", (config.max_len, d), "embedding"),
        ("embed.query", (config.max_len, d), "embedding"),
    ]
    for i in range(config.n_layers):
        spec += _attention_shapes(f"enc.{i}.attn", d, "encoder")
        spec += _norm_shapes(f"enc.{i}.norm1", d)
        spec += _ffn_shapes(f"enc.{i}.ffn", d, f, "encoder")
        spec += _norm_shapes(f"enc.{i}.norm2", d)
    for i in range(config.n_layers):
        spec += _attention_shapes(f"dec.{i}.self", d, "decoder")
        spec += _norm_shapes(f"dec.{i}.norm1", d)
        spec += _attention_shapes(f"dec.{i}.cross", d, "decoder")
        spec += _norm_shapes(f"dec.{i}.norm2", d)
        spec += _ffn_shapes(f"dec.{i}.ffn", d, f, "decoder")
        spec += _norm_shapes(f"dec.{i}.norm3", d)
    spec.append(("out.w", (d, config.n_classes), "output"))
    spec.append(("out.b", (config.n_classes,), "output"))
    return spec


class ModelParameters:
    """Named tensor store with one component tag per tensor."""

    def __init__(self, tensors: dict[str, np.ndarray], tags: dict[str, str]):
        if set(tensors) != set(tags):
            raise ValidationError("tensor and tag names differ")
        for name, tag in tags.items():
            if tag not in COMPONENTS:
                raise ValidationError(f"unknown component tag {tag!r} on {name}")
        self.tensors = tensors
        self.tags = tags

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def n_params(self) -> int:
        return sum(t.size for t in self.tensors.values())

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.tensors.values())).dtype

    def copy(self) -> "ModelParameters":
        return ModelParameters({k: v.copy() for k, v in self.tensors.items()}, dict(self.tags))

    def astype(self, dtype) -> "ModelParameters":
        return ModelParameters({k: v.astype(dtype) for k, v in self.tensors.items()}, dict(self.tags))


def init_parameters(config: ModelConfig, seed: int, dtype=np.float32) -> ModelParameters:
    """Xavier-uniform matrices, N(0, 0.02) embedding tables, unit norms."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    tags: dict[str, str] = {}
    for name, shape, tag in parameter_spec(config):
        if name in ("embed.position", "embed.query"):
            value = rng.normal(0.0, 0.02, size=shape)
        elif name.endswith(".gain"):
            value = np.ones(shape)
        elif len(shape) == 1:
            value = np.zeros(shape)
        else:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            value = rng.uniform(-limit, limit, size=shape)
        tensors[name] = np.asarray(value, dtype=dtype)
        tags[name] = tag
    return ModelParameters(tensors, tags)


def validate_parameters(params: ModelParameters, config: ModelConfig) -> None:
    spec = parameter_spec(config)
    expected = {name: (shape, tag) for name, shape, tag in spec}
    if set(params.tensors) != set(expected):
        raise ValidationError("parameter names do not match the model config")
    for name, (shape, tag) in expected.items():
        if params.tensors[name].shape != shape:
            raise ValidationError(f"tensor {name} has shape {params.tensors[name].shape}, expected {shape}")
        if params.tags[name] != tag:
            raise ValidationError(f"tensor {name} tagged {params.tags[name]!r}, expected {tag!r}")


# -- checkpoint container ----------------------------------------------------


def save_checkpoint(path, params: ModelParameters, config: ModelConfig) -> None:
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", _VERSION))
    config_bytes = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<Q", len(config_bytes)))
    buf.write(config_bytes)
    names = sorted(params.tensors)
    buf.write(struct.pack("<Q", len(names)))
    for name in names:
        tensor = params.tensors[name]
        name_bytes = name.encode("utf-8")
        buf.write(struct.pack("<Q", len(name_bytes)))
        buf.write(name_bytes)
        buf.write(struct.pack("<Q", tensor.ndim))
        for dim in tensor.shape:
            buf.write(struct.pack("<Q", dim))
        buf.write(struct.pack("<B", _TAG_BYTE[params.tags[name]]))
        buf.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path, dtype=np.float32) -> tuple[ModelParameters, ModelConfig]:
    """Read a checkpoint, rejecting unknown versions and shape mismatches."""
    with open(path, "rb") as f:
        data = f.read()
    try:
        view = memoryview(data)
        if bytes(view[:4]) != _MAGIC:
            raise VersionError("not a model checkpoint (bad magic)")
        (version,) = struct.unpack_from("<I", view, 4)
        if version != _VERSION:
            raise VersionError(f"unsupported checkpoint version {version}")
        offset = 8
        (config_len,) = struct.unpack_from("<Q", view, offset)
        offset += 8
        config = ModelConfig.from_dict(json.loads(bytes(view[offset : offset + config_len]).decode("utf-8")))
        offset += config_len
        (n_tensors,) = struct.unpack_from("<Q", view, offset)
        offset += 8
        tensors: dict[str, np.ndarray] = {}
        tags: dict[str, str] = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack_from("<Q", view, offset)
            offset += 8
            name = bytes(view[offset : offset + name_len]).decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<Q", view, offset)
            offset += 8
            shape = struct.unpack_from(f"<{rank}Q", view, offset)
            offset += 8 * rank
            (tag_byte,) = struct.unpack_from("<B", view, offset)
            offset += 1
            if tag_byte not in _BYTE_TAG:
                raise VersionError(f"unknown component tag byte {tag_byte}")
            count = int(np.prod(shape, dtype=np.int64)) if rank else 1
            raw = np.frombuffer(view, dtype="<f4", count=count, offset=offset).reshape(shape)
            offset += 4 * count
            tensors[name] = raw.astype(dtype)
            tags[name] = _BYTE_TAG[tag_byte]
    except (struct.error, json.JSONDecodeError, UnicodeDecodeError, ValueError, TypeError) as exc:
        raise VersionError(f"corrupt checkpoint {path}: {exc}") from exc
    params = ModelParameters(tensors, tags)
    validate_parameters(params, config)
    return params, config
