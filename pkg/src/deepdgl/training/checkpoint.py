"""Checkpoint container: a text manifest followed by named binary arrays.

Layout::

    DEEPDGL-CHECKPOINT 1
    key = <json value>
    ...
    [arrays]
    <record> <record> ...

Each record is ``<u32 name length><name utf-8><u8 tag length><tag><u32 rank>
<i64 x rank shape><row-major little-endian payload>`` with tag ``f32``, ``f64``
or ``i64``.
"""

import hashlib
import io
import json
import logging
import struct
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import torch

from deepdgl.config import ModelConfig
from deepdgl.errors import CheckpointFormatError
from deepdgl.model import DeepDGL

logger = logging.getLogger(__name__)

MAGIC = "DEEPDGL-CHECKPOINT 1"
ARRAYS_MARKER = "[arrays]"

_TAGS = {
    np.dtype("<f4"): "f32",
    np.dtype("<f8"): "f64",
    np.dtype("<i8"): "i64",
}
_DTYPES = {tag: dtype for dtype, tag in _TAGS.items()}


def _tag_for(array: np.ndarray) -> str:
    dtype = array.dtype.newbyteorder("<")
    if dtype not in _TAGS:
        raise CheckpointFormatError(f"Unsupported array dtype {array.dtype}")
    return _TAGS[dtype]


def _flatten_config(prefix: str, config: Mapping[str, Any]) -> dict[str, Any]:
    return {
        f"{prefix}.{key}": list(value) if isinstance(value, tuple) else value
        for key, value in config.items()
    }


@dataclass
class Checkpoint:
    """Manifest key-values and named arrays of one trained model."""

    manifest: dict[str, Any]
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_model(
        cls, model: DeepDGL, extra: Optional[Mapping[str, Any]] = None
    ) -> "Checkpoint":
        """Snapshot parameters and buffers (detached copies)."""
        manifest = {"variant": model.cfg.variant}
        manifest.update(_flatten_config("model", model.cfg.model_dump()))
        manifest.update(extra or {})
        arrays = {
            name: tensor.detach().cpu().numpy().copy()
            for name, tensor in model.state_dict().items()
        }
        return cls(manifest=manifest, arrays=arrays)

    @property
    def model_config(self) -> ModelConfig:
        fields = {
            key[len("model.") :]: value
            for key, value in self.manifest.items()
            if key.startswith("model.")
        }
        return ModelConfig(**fields)

    @property
    def variant(self) -> str:
        return str(self.manifest["variant"])

    def build_model(self) -> DeepDGL:
        """A model in eval mode holding exactly the stored arrays."""
        model = DeepDGL(self.model_config)
        if any(a.dtype == np.float64 for a in self.arrays.values()):
            model = model.double()
        state = {name: torch.from_numpy(array.copy()) for name, array in self.arrays.items()}
        model.load_state_dict(state, strict=True)
        model.eval()
        return model

    def checksum(self) -> str:
        """SHA-256 over array names, tags, shapes and payloads."""
        digest = hashlib.sha256()
        for name, array in self.arrays.items():
            tag = _tag_for(array)
            digest.update(name.encode("utf-8"))
            digest.update(tag.encode("ascii"))
            digest.update(str(array.shape).encode("ascii"))
            digest.update(np.ascontiguousarray(array, dtype=_DTYPES[tag]).tobytes())
        return digest.hexdigest()

    def to_bytes(self) -> bytes:
        out = io.BytesIO()
        lines = [MAGIC]
        lines += [f"{key} = {json.dumps(value)}" for key, value in self.manifest.items()]
        lines.append(ARRAYS_MARKER)
        out.write(("\n".join(lines) + "\n").encode("utf-8"))
        for name, array in self.arrays.items():
            tag = _tag_for(array)
            encoded = name.encode("utf-8")
            out.write(struct.pack("<I", len(encoded)))
            out.write(encoded)
            out.write(struct.pack("<B", len(tag)))
            out.write(tag.encode("ascii"))
            out.write(struct.pack("<I", array.ndim))
            out.write(struct.pack(f"<{array.ndim}q", *array.shape))
            out.write(np.ascontiguousarray(array, dtype=_DTYPES[tag]).tobytes())
        return out.getvalue()

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_bytes(self.to_bytes())
        logger.info("Saved checkpoint to %s (%d arrays)", path, len(self.arrays))

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        marker = f"\n{ARRAYS_MARKER}\n".encode("utf-8")
        split = data.find(marker)
        if split < 0:
            raise CheckpointFormatError(f"Missing '{ARRAYS_MARKER}' section")
        header = data[:split].decode("utf-8").split("\n")
        if header[0] != MAGIC:
            raise CheckpointFormatError(f"Not a checkpoint (first line '{header[0][:40]}')")
        manifest: dict[str, Any] = {}
        for number, line in enumerate(header[1:], start=2):
            key, sep, value = line.partition(" = ")
            if not sep:
                raise CheckpointFormatError(f"Malformed manifest line {number}: '{line}'")
            try:
                manifest[key] = json.loads(value)
            except json.JSONDecodeError as exc:
                raise CheckpointFormatError(
                    f"Manifest line {number} has an invalid value: {exc}"
                ) from None

        arrays: dict[str, np.ndarray] = {}
        view = memoryview(data)
        pos = split + len(marker)

        def take(n: int) -> memoryview:
            nonlocal pos
            if pos + n > len(data):
                raise CheckpointFormatError("Checkpoint is truncated")
            chunk = view[pos : pos + n]
            pos += n
            return chunk

        while pos < len(data):
            (name_len,) = struct.unpack("<I", take(4))
            name = bytes(take(name_len)).decode("utf-8")
            (tag_len,) = struct.unpack("<B", take(1))
            tag = bytes(take(tag_len)).decode("ascii")
            if tag not in _DTYPES:
                raise CheckpointFormatError(f"Array '{name}' has unknown tag '{tag}'")
            (rank,) = struct.unpack("<I", take(4))
            shape = struct.unpack(f"<{rank}q", take(8 * rank))
            dtype = _DTYPES[tag]
            count = int(np.prod(shape, dtype=np.int64))
            payload = take(count * dtype.itemsize)
            arrays[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
        return cls(manifest=manifest, arrays=arrays)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())
