"""Versioned, checksummed checkpoint files.

File layout::

    DORAKIT-CKPT <version>\\n
    manifest_bytes=<n>\\n
    <n bytes of UTF-8 manifest, one "key=value" per line>
    <payload: raw little-endian float64 arrays, back to back>
    <sha256 hex digest of every preceding byte>\\n

Manifest keys are ``config`` and ``schema`` (canonical JSON), ``schema_digest``,
``normalizer`` (column names as JSON, or empty), ``history`` (JSON list of
per-epoch rows) and one ``tensor.<name>=<offset>:<shape>`` line per array,
offsets counted in bytes from the start of the payload. Nothing time-dependent
is written, so identical models produce identical files.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
from numpy.typing import NDArray

from .errors import CheckpointError, SchemaError
from .model import ModelConfig, ModelParams, init_params
from .schema import FeatureSchema, Normalizer

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

FORMAT_VERSION = 1
MAGIC = b"DORAKIT-CKPT"
_DIGEST_LEN = 64
_DTYPE = np.dtype("<f8")

_NORM_MEAN = "normalizer.mean"
_NORM_STD = "normalizer.std"


@dataclass(eq=False)
class Checkpoint:
    """A trained model plus what is needed to feed it new data.

    ``history`` holds one mapping per pre-training epoch (``epoch``, ``loss``,
    ``ce``, ``cl``, ``macro_f1``, ``micro_f1``).
    """

    params: ModelParams
    schema: FeatureSchema
    normalizer: Optional[Normalizer] = None
    history: list[dict[str, float]] = field(default_factory=list)

    @property
    def config(self) -> ModelConfig:
        return self.params.config

    def check_schema(self, schema: FeatureSchema) -> None:
        """Raise :class:`SchemaError` unless ``schema`` can feed this model.

        Town tables may differ: the pretext head is not used downstream.
        """
        mine, theirs = self.schema, schema
        same = (
            mine.numerical_re == theirs.numerical_re
            and mine.categorical_re == theirs.categorical_re
            and mine.econ_geo == theirs.econ_geo
            and mine.poi == theirs.poi
        )
        if not same:
            raise SchemaError("data schema does not match the checkpoint's feature schema")


def _config_dict(config: ModelConfig) -> dict[str, Any]:
    data = asdict(config)
    data["feature_subset"] = config.feature_subset.value
    data["encoder_multipliers"] = list(config.encoder_multipliers)
    return data


def _canonical(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _tensors(ckpt: Checkpoint) -> dict[str, NDArray[np.float64]]:
    tensors = dict(ckpt.params.parameters())
    if ckpt.normalizer is not None:
        tensors[_NORM_MEAN] = ckpt.normalizer.mean
        tensors[_NORM_STD] = ckpt.normalizer.std
    return tensors


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    """Serialize ``ckpt`` to the on-disk byte layout."""
    tensors = _tensors(ckpt)
    lines = [
        f"config={_canonical(_config_dict(ckpt.config))}",
        f"schema={_canonical(ckpt.schema.to_dict())}",
        f"schema_digest={ckpt.schema.digest()}",
        "normalizer="
        + (_canonical(list(ckpt.normalizer.columns)) if ckpt.normalizer is not None else ""),
        f"history={_canonical(ckpt.history)}",
    ]
    payload = bytearray()
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype=_DTYPE)
        shape = ",".join(str(d) for d in arr.shape)
        lines.append(f"tensor.{name}={len(payload)}:{shape}")
        payload += arr.tobytes()
    manifest = ("\n".join(lines) + "\n").encode("utf-8")
    body = (
        MAGIC
        + f" {FORMAT_VERSION}\n".encode("ascii")
        + f"manifest_bytes={len(manifest)}\n".encode("ascii")
        + manifest
        + bytes(payload)
    )
    digest = hashlib.sha256(body).hexdigest().encode("ascii")
    return body + digest + b"\n"


def save_checkpoint(ckpt: Checkpoint, path: PathLike) -> None:
    """Write ``ckpt`` atomically (temp file in the target directory, then rename)."""
    path = Path(path)
    data = encode_checkpoint(ckpt)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    logger.debug("wrote checkpoint %s (%d bytes)", path, len(data))


def _readline(data: bytes, pos: int) -> tuple[bytes, int]:
    end = data.find(b"\n", pos)
    if end < 0:
        raise CheckpointError("truncated checkpoint header")
    return data[pos:end], end + 1


def decode_checkpoint(data: bytes) -> Checkpoint:
    """Parse and verify checkpoint bytes.

    Raises
    ------
    CheckpointError
        Bad magic, unsupported version, truncation, checksum mismatch, or a
        malformed manifest.
    """
    head, pos = _readline(data, 0)
    parts = head.split(b" ")
    if len(parts) != 2 or parts[0] != MAGIC:
        raise CheckpointError("not a dorakit checkpoint")
    try:
        version = int(parts[1])
    except ValueError:
        raise CheckpointError(f"unreadable format version {parts[1]!r}") from None
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version} is not supported (expected {FORMAT_VERSION})"
        )

    if len(data) < _DIGEST_LEN + 1 or not data.endswith(b"\n"):
        raise CheckpointError("truncated checkpoint")
    body, trailer = data[: -_DIGEST_LEN - 1], data[-_DIGEST_LEN - 1 : -1]
    if hashlib.sha256(body).hexdigest().encode("ascii") != trailer:
        raise CheckpointError("checksum mismatch: checkpoint is truncated or corrupted")

    line, pos = _readline(body, pos)
    key, _, value = line.decode("ascii", "replace").partition("=")
    if key != "manifest_bytes" or not value.isdigit():
        raise CheckpointError("missing manifest length")
    n = int(value)
    payload = body[pos + n :]

    entries: dict[str, str] = {}
    tensors: dict[str, NDArray[np.float64]] = {}
    try:
        manifest = body[pos : pos + n].decode("utf-8")
        for raw in manifest.splitlines():
            k, _, v = raw.partition("=")
            if k.startswith("tensor."):
                offset, _, shape_text = v.partition(":")
                shape = tuple(int(d) for d in shape_text.split(",") if d)
                count = int(np.prod(shape, dtype=np.int64))
                start = int(offset)
                if start + count * _DTYPE.itemsize > len(payload):
                    raise CheckpointError(f"tensor {k[7:]!r} runs past the payload")
                arr = np.frombuffer(payload, dtype=_DTYPE, count=count, offset=start)
                tensors[k[7:]] = arr.astype(np.float64).reshape(shape)
            else:
                entries[k] = v
        config = ModelConfig(**json.loads(entries["config"]))
        schema = FeatureSchema.from_dict(json.loads(entries["schema"]))
        history = json.loads(entries["history"])
        norm_columns = json.loads(entries["normalizer"]) if entries["normalizer"] else None
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"malformed checkpoint manifest: {exc}") from exc
    if schema.digest() != entries.get("schema_digest"):
        raise CheckpointError("schema digest does not match the stored schema")

    normalizer = None
    if norm_columns is not None:
        try:
            normalizer = Normalizer(
                tuple(norm_columns), tensors.pop(_NORM_MEAN), tensors.pop(_NORM_STD)
            )
        except (KeyError, ValueError) as exc:
            raise CheckpointError(f"malformed normalizer block: {exc}") from exc

    params = init_params(config, schema, seed=0)
    try:
        params.load_state(tensors)
    except SchemaError as exc:
        raise CheckpointError(str(exc)) from exc
    return Checkpoint(params=params, schema=schema, normalizer=normalizer, history=history)


def load_checkpoint(path: PathLike) -> Checkpoint:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Raises
    ------
    FileNotFoundError
        ``path`` does not exist.
    CheckpointError
        The file is not a valid checkpoint (see :func:`decode_checkpoint`).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    return decode_checkpoint(path.read_bytes())
