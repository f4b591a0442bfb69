"""Checkpoint and calibration-batch file formats.

Checkpoint: a directory holding ``manifest.json`` and ``weights.bin``.  The
blob stores each layer's weight row-major as little-endian float32 at the
offset recorded in the manifest.

Calibration: one binary file::

    b"CALB" | u32le version=1 | u32le n_tokens | u32le c_in | f32le payload

Loaders validate everything and never repair; each kind of violation raises
its own exception class.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    ArgumentError,
    BlobLengthError,
    CalibrationFormatError,
    ManifestError,
    MissingFileError,
    NonFiniteError,
    ShapeChainError,
    ShapeError,
    TruncatedCalibrationError,
)

CHECKPOINT_VERSION = 1
CALIB_MAGIC = b"CALB"
CALIB_VERSION = 1
MANIFEST_NAME = "manifest.json"
BLOB_NAME = "weights.bin"
_F32LE = np.dtype("<f4")
_HEADER = struct.Struct("<4sIII")


class Activation(str, Enum):
    NONE = "none"
    RELU = "relu"

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self is Activation.RELU:
            return np.maximum(x, 0.0)
        return x


@dataclass(frozen=True)
class LinearLayer:
    """One linear map ``y = act(x @ weight.T)``; weight has shape (C_out, C_in)."""

    name: str
    weight: np.ndarray
    activation: Activation = Activation.NONE

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float32)
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
            raise ShapeError(f"layer {self.name!r}: weight must be 2-D and non-empty, got {w.shape}")
        bad = np.flatnonzero(~np.isfinite(w))
        if bad.size:
            raise NonFiniteError(
                f"layer {self.name!r}: non-finite weight at flat index {bad[0]}",
                layer=self.name, index=int(bad[0]),
            )
        w = np.ascontiguousarray(w)
        w.flags.writeable = False
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "activation", Activation(self.activation))

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]

    @property
    def c_in(self) -> int:
        return self.weight.shape[1]


@dataclass(frozen=True)
class ModelCheckpoint:
    layers: tuple[LinearLayer, ...]
    version: int = CHECKPOINT_VERSION

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ArgumentError("a checkpoint needs at least one layer")
        for prev, cur in zip(layers, layers[1:]):
            if prev.c_out != cur.c_in:
                raise ShapeChainError(
                    f"layer {cur.name!r} has c_in={cur.c_in} but {prev.name!r} has c_out={prev.c_out}",
                    layer=cur.name,
                )
        object.__setattr__(self, "layers", layers)

    @property
    def c_in(self) -> int:
        return self.layers[0].c_in

    def replace_weights(self, weights) -> "ModelCheckpoint":
        return ModelCheckpoint(
            tuple(LinearLayer(l.name, w, l.activation) for l, w in zip(self.layers, weights, strict=True)),
            self.version,
        )


@dataclass(frozen=True)
class CalibrationBatch:
    """Token-by-feature activations, shape (n_tokens, c_in)."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float32)
        if d.ndim != 2 or d.shape[0] < 1 or d.shape[1] < 1:
            raise ShapeError(f"calibration data must be 2-D and non-empty, got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ArgumentError("calibration data contains non-finite values")
        d = np.ascontiguousarray(d)
        d.flags.writeable = False
        object.__setattr__(self, "data", d)

    @property
    def n_tokens(self) -> int:
        return self.data.shape[0]

    @property
    def c_in(self) -> int:
        return self.data.shape[1]


def _manifest(m: ModelCheckpoint) -> dict:
    entries, offset = [], 0
    for layer in m.layers:
        nbytes = layer.weight.size * 4
        entries.append(
            {
                "name": layer.name,
                "c_out": layer.c_out,
                "c_in": layer.c_in,
                "activation": layer.activation.value,
                "weight_offset": offset,
                "weight_nbytes": nbytes,
                "dtype": "f32le",
            }
        )
        offset += nbytes
    return {"version": m.version, "layers": entries}


def save_checkpoint(m: ModelCheckpoint, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_manifest(m), indent=2) + "\n"
    (path / MANIFEST_NAME).write_text(text, encoding="utf-8")
    with open(path / BLOB_NAME, "wb") as fh:
        for layer in m.layers:
            fh.write(layer.weight.astype(_F32LE, copy=False).tobytes(order="C"))


def _field(entry: dict, key: str, kind, idx: int, path):
    if key not in entry:
        raise ManifestError(f"layer {idx}: missing field {key!r}", path)
    value = entry[key]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ManifestError(f"layer {idx}: field {key!r} must be an integer", path)
    if kind is str and not isinstance(value, str):
        raise ManifestError(f"layer {idx}: field {key!r} must be a string", path)
    return value


def load_checkpoint(path) -> ModelCheckpoint:
    path = Path(path)
    mpath, bpath = path / MANIFEST_NAME, path / BLOB_NAME
    for p in (mpath, bpath):
        if not p.is_file():
            raise MissingFileError(f"missing {p}", p)
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ManifestError(f"{mpath}: malformed JSON ({exc})", mpath) from exc
    if not isinstance(manifest, dict):
        raise ManifestError(f"{mpath}: top level must be an object", mpath)
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise ManifestError(f"{mpath}: unsupported version {manifest.get('version')!r}", mpath)
    entries = manifest.get("layers")
    if not isinstance(entries, list) or not entries:
        raise ManifestError(f"{mpath}: 'layers' must be a non-empty array", mpath)

    blob = bpath.read_bytes()
    layers = []
    expected_total = 0
    for idx, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise ManifestError(f"layer {idx}: entry must be an object", mpath)
        name = _field(entry, "name", str, idx, mpath)
        c_out = _field(entry, "c_out", int, idx, mpath)
        c_in = _field(entry, "c_in", int, idx, mpath)
        act = _field(entry, "activation", str, idx, mpath)
        offset = _field(entry, "weight_offset", int, idx, mpath)
        nbytes = _field(entry, "weight_nbytes", int, idx, mpath)
        dtype = _field(entry, "dtype", str, idx, mpath)
        if dtype != "f32le":
            raise ManifestError(f"layer {name!r}: unsupported dtype {dtype!r}", mpath)
        if act not in ("none", "relu"):
            raise ManifestError(f"layer {name!r}: unknown activation {act!r}", mpath)
        if c_out < 1 or c_in < 1:
            raise ManifestError(f"layer {name!r}: dimensions must be >= 1", mpath)
        if layers and layers[-1][2] != c_in:
            raise ShapeChainError(
                f"layer {name!r} (index {idx}) has c_in={c_in} but previous layer has c_out={layers[-1][2]}",
                layer=name, path=mpath,
            )
        if nbytes != c_out * c_in * 4:
            raise BlobLengthError(
                f"layer {name!r}: weight_nbytes={nbytes} but shape needs {c_out * c_in * 4}", bpath
            )
        if offset < 0 or offset + nbytes > len(blob):
            raise BlobLengthError(
                f"layer {name!r}: bytes [{offset}, {offset + nbytes}) outside blob of {len(blob)} bytes", bpath
            )
        layers.append((name, act, c_out, c_in, offset, nbytes))
        expected_total += nbytes
    if expected_total != len(blob):
        raise BlobLengthError(f"{bpath}: {len(blob)} bytes, manifest accounts for {expected_total}", bpath)

    out = []
    for name, act, c_out, c_in, offset, nbytes in layers:
        w = np.frombuffer(blob, dtype=_F32LE, count=c_out * c_in, offset=offset).reshape(c_out, c_in)
        bad = np.flatnonzero(~np.isfinite(w))
        if bad.size:
            raise NonFiniteError(
                f"layer {name!r}: non-finite value at flat index {bad[0]}", layer=name, index=int(bad[0]), path=bpath
            )
        out.append(LinearLayer(name, w.astype(np.float32), Activation(act)))
    return ModelCheckpoint(tuple(out), manifest["version"])


def save_calibration(b: CalibrationBatch, path) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CALIB_MAGIC, CALIB_VERSION, b.n_tokens, b.c_in))
        fh.write(b.data.astype(_F32LE, copy=False).tobytes(order="C"))


def load_calibration(path) -> CalibrationBatch:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"missing {path}", path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise TruncatedCalibrationError(f"{path}: file shorter than the {_HEADER.size}-byte header", path)
    magic, version, n_tokens, c_in = _HEADER.unpack_from(raw)
    if magic != CALIB_MAGIC:
        raise CalibrationFormatError(f"{path}: bad magic {magic!r}", path)
    if version != CALIB_VERSION:
        raise CalibrationFormatError(f"{path}: unsupported version {version}", path)
    if n_tokens < 1 or c_in < 1:
        raise CalibrationFormatError(f"{path}: empty batch ({n_tokens}x{c_in})", path)
    need = n_tokens * c_in * 4
    payload = raw[_HEADER.size:]
    if len(payload) < need:
        raise TruncatedCalibrationError(f"{path}: payload has {len(payload)} bytes, header declares {need}", path)
    if len(payload) > need:
        raise CalibrationFormatError(f"{path}: {len(payload) - need} trailing bytes after payload", path)
    data = np.frombuffer(payload, dtype=_F32LE).reshape(n_tokens, c_in)
    bad = np.flatnonzero(~np.isfinite(data))
    if bad.size:
        raise CalibrationFormatError(f"{path}: non-finite value at flat index {bad[0]}", path)
    return CalibrationBatch(data.astype(np.float32))
