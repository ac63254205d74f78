"""On-disk formats: WAV audio, feature matrices, tensor checkpoints, unit files.

Feature matrix container (little-endian)::

    magic   4 bytes  b"UTFM"
    version u16
    dtype   u8       0 = float32, 1 = float64, 2 = int64
    ndim    u8
    dims    ndim * u64
    payload row-major

Checkpoint container::

    magic   4 bytes  b"UTCK"
    version u16
    hlen    u64      length of the JSON header
    header  JSON     {"meta": {...}, "tensors": [[name, dtype, shape, offset, nbytes], ...]}
    payload concatenated row-major tensors

Both writers are byte-deterministic for identical inputs.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import DataError, InvalidInputError
from .signal import Waveform

MATRIX_MAGIC = b"UTFM"
CKPT_MAGIC = b"UTCK"
FORMAT_VERSION = 1

_DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


# ---------------------------------------------------------------- audio


def read_wav(path) -> Waveform:
    """Read a mono 16-bit PCM or float WAV as samples in [-1, 1]."""
    try:
        rate, data = wavfile.read(str(path))
    except (ValueError, OSError, EOFError, struct.error) as exc:
        raise DataError(f"cannot decode {path}: {exc}") from exc
    if data.ndim != 1:
        raise DataError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise DataError(f"{path}: unsupported sample format {data.dtype}")
    if samples.shape[0] == 0:
        raise DataError(f"{path}: no samples")
    return Waveform(samples, rate)


def write_wav(path, w: Waveform, pcm16: bool = True) -> None:
    x = np.clip(w.samples, -1.0, 1.0)
    if pcm16:
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = x.astype(np.float32)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), w.sample_rate, data)


def wav_duration(path) -> float:
    return read_wav(path).duration


# ---------------------------------------------------------------- feature matrices


def write_matrix(path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr)
    if arr.dtype not in _DTYPE_CODES:
        raise InvalidInputError(f"unsupported dtype {arr.dtype}")
    header = MATRIX_MAGIC + struct.pack("<HBB", FORMAT_VERSION, _DTYPE_CODES[arr.dtype], arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C"))


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MATRIX_MAGIC:
        raise DataError(f"{path}: not a feature matrix file")
    version, code, ndim = struct.unpack_from("<HBB", blob, 4)
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported container version {version}")
    shape = struct.unpack_from(f"<{ndim}Q", blob, 8)
    dtype = _CODE_DTYPES[code].newbyteorder("<")
    offset = 8 + 8 * ndim
    count = int(np.prod(shape)) if ndim else 1
    return np.frombuffer(blob, dtype=dtype, count=count, offset=offset).reshape(shape).astype(_CODE_DTYPES[code])


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict) -> str:
    """Write tensors + JSON metadata; returns the sha256 of the file."""
    entries = []
    payload = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        if arr.dtype not in _DTYPE_CODES:
            arr = arr.astype(np.float64)
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C")
        entries.append([name, str(arr.dtype), list(arr.shape), offset, len(raw)])
        payload.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "tensors": entries}, sort_keys=True, separators=(",", ":")).encode()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<HQ", FORMAT_VERSION, len(header)))
        fh.write(header)
        for raw in payload:
            fh.write(raw)
    os.replace(tmp, path)
    return file_sha256(path)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CKPT_MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<HQ", blob, 4)
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    start = 14
    header = json.loads(blob[start : start + hlen])
    base = start + hlen
    tensors = {}
    for name, dtype, shape, offset, nbytes in header["tensors"]:
        dt = np.dtype(dtype)
        arr = np.frombuffer(blob, dtype=dt.newbyteorder("<"), count=nbytes // dt.itemsize, offset=base + offset)
        tensors[name] = arr.reshape(shape).astype(dt)
    return tensors, header["meta"]


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------- symbol files


def write_symbol_file(path, seqs: dict[str, list]) -> None:
    """``utterance_id<TAB>s1 s2 ...`` per line, in insertion order."""
    lines = []
    for utt_id, seq in seqs.items():
        if "\t" in utt_id or "\n" in utt_id:
            raise InvalidInputError(f"utterance id {utt_id!r} contains a tab or newline")
        lines.append(f"{utt_id}\t{' '.join(str(s) for s in seq)}\n")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(lines)


def read_symbol_file(path, as_int: bool = False) -> dict[str, list]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise DataError(f"{path}:{lineno}: missing tab separator")
            utt_id, body = line.split("\t", 1)
            toks = body.split()
            out[utt_id] = [int(t) for t in toks] if as_int else toks
    return out
