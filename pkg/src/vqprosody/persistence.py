"""Checkpoint container and corpus manifests.

Container layout (all integers little-endian)::

    magic      4 bytes  b"VQPC"
    version    u16
    flags      u16      bit 0 set when float64 arrays were narrowed to float32
    n_arrays   u32
    payload    u64      payload length in bytes
    crc32      u32      over the table and the payload
    table      n_arrays x (u16 name length, UTF-8 name, u8 dtype code, u8 rank,
                           rank x u32 shape, u64 payload offset)
    payload    arrays back to back, row-major, little-endian

Float arrays are stored as IEEE-754 binary32.  Narrowing from float64 uses
round-to-nearest-even (numpy ``astype``), so a saved checkpoint reloads
bit-identically as float32 and a second save reproduces the same bytes.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import net, vq
from .errors import ConfigError, CorruptContainerError

MAGIC = b"VQPC"
VERSION = 1
FLAG_NARROWED = 0x1
_HEADER = struct.Struct("<4sHHIQI")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<i4"), 2: np.dtype("u1")}
_CODES = {v: k for k, v in _DTYPES.items()}


def _as_storable(arr) -> tuple[np.ndarray, bool]:
    a = np.asarray(arr)
    narrowed = False
    if a.dtype.kind == "f":
        narrowed = a.dtype.itemsize > 4
        a = a.astype("<f4")
    elif a.dtype.kind in "iu" and a.dtype != np.uint8:
        if a.size and (a.min() < -2**31 or a.max() >= 2**31):
            raise ConfigError("integer array out of int32 range")
        a = a.astype("<i4")
    elif a.dtype == np.bool_:
        a = a.astype("u1")
    elif a.dtype != np.uint8:
        raise ConfigError(f"unsupported dtype {a.dtype}")
    return np.array(a, order="C", copy=True), narrowed


def write_container(arrays: dict, path) -> None:
    """Write named arrays to ``path``; names are stored in sorted order."""
    table = bytearray()
    payload = bytearray()
    flags = 0
    for name in sorted(arrays):
        a, narrowed = _as_storable(arrays[name])
        if narrowed:
            flags |= FLAG_NARROWED
        raw = name.encode("utf-8")
        table += struct.pack("<H", len(raw)) + raw
        table += struct.pack("<BB", _CODES[a.dtype], a.ndim)
        table += struct.pack(f"<{a.ndim}I", *a.shape)
        table += struct.pack("<Q", len(payload))
        payload += a.tobytes(order="C")
    crc = zlib.crc32(bytes(table) + bytes(payload))
    header = _HEADER.pack(MAGIC, VERSION, flags, len(arrays), len(payload), crc)
    path = Path(path)
    try:
        path.write_bytes(header + bytes(table) + bytes(payload))
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write checkpoint {path}: {exc.strerror}") from exc


@dataclass
class Container:
    arrays: dict
    version: int
    flags: int

    @property
    def narrowed(self) -> bool:
        return bool(self.flags & FLAG_NARROWED)


def read_container(path) -> Container:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise CorruptContainerError(f"corrupt container {path}: truncated header")
    magic, version, flags, n, plen, crc = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise CorruptContainerError(f"corrupt container {path}: bad magic {magic!r}")
    if version != VERSION:
        raise CorruptContainerError(f"unsupported container version {version} in {path}")
    if len(data) < _HEADER.size + plen:
        raise CorruptContainerError(f"corrupt container {path}: truncated")
    body = data[_HEADER.size:]
    if len(body) - plen < 0 or zlib.crc32(body) != crc:
        raise CorruptContainerError(f"corrupt container {path}: checksum mismatch")
    table_len = len(body) - plen
    payload = body[table_len:]
    pos = 0
    arrays = {}
    try:
        for _ in range(n):
            (nlen,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos: pos + nlen].decode("utf-8")
            pos += nlen
            code, rank = struct.unpack_from("<BB", body, pos)
            pos += 2
            shape = struct.unpack_from(f"<{rank}I", body, pos)
            pos += 4 * rank
            (offset,) = struct.unpack_from("<Q", body, pos)
            pos += 8
            dt = _DTYPES[code]
            count = int(np.prod(shape, dtype=np.int64))
            end = offset + count * dt.itemsize
            if end > plen:
                raise CorruptContainerError(f"corrupt container {path}: array {name!r} overruns payload")
            arrays[name] = np.frombuffer(payload, dtype=dt, count=count, offset=offset).reshape(shape).copy()
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise CorruptContainerError(f"corrupt container {path}: bad table ({exc})") from exc
    if pos != table_len:
        raise CorruptContainerError(f"corrupt container {path}: table length mismatch")
    return Container(arrays, version, flags)


def _meta_array(meta: dict) -> np.ndarray:
    return np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)


def save_checkpoint(params: net.ParameterSet, book: vq.Codebook, counter: vq.CodebookCounter,
                    path, norm=None, extra_meta: dict | None = None) -> None:
    """Serialise parameters, codebook, counter and (optionally) feature normalisation."""
    arrays = {f"param.{k}": v for k, v in params.arrays.items()}
    arrays["codebook.entries"] = book.entries
    arrays["counter.accum"] = counter.accum
    arrays["counter.steps"] = np.array(counter.steps, dtype=np.int32)
    if norm is not None:
        arrays["norm.mean"] = norm.mean
        arrays["norm.std"] = norm.std
    meta = {"counter_mode": counter.mode, "seed": params.seed,
            "encoder": params.config.to_dict() if params.config is not None else None}
    meta.update(extra_meta or {})
    arrays["meta"] = _meta_array(meta)
    write_container(arrays, path)


@dataclass
class Checkpoint:
    params: net.ParameterSet
    book: vq.Codebook
    counter: vq.CodebookCounter
    norm: object = None
    meta: dict = field(default_factory=dict)


def load_checkpoint(path) -> Checkpoint:
    from .training import FeatureNorm

    c = read_container(path)
    a = c.arrays
    try:
        meta = json.loads(bytes(a["meta"]).decode("utf-8")) if "meta" in a else {}
        cfg = net.EncoderConfig.from_dict(meta["encoder"]) if meta.get("encoder") else None
        arrays = {k[len("param."):]: v.astype(np.float64) for k, v in a.items() if k.startswith("param.")}
        params = net.ParameterSet(arrays, seed=meta.get("seed"), config=cfg)
        book = vq.Codebook(a["codebook.entries"].astype(np.float64))
        counter = vq.CodebookCounter(a["counter.accum"].astype(np.float64), int(a["counter.steps"].reshape(-1)[0]),
                                     meta.get("counter_mode", "mean_then_abs"))
    except KeyError as exc:
        raise CorruptContainerError(f"corrupt container {path}: missing array {exc}") from exc
    norm = None
    if "norm.mean" in a:
        norm = FeatureNorm(a["norm.mean"].astype(np.float64), a["norm.std"].astype(np.float64))
    return Checkpoint(params, book, counter, norm, meta)


MANIFEST_FACTORS = ("base_f0", "tempo", "pitch_var")


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    audio: str
    factors: dict | None = None
    transcript: str | None = None

    def to_json(self) -> str:
        rec = {"id": self.id, "audio": self.audio}
        if self.factors:
            rec.update({k: float(self.factors[k]) for k in MANIFEST_FACTORS if k in self.factors})
        if self.transcript is not None:
            rec["transcript"] = self.transcript
        return json.dumps(rec, sort_keys=True)


def write_manifest(records, path) -> None:
    seen = set()
    lines = []
    for r in records:
        if r.id in seen:
            raise ConfigError(f"duplicate manifest id {r.id!r}")
        seen.add(r.id)
        lines.append(r.to_json())
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_manifest(path, check_paths: bool = True) -> list[ManifestRecord]:
    """Parse a JSON-lines manifest; audio paths are resolved relative to the manifest."""
    path = Path(path)
    out, seen = [], set()
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            uid, audio = str(rec["id"]), str(rec["audio"])
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigError(f"{path}:{lineno}: bad manifest record ({exc})") from exc
        if uid in seen:
            raise ConfigError(f"{path}:{lineno}: duplicate id {uid!r}")
        seen.add(uid)
        audio_path = Path(audio) if Path(audio).is_absolute() else path.parent / audio
        if check_paths and not audio_path.exists():
            raise ConfigError(f"{path}:{lineno}: missing audio {audio_path}")
        factors = {k: float(rec[k]) for k in MANIFEST_FACTORS if k in rec} or None
        out.append(ManifestRecord(uid, str(audio_path), factors, rec.get("transcript")))
    return out
