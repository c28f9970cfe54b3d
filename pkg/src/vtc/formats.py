"""Binary and JSONL file formats.

VTCF frame files:  magic "VTCF", u32 LE version (=1), u32 LE frame count,
u32 LE embedding width, then frame_count x width IEEE-754 float32 LE values
in row-major order.

VTCP parameter files:  magic "VTCP", u32 LE version (=1), u32 LE metadata
byte length, metadata (UTF-8, typically the run configuration), u32 LE
parameter count, then per parameter: u32 LE id byte length, id (UTF-8),
u32 LE rows, u32 LE cols, rows x cols float32 LE values row-major.

Both readers fail with a FormatError carrying the byte offset of the first
problem and never return a partially parsed object.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .autodiff import Parameter
from .encoding import TextItem, VideoItem

FRAME_MAGIC = b"VTCF"
PARAM_MAGIC = b"VTCP"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """Malformed file; offset is the byte position of the first problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"truncated while reading {what}", self.pos)
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def _check_header(r: _Reader, magic: bytes) -> None:
    got = r.take(4, "magic")
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}", 0)
    version = r.u32("version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}", 4)


def write_frame_file(path: str | Path, video: VideoItem) -> None:
    t, o = video.frames.shape
    payload = video.frames.astype("<f4").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(FRAME_MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, t, o))
        fh.write(payload)


def read_frame_file(path: str | Path, expect_dim: int | None = None) -> VideoItem:
    blob = Path(path).read_bytes()
    r = _Reader(blob)
    _check_header(r, FRAME_MAGIC)
    t = r.u32("frame count")
    o = r.u32("embedding width")
    if t < 1 or o < 1:
        raise FormatError(f"invalid dimensions {t}x{o}", 8)
    if expect_dim is not None and o != expect_dim:
        raise FormatError(f"embedding width {o} does not match configured {expect_dim}", 12)
    payload = r.take(4 * t * o, "frame payload")
    if r.pos != len(blob):
        raise FormatError("trailing bytes after payload", r.pos)
    frames = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(t, o)
    return VideoItem(video_id=Path(path).stem, frames=frames)


def write_checkpoint(path: str | Path, params: list[Parameter], meta: str = "") -> None:
    meta_bytes = meta.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(PARAM_MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(params)))
        for p in params:
            id_bytes = p.id.encode("utf-8")
            fh.write(struct.pack("<I", len(id_bytes)))
            fh.write(id_bytes)
            fh.write(struct.pack("<II", p.rows, p.cols))
            fh.write(p.data.astype("<f4").tobytes(order="C"))


def read_checkpoint(path: str | Path) -> tuple[str, dict[str, np.ndarray]]:
    """Return (metadata, {parameter id: float64 value array})."""
    blob = Path(path).read_bytes()
    r = _Reader(blob)
    _check_header(r, PARAM_MAGIC)
    meta_len = r.u32("metadata length")
    meta = r.take(meta_len, "metadata").decode("utf-8")
    count = r.u32("parameter count")
    values: dict[str, np.ndarray] = {}
    for _ in range(count):
        id_len = r.u32("parameter id length")
        at = r.pos
        pid = r.take(id_len, "parameter id").decode("utf-8")
        if pid in values:
            raise FormatError(f"duplicate parameter id {pid!r}", at)
        rows = r.u32("rows")
        cols = r.u32("cols")
        payload = r.take(4 * rows * cols, f"payload of {pid!r}")
        values[pid] = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(rows, cols)
    if r.pos != len(blob):
        raise FormatError("trailing bytes after last parameter", r.pos)
    return meta, values


def load_into(params: list[Parameter], values: dict[str, np.ndarray]) -> None:
    """Overwrite parameter values from a checkpoint dict, matching by id."""
    for p in params:
        if p.id not in values:
            raise KeyError(f"checkpoint is missing parameter {p.id!r}")
        v = values[p.id]
        if v.shape != p.shape:
            raise FormatError(f"parameter {p.id!r} has shape {v.shape}, expected {p.shape}", 0)
        p.data = v.copy()
        p.grad = np.zeros_like(p.data)


# --- JSONL interchange ------------------------------------------------------

def read_corpus_manifest(path: str | Path) -> list[TextItem]:
    """One object per line: {"text_id": ..., "text": ..., "video_id": ...}."""
    items = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            try:
                items.append(TextItem.from_raw(obj["text_id"], obj["text"], obj["video_id"]))
            except KeyError as exc:
                raise ValueError(f"{path}:{lineno}: missing key {exc}") from None
    return items


def write_corpus_manifest(path: str | Path, items: list[TextItem]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for it in items:
            fh.write(json.dumps({"text_id": it.text_id, "text": it.raw,
                                 "video_id": it.video_id}) + "\n")


def write_embeddings_jsonl(path: str | Path, embeddings: dict[str, np.ndarray]) -> None:
    """One object per line: {"id": ..., "vectors": [[...], ...]}."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, vec in embeddings.items():
            arr = np.atleast_2d(np.asarray(vec, dtype=np.float64))
            fh.write(json.dumps({"id": key, "vectors": arr.tolist()}) + "\n")


def read_embeddings_jsonl(path: str | Path) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            try:
                out[obj["id"]] = np.asarray(obj["vectors"], dtype=np.float64)
            except KeyError as exc:
                raise ValueError(f"{path}:{lineno}: missing key {exc}") from None
    return out
