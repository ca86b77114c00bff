"""File IO: MOTChallenge-style CSV, the embedding binary format and the
versioned JSON documents for tracklets / annotations / associations.

Disk conventions: frames are 1-based in CSV files and 0-based in memory;
embedding rows align with detection file line order (one row per detection
line). All writes are atomic (temp file + rename).
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .core import Annotation, BoundingBox, Detection, EmbeddingMatrix, Tracklet

EMBEDDING_MAGIC = b"TLEB"
SCHEMA_VERSION = 1


class FileFormatError(ValueError):
    """Raised for malformed input files; message names the offending line."""


def _atomic_write_bytes(path: str | Path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def _atomic_write_text(path: str | Path, text: str) -> None:
    _atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# MOTChallenge CSV: frame,id,bb_left,bb_top,bb_width,bb_height,conf,x,y,z
# ---------------------------------------------------------------------------

def _parse_mot_line(line: str, lineno: int, path: str) -> tuple[int, int, float, float, float, float, float]:
    parts = line.split(",")
    if len(parts) < 7:
        raise FileFormatError(f"{path}:{lineno}: expected >= 7 fields, got {len(parts)}")
    try:
        frame = int(float(parts[0]))
        ident = int(float(parts[1]))
        left, top, w, h, conf = (float(p) for p in parts[2:7])
    except ValueError as exc:
        raise FileFormatError(f"{path}:{lineno}: non-numeric field ({exc})") from None
    if frame < 1:
        raise FileFormatError(f"{path}:{lineno}: frame must be >= 1, got {frame}")
    if w <= 0 or h <= 0:
        raise FileFormatError(f"{path}:{lineno}: non-positive box size {w}x{h}")
    return frame, ident, left, top, w, h, conf


def load_detections(path: str | Path) -> list[Detection]:
    """Read a raw-detection CSV; returns detections sorted by frame.

    The embedding row of each detection is its 0-based line index in the
    file, assigned before sorting.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"detection file not found: {path}")
    detections = []
    row = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            frame, _, left, top, w, h, conf = _parse_mot_line(line, lineno, str(path))
            conf = min(max(conf, 0.0), 1.0)
            detections.append(
                Detection(frame - 1, BoundingBox(left, top, w, h), conf, row)
            )
            row += 1
    detections.sort(key=lambda d: (d.frame, d.embedding_row))
    return detections


def save_detections(path: str | Path, detections: list[Detection]) -> None:
    lines = [
        "%d,-1,%r,%r,%r,%r,%r,-1,-1,-1"
        % (d.frame + 1, float(d.box.left), float(d.box.top),
           float(d.box.width), float(d.box.height), float(d.confidence))
        for d in detections
    ]
    _atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def load_ground_truth(path: str | Path) -> list[tuple[int, int, BoundingBox]]:
    """Read a ground-truth CSV as (0-based frame, identity, box) triples."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"ground truth file not found: {path}")
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            frame, ident, left, top, w, h, _ = _parse_mot_line(line, lineno, str(path))
            out.append((frame - 1, ident, BoundingBox(left, top, w, h)))
    out.sort(key=lambda t: (t[0], t[1]))
    return out


def save_ground_truth(path: str | Path, rows: list[tuple[int, int, BoundingBox]]) -> None:
    lines = [
        "%d,%d,%r,%r,%r,%r,1,-1,-1,-1"
        % (f + 1, i, float(b.left), float(b.top), float(b.width), float(b.height))
        for f, i, b in rows
    ]
    _atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


# ---------------------------------------------------------------------------
# Embedding binary: TLEB | rows u64le | dim u64le | rows*dim f32le | crc32 u32le
# ---------------------------------------------------------------------------

def save_embeddings(path: str | Path, matrix: EmbeddingMatrix | np.ndarray) -> None:
    if isinstance(matrix, np.ndarray):
        matrix = EmbeddingMatrix(matrix)
    payload = matrix.data.astype("<f4").tobytes()
    header = EMBEDDING_MAGIC + struct.pack("<QQ", matrix.rows, matrix.dim)
    crc = struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)
    _atomic_write_bytes(path, header + payload + crc)


def load_embeddings(path: str | Path, expected_dim: int | None = None) -> EmbeddingMatrix:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"embedding file not found: {path}")
    blob = path.read_bytes()
    if len(blob) < 24 or blob[:4] != EMBEDDING_MAGIC:
        raise FileFormatError(f"{path}: not an embedding file (bad magic)")
    rows, dim = struct.unpack("<QQ", blob[4:20])
    n_payload = rows * dim * 4
    if len(blob) != 20 + n_payload + 4:
        raise FileFormatError(
            f"{path}: truncated payload (declared {rows}x{dim}, "
            f"file has {len(blob) - 24} payload bytes, need {n_payload})"
        )
    payload = blob[20:20 + n_payload]
    crc_stored = struct.unpack("<I", blob[20 + n_payload:])[0]
    crc_actual = zlib.crc32(payload) & 0xFFFFFFFF
    if crc_stored != crc_actual:
        raise FileFormatError(f"{path}: payload checksum mismatch")
    if expected_dim is not None and dim != expected_dim:
        raise FileFormatError(
            f"{path}: embedding dim {dim} does not match configured {expected_dim}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(rows, dim)
    return EmbeddingMatrix(data)


# ---------------------------------------------------------------------------
# JSON documents (schema version field "v")
# ---------------------------------------------------------------------------

def _check_version(doc: dict, path: str | Path) -> None:
    if doc.get("v") != SCHEMA_VERSION:
        raise FileFormatError(f"{path}: unsupported schema version {doc.get('v')!r}")


def save_tracklets(path: str | Path, tracklets: list[Tracklet]) -> None:
    doc = {
        "v": SCHEMA_VERSION,
        "tracklets": [
            {
                "id": t.id,
                "detections": [
                    {
                        "frame": d.frame,
                        "box": list(d.box.as_ltwh()),
                        "confidence": d.confidence,
                        "embedding_row": d.embedding_row,
                    }
                    for d in t.detections
                ],
            }
            for t in tracklets
        ],
    }
    _atomic_write_text(path, json.dumps(doc))


def load_tracklets(path: str | Path) -> list[Tracklet]:
    path = Path(path)
    doc = json.loads(path.read_text())
    _check_version(doc, path)
    out = []
    for t in doc["tracklets"]:
        dets = tuple(
            Detection(d["frame"], BoundingBox(*d["box"]), d["confidence"], d["embedding_row"])
            for d in t["detections"]
        )
        out.append(Tracklet(t["id"], dets))
    return out


def save_annotations(path: str | Path, annotations: list[Annotation]) -> None:
    doc = {
        "v": SCHEMA_VERSION,
        "annotations": [
            {"tracklet_id": a.tracklet_id, "identity": a.identity, "round": a.round}
            for a in annotations
        ],
    }
    _atomic_write_text(path, json.dumps(doc))


def load_annotations(path: str | Path) -> list[Annotation]:
    path = Path(path)
    doc = json.loads(path.read_text())
    _check_version(doc, path)
    return [Annotation(a["tracklet_id"], a["identity"], a["round"]) for a in doc["annotations"]]


def save_association_doc(path: str | Path, doc: dict) -> None:
    doc = dict(doc)
    doc["v"] = SCHEMA_VERSION
    _atomic_write_text(path, json.dumps(doc))


def load_association_doc(path: str | Path) -> dict:
    path = Path(path)
    doc = json.loads(path.read_text())
    _check_version(doc, path)
    return doc
