"""File formats: binary embedding containers, CSV tables and JSON documents.

Embedding record layout (little-endian)::

    magic      4 bytes  b"CFEB"
    version    u32      1
    grid_h     u32
    grid_w     u32
    dim        u32
    id_len     u64
    frame_id   id_len bytes, UTF-8
    timestamp  f64      seconds
    global     dim x f32
    patches    grid_h * grid_w * dim x f32, row-major

A container file is a plain concatenation of records.
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import jsonschema
import numpy as np

from .core import EmbeddedFrame, PrototypeBank
from .errors import (BadMagic, DimMismatch, DuplicateId, LabelInconsistent, NonFinite,
                     NonMonotoneTime, SchemaMismatch, Truncated, UnsupportedVersion)
from .fitting import FrameLabel, PrototypeExemplars
from .metrics import EvalReport, PRCurve
from .video import TimelinePoint, TransectReport

MAGIC = b"CFEB"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIQ")
_TIMESTAMP = struct.Struct("<d")
SCHEMA_VERSION = 1

TIMELINE_COLUMNS = ("timestamp_s", "hull_conf", "hull_present", "fouling_conf_raw",
                    "fouling_conf_smoothed", "coverage_raw", "coverage_smoothed", "fouling_present")
LABEL_COLUMNS = ("image_id", "presence", "slof", "split")
SCORE_COLUMNS = ("image_id", "fouling_conf", "coverage", "slof_pred")
PR_COLUMNS = ("threshold", "precision", "recall")


# --- embedding records -------------------------------------------------------

def write_embedding_record(frame: EmbeddedFrame) -> bytes:
    fid = frame.frame_id.encode("utf-8")
    head = _HEADER.pack(MAGIC, VERSION, frame.grid_h, frame.grid_w, frame.dim, len(fid))
    return b"".join([head, fid, _TIMESTAMP.pack(frame.timestamp_s),
                     frame.global_embedding.astype("<f4").tobytes(),
                     frame.patch_embeddings.astype("<f4").tobytes()])


@dataclass(frozen=True)
class RecordHeader:
    frame_id: str
    timestamp_s: float
    grid_h: int
    grid_w: int
    dim: int
    payload_offset: int
    end: int


def _parse_header(buf, offset: int, total: int) -> RecordHeader:
    if total - offset < _HEADER.size:
        raise Truncated("record header cut short", f"byte {total}")
    magic, version, h, w, dim, id_len = _HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, found {bytes(magic)!r}", f"byte {offset}")
    if version != VERSION:
        raise UnsupportedVersion(f"record version {version} (supported: {VERSION})", f"byte {offset + 4}")
    if h < 1 or w < 1 or dim < 2:
        raise DimMismatch(f"invalid record dimensions grid={h}x{w} dim={dim} at byte {offset + 8}")
    pos = offset + _HEADER.size
    if total - pos < id_len + _TIMESTAMP.size:
        raise Truncated("frame id or timestamp cut short", f"byte {total}")
    try:
        fid = bytes(buf[pos:pos + id_len]).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise SchemaMismatch(f"frame id is not UTF-8: {exc}", f"byte {pos}") from None
    pos += id_len
    (ts,) = _TIMESTAMP.unpack_from(buf, pos)
    pos += _TIMESTAMP.size
    end = pos + 4 * dim * (1 + h * w)
    return RecordHeader(fid, ts, h, w, dim, pos, end)


def _frame_from(buf, head: RecordHeader, total: int, offset: int) -> EmbeddedFrame:
    if total < head.end:
        raise Truncated(f"payload of frame {head.frame_id!r} cut short "
                        f"(needs {head.end - offset} bytes)", f"byte {total}")
    payload = np.frombuffer(buf, dtype="<f4", count=head.dim * (1 + head.grid_h * head.grid_w),
                            offset=head.payload_offset)
    if not np.all(np.isfinite(payload)):
        bad = head.payload_offset + 4 * int(np.flatnonzero(~np.isfinite(payload))[0])
        raise NonFinite(f"non-finite value in frame {head.frame_id!r} at byte {bad}")
    return EmbeddedFrame(frame_id=head.frame_id, timestamp_s=head.timestamp_s, grid_h=head.grid_h,
                         grid_w=head.grid_w, patch_embeddings=payload[head.dim:].reshape(-1, head.dim),
                         global_embedding=payload[:head.dim])


def read_embedding_record(data: bytes, offset: int = 0) -> EmbeddedFrame:
    """Decode one record starting at ``offset``."""
    head = _parse_header(data, offset, len(data))
    return _frame_from(data, head, len(data), offset)


def iter_embedding_records(data: bytes) -> Iterator[EmbeddedFrame]:
    offset = 0
    while offset < len(data):
        head = _parse_header(data, offset, len(data))
        yield _frame_from(data, head, len(data), offset)
        offset = head.end


def write_embeddings(path, frames: Iterable[EmbeddedFrame]) -> int:
    """Write ``frames`` as one container file; returns the record count."""
    n = 0
    with open(path, "wb") as fh:
        for f in frames:
            fh.write(write_embedding_record(f))
            n += 1
    return n


@dataclass(frozen=True)
class ManifestEntry:
    frame_id: str
    timestamp_s: float
    offset: int


class EmbeddingContainer:
    """Random-access reader over a container file.

    Opening scans record headers only (payloads are skipped) to build the
    manifest. :meth:`read` uses positional reads, so one container can serve
    concurrent readers.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._fd = os.open(self.path, os.O_RDONLY)
        self.size = os.fstat(self._fd).st_size
        self._headers: list[RecordHeader] = []
        try:
            self._scan()
        except BaseException:
            self.close()
            raise

    def _scan(self):
        offset = 0
        last_ts = -np.inf
        dim = None
        while offset < self.size:
            chunk = os.pread(self._fd, _HEADER.size, offset)
            if len(chunk) < _HEADER.size:
                raise Truncated("record header cut short", f"byte {self.size}")
            id_len = _HEADER.unpack(chunk)[5]
            head_bytes = os.pread(self._fd, _HEADER.size + id_len + _TIMESTAMP.size, offset)
            head = _parse_header(head_bytes, 0, len(head_bytes))
            head = RecordHeader(head.frame_id, head.timestamp_s, head.grid_h, head.grid_w, head.dim,
                                head.payload_offset + offset, head.end + offset)
            if head.end > self.size:
                raise Truncated(f"payload of frame {head.frame_id!r} cut short", f"byte {self.size}")
            if dim is not None and head.dim != dim:
                raise DimMismatch(f"record at byte {offset} has dim {head.dim}, earlier records {dim}")
            if head.timestamp_s < last_ts:
                raise NonMonotoneTime(f"timestamp decreases at record byte {offset}")
            dim, last_ts = head.dim, head.timestamp_s
            self._headers.append(head)
            offset = head.end

    def close(self):
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass

    def __len__(self):
        return len(self._headers)

    @property
    def manifest(self) -> list[ManifestEntry]:
        starts = [0] + [h.end for h in self._headers[:-1]]
        return [ManifestEntry(h.frame_id, h.timestamp_s, s) for h, s in zip(self._headers, starts)]

    @property
    def dim(self) -> int | None:
        return self._headers[0].dim if self._headers else None

    def read(self, i: int) -> EmbeddedFrame:
        head = self._headers[i]
        start = 0 if i == 0 else self._headers[i - 1].end
        data = os.pread(self._fd, head.end - start, start)
        local = RecordHeader(head.frame_id, head.timestamp_s, head.grid_h, head.grid_w, head.dim,
                             head.payload_offset - start, head.end - start)
        return _frame_from(data, local, len(data), 0)

    def __iter__(self) -> Iterator[EmbeddedFrame]:
        for i in range(len(self)):
            yield self.read(i)


def load_frames(path) -> list[EmbeddedFrame]:
    with EmbeddingContainer(path) as c:
        return list(c)


# --- CSV helpers -------------------------------------------------------------

def _fmt9(x) -> str:
    return "" if x is None else format(float(x), ".9g")


def _csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _csv_rows(text: str, header: Sequence[str], what: str) -> Iterator[tuple[int, list[str]]]:
    reader = csv.reader(io.StringIO(text))
    try:
        first = next(reader)
    except StopIteration:
        raise SchemaMismatch(f"{what} is empty; expected header {','.join(header)}", "line 1") from None
    if tuple(c.strip() for c in first) != tuple(header):
        raise SchemaMismatch(f"{what} header {first} != expected {list(header)}", "line 1")
    for row in reader:
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise SchemaMismatch(f"{what}: expected {len(header)} fields, got {len(row)}",
                                 f"line {reader.line_num}")
        yield reader.line_num, [c.strip() for c in row]


def _as_text(data) -> str:
    if isinstance(data, (bytes, bytearray)):
        return data.decode("utf-8")
    return data


def _float(cell: str, line: int, what: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise SchemaMismatch(f"{what}: {cell!r} is not a number", f"line {line}") from None


def _flag(cell: str, line: int, what: str) -> bool:
    if cell not in ("0", "1"):
        raise SchemaMismatch(f"{what}: expected 0 or 1, got {cell!r}", f"line {line}")
    return cell == "1"


# --- timeline CSV ------------------------------------------------------------

def write_timeline_csv(points: Iterable[TimelinePoint]) -> bytes:
    rows = ([_fmt9(p.timestamp_s), _fmt9(p.hull_confidence), int(p.hull_present),
             _fmt9(p.fouling_confidence_raw), _fmt9(p.fouling_confidence_smoothed),
             _fmt9(p.coverage_raw), _fmt9(p.coverage_smoothed), int(p.fouling_present)] for p in points)
    return _csv_text(TIMELINE_COLUMNS, rows).encode("utf-8")


def read_timeline_csv(data) -> list[TimelinePoint]:
    """Parse a timeline CSV. Frame ids are not stored, so points get ``frame_id=""``."""
    points = []

    def opt(cell, line):
        return None if cell == "" else _float(cell, line, "timeline")

    for line, row in _csv_rows(_as_text(data), TIMELINE_COLUMNS, "timeline"):
        points.append(TimelinePoint(
            frame_id="", timestamp_s=_float(row[0], line, "timeline"),
            hull_confidence=_float(row[1], line, "timeline"), hull_present=_flag(row[2], line, "timeline"),
            fouling_confidence_raw=opt(row[3], line), fouling_confidence_smoothed=opt(row[4], line),
            coverage_raw=opt(row[5], line), coverage_smoothed=opt(row[6], line),
            fouling_present=_flag(row[7], line, "timeline")))
    return points


# --- labels CSV --------------------------------------------------------------

def read_labels_csv(data) -> dict[str, FrameLabel]:
    """Parse ``image_id,presence,slof,split`` rows into labels keyed by id (file order)."""
    out: dict[str, FrameLabel] = {}
    for line, (image_id, presence, slof, split) in _csv_rows(_as_text(data), LABEL_COLUMNS, "labels"):
        if not image_id:
            raise SchemaMismatch("labels: empty image_id", f"line {line}")
        if image_id in out:
            raise DuplicateId(f"labels: duplicate image_id {image_id!r}", f"line {line}")
        p = _flag(presence, line, "labels")
        if slof == "":
            s = None
        elif slof in ("0", "1", "2"):
            s = int(slof)
        else:
            raise SchemaMismatch(f"labels: slof must be 0, 1, 2 or empty, got {slof!r}", f"line {line}")
        if s is not None and (s > 0) != p:
            raise LabelInconsistent(f"labels: slof {s} contradicts presence {int(p)} for {image_id!r}",
                                    f"line {line}")
        try:
            out[image_id] = FrameLabel(p, s, split)
        except ValueError as exc:
            raise SchemaMismatch(f"labels: {exc}", f"line {line}") from None
    return out


def write_labels_csv(labels: dict[str, FrameLabel]) -> bytes:
    rows = ([k, int(v.presence), "" if v.slof is None else v.slof, v.split] for k, v in labels.items())
    return _csv_text(LABEL_COLUMNS, rows).encode("utf-8")


# --- scores / PR CSV ---------------------------------------------------------

@dataclass(frozen=True)
class ScoreRow:
    image_id: str
    fouling_conf: float
    coverage: float
    slof_pred: int


def write_scores_csv(rows: Iterable[ScoreRow]) -> bytes:
    body = ([r.image_id, repr(float(r.fouling_conf)), repr(float(r.coverage)), r.slof_pred] for r in rows)
    return _csv_text(SCORE_COLUMNS, body).encode("utf-8")


def read_scores_csv(data) -> list[ScoreRow]:
    out, seen = [], set()
    for line, (image_id, conf, cov, slof) in _csv_rows(_as_text(data), SCORE_COLUMNS, "scores"):
        if image_id in seen:
            raise DuplicateId(f"scores: duplicate image_id {image_id!r}", f"line {line}")
        seen.add(image_id)
        if slof not in ("0", "1", "2"):
            raise SchemaMismatch(f"scores: bad slof_pred {slof!r}", f"line {line}")
        out.append(ScoreRow(image_id, _float(conf, line, "scores"), _float(cov, line, "scores"), int(slof)))
    return out


def write_pr_csv(curve: PRCurve) -> bytes:
    rows = ([repr(float(t)), repr(float(p)), repr(float(r))]
            for t, p, r in zip(curve.thresholds, curve.precision, curve.recall))
    return _csv_text(PR_COLUMNS, rows).encode("utf-8")


def write_heatmap_csv(rows: Iterable[Sequence], class_names: Sequence[str]) -> bytes:
    header = ["image_id", "patch_index", "row", "col", "component", *class_names]
    return _csv_text(header, rows).encode("utf-8")


# --- JSON documents ----------------------------------------------------------

def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False, ensure_ascii=False) + "\n"


BANK_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "temperature", "classes", "metadata"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "temperature": {"type": "number", "exclusiveMinimum": 0},
        "metadata": {"type": "object"},
        "classes": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["name", "is_background", "prototypes"],
                "additionalProperties": False,
                "properties": {
                    "name": {"type": "string"},
                    "is_background": {"type": "boolean"},
                    "prototypes": {"type": "array", "minItems": 1,
                                   "items": {"type": "array", "minItems": 2, "items": {"type": "number"}}},
                },
            },
        },
    },
}


def bank_to_dict(bank: PrototypeBank) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "temperature": bank.temperature,
        "classes": [{"name": name, "is_background": bg, "prototypes": protos.tolist()}
                    for (name, bg), protos in zip(bank.classes, bank.prototypes)],
        "metadata": bank.metadata,
    }


def write_bank_json(bank: PrototypeBank) -> str:
    return canonical_json(bank_to_dict(bank))


def _validate(doc, schema, what):
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaMismatch(f"{what}: {exc.message}", f"json path {path}") from None


def _load_json(text, what):
    try:
        return json.loads(_as_text(text))
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"{what}: invalid JSON: {exc.msg}", f"line {exc.lineno} column {exc.colno}") from None


def read_bank_json(text) -> PrototypeBank:
    doc = _load_json(text, "bank")
    _validate(doc, BANK_SCHEMA, "bank")
    try:
        return PrototypeBank(classes=tuple((c["name"], c["is_background"]) for c in doc["classes"]),
                             prototypes=tuple(np.asarray(c["prototypes"], dtype=np.float64)
                                              for c in doc["classes"]),
                             temperature=doc["temperature"], metadata=doc["metadata"])
    except (ValueError, DimMismatch) as exc:
        raise SchemaMismatch(f"bank: {exc}") from None


def exemplars_to_list(items: Sequence[PrototypeExemplars]) -> list[dict]:
    return [{"class": e.class_name, "prototype": e.prototype_index,
             "exemplars": [{"frame_id": x.frame_id, "component": x.component, "cosine": x.cosine}
                           for x in e.exemplars]} for e in items]


def write_exemplars_json(items: Sequence[PrototypeExemplars]) -> str:
    return canonical_json({"schema_version": SCHEMA_VERSION, "prototypes": exemplars_to_list(items)})


def write_eval_json(report: EvalReport) -> str:
    return canonical_json({"schema_version": SCHEMA_VERSION, **asdict(report)})


def report_to_dict(report: TransectReport) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "config": asdict(report.config),
        "summary": report.summary,
        "segments": [{"start_s": s.start_s, "end_s": s.end_s, "n_points": len(s.indices),
                      "first_index": s.indices[0], "last_index": s.indices[-1]} for s in report.segments],
        "selected_frames": report.selected_frames.to_dict(),
        "timeline": [asdict(p) for p in report.timeline],
    }


REPORT_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "config", "summary", "segments", "selected_frames", "timeline"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "config": {"type": "object"},
        "summary": {"type": "object", "required": ["fouled_fraction", "n_hull_present"]},
        "segments": {"type": "array"},
        "selected_frames": {"type": "object", "required": ["fouling_present", "fouling_absent", "per_group"]},
        "timeline": {"type": "array", "items": {"type": "object", "required": ["timestamp_s", "hull_present"]}},
    },
}


def write_report_json(report: TransectReport) -> str:
    return canonical_json(report_to_dict(report))


def read_report_json(text) -> dict:
    doc = _load_json(text, "report")
    _validate(doc, REPORT_SCHEMA, "report")
    return doc
