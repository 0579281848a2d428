"""Readers and writers for every on-disk input.

Formats:

* ``det.txt`` / ``gt.txt``: MOT CSV rows ``frame,id,x,y,w,h,conf[,...]`` with
  1-based frames and ids on disk. An optional first line
  ``# seq n_frames=.. fps=.. width=.. height=..`` carries sequence metadata.
* ``features.tsv``: headered sidecar, one row per detection (see
  :func:`write_features`).
* ``homography.csv``: ``frame,h00,...,h22`` frame-to-field matrices, frames
  as stored (0-based), possibly sparse.
* config: JSON object with :class:`EngineConfig` fields.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .model import (
    CHAR_SIZE,
    CharConfidences,
    Detection,
    EngineConfig,
    SequenceInfo,
    TrackPoint,
    TrackSet,
)

log = logging.getLogger(__name__)

PathLike = Union[str, Path]

FEATURES_MAGIC = "# hiertrack features v1"
FEATURE_COLUMNS = ("det_id", "appearance", "jersey", "team", "referee")
TEAM_MODES = ("label", "embedding", "none")
SINGULAR_EPS = 1e-12


class ParseError(ValueError):
    def __init__(self, message: str, path=None, line: Optional[int] = None,
                 column: Optional[int] = None):
        self.path = None if path is None else str(path)
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        text = message + (f" at {', '.join(where)}" if where else "")
        if self.path:
            text = f"{self.path}: {text}"
        super().__init__(text)


def fmt_num(x: float) -> str:
    """Shortest text that parses back to the same double."""
    x = float(x)
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def fmt_f32(values) -> str:
    return ",".join(str(v) for v in np.asarray(values, dtype=np.float32))


def _read_lines(path: PathLike) -> list[str]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read().splitlines()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc


# ---------------------------------------------------------------------------
# MOT files


@dataclass
class MotRow:
    line: int
    frame: int  # 0-based
    track_id: int  # 0-based, -1 without identity
    bbox: tuple[float, float, float, float]
    conf: float


def _parse_seq_header(text: str, path) -> SequenceInfo:
    kv = {}
    for tok in text.split()[2:]:
        if "=" not in tok:
            raise ParseError(f"bad sequence header token {tok!r}", path, 1)
        k, v = tok.split("=", 1)
        kv[k] = v
    try:
        return SequenceInfo(
            n_frames=int(kv.get("n_frames", 0)),
            fps=float(kv.get("fps", 0.0)),
            width=int(kv.get("width", 0)),
            height=int(kv.get("height", 0)),
        )
    except ValueError as exc:
        raise ParseError(f"bad sequence header: {exc}", path, 1) from exc


def read_mot_rows(path: PathLike) -> tuple[list[MotRow], SequenceInfo]:
    rows = []
    info = SequenceInfo()
    for lineno, raw in enumerate(_read_lines(path), start=1):
        text = raw.strip()
        if not text:
            continue
        if text.startswith("#"):
            if text.startswith("# seq"):
                info = _parse_seq_header(text, path)
            continue
        parts = [p.strip() for p in text.split(",")]
        if len(parts) < 7:
            raise ParseError(f"expected at least 7 columns, got {len(parts)}", path, lineno)
        vals = []
        for col, p in enumerate(parts[:7], start=1):
            try:
                vals.append(float(p))
            except ValueError:
                raise ParseError(f"not a number: {p!r}", path, lineno, col) from None
            if not math.isfinite(vals[-1]):
                raise ParseError(f"non-finite value {p!r}", path, lineno, col)
        frame, tid, x, y, w, h, conf = vals
        if not frame.is_integer() or frame < 1:
            raise ParseError(f"frame must be a positive integer, got {parts[0]}", path, lineno, 1)
        if not tid.is_integer() or (tid < 1 and tid != -1):
            raise ParseError(f"id must be a positive integer or -1, got {parts[1]}", path, lineno, 2)
        if w < 0 or h < 0:
            raise ParseError("negative extent", path, lineno, 5 if w < 0 else 6)
        if w == 0 or h == 0:
            raise ParseError("zero extent", path, lineno, 5 if w == 0 else 6)
        rows.append(MotRow(lineno, int(frame) - 1, int(tid) - 1 if tid != -1 else -1,
                           (x, y, w, h), conf))
    return rows, info


def read_detections(path: PathLike) -> list[Detection]:
    """Detections in file order; det_id is the 0-based row index."""
    rows, _ = read_mot_rows(path)
    return [Detection(r.frame, r.bbox, r.conf, i) for i, r in enumerate(rows)]


def read_tracks(path: PathLike) -> TrackSet:
    rows, info = read_mot_rows(path)
    tracks: dict[int, list[TrackPoint]] = {}
    for i, r in enumerate(rows):
        if r.track_id < 0:
            raise ParseError("row without identity in a track file", path, r.line, 2)
        tracks.setdefault(r.track_id, []).append(TrackPoint(r.frame, r.bbox, r.conf, det_id=i))
    out = {}
    for tid, pts in tracks.items():
        pts.sort(key=lambda p: p.frame)
        for a, b in zip(pts, pts[1:]):
            if a.frame == b.frame:
                raise ParseError(f"id {tid + 1} appears twice in frame {a.frame + 1}", path)
        out[tid] = tuple(pts)
    return TrackSet(out, info)


def parse_mot(path: PathLike) -> Union[list[Detection], TrackSet]:
    """Detections when every id is -1, otherwise a TrackSet."""
    rows, _ = read_mot_rows(path)
    if all(r.track_id == -1 for r in rows):
        return read_detections(path)
    return read_tracks(path)


def _seq_header(info: SequenceInfo) -> str:
    return (f"# seq n_frames={info.n_frames} fps={fmt_num(info.fps)} "
            f"width={info.width} height={info.height}\n")


def write_tracks(tracks: TrackSet, path: PathLike) -> None:
    rows = []
    for tid, pts in tracks.tracks.items():
        for p in pts:
            rows.append((p.frame, tid, p))
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(path, "w", encoding="utf-8") as fh:
        if tracks.info != SequenceInfo():
            fh.write(_seq_header(tracks.info))
        for frame, tid, p in rows:
            x, y, w, h = p.bbox
            fh.write(f"{frame + 1},{tid + 1},{fmt_num(x)},{fmt_num(y)},{fmt_num(w)},"
                     f"{fmt_num(h)},{fmt_num(p.conf)},-1,-1,-1\n")


def write_detections(dets: list[Detection], path: PathLike,
                     info: Optional[SequenceInfo] = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if info is not None and info != SequenceInfo():
            fh.write(_seq_header(info))
        for d in dets:
            x, y, w, h = d.bbox
            fh.write(f"{d.frame + 1},-1,{fmt_num(x)},{fmt_num(y)},{fmt_num(w)},"
                     f"{fmt_num(h)},{fmt_num(d.confidence)},-1,-1,-1\n")


def read_sequence_info(path: PathLike) -> SequenceInfo:
    return read_mot_rows(path)[1]


# ---------------------------------------------------------------------------
# Feature sidecar


@dataclass(frozen=True)
class FeatureRecord:
    det_id: int
    appearance: np.ndarray  # float32
    chars: Optional[CharConfidences] = None
    team_label: Optional[int] = None  # 0 team A, 1 team B, 2 referee
    team_embedding: Optional[np.ndarray] = None
    referee: bool = False

    def __eq__(self, other):
        if not isinstance(other, FeatureRecord):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is b
            return a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()

        chars_eq = (self.chars is None and other.chars is None) or (
            self.chars is not None and other.chars is not None
            and same(self.chars.c1, other.chars.c1) and same(self.chars.c2, other.chars.c2)
        )
        return (self.det_id == other.det_id and same(self.appearance, other.appearance)
                and chars_eq and self.team_label == other.team_label
                and same(self.team_embedding, other.team_embedding)
                and self.referee == other.referee)


@dataclass
class FeatureTable:
    appearance_dim: int
    team_mode: str = "embedding"  # label | embedding | none
    team_dim: int = 0
    records: dict[int, FeatureRecord] = field(default_factory=dict)

    def __post_init__(self):
        if self.team_mode not in TEAM_MODES:
            raise ValueError(f"team mode must be one of {TEAM_MODES}")

    def __len__(self):
        return len(self.records)

    def __getitem__(self, det_id: int) -> FeatureRecord:
        return self.records[det_id]


def _f32(text: str, path, line: int, col: int, dim: Optional[int] = None, what: str = "block"):
    try:
        arr = np.array(text.split(","), dtype=np.float32)
    except ValueError:
        raise ParseError(f"bad number in {what} block", path, line, col) from None
    if not np.all(np.isfinite(arr)):
        raise ParseError(f"non-finite value in {what} block", path, line, col)
    if dim is not None and arr.shape != (dim,):
        raise ParseError(f"{what} dimension mismatch: expected {dim}, got {arr.size}",
                         path, line, col)
    return arr


def parse_features(path: PathLike, det_ids=None) -> FeatureTable:
    """Read a feature sidecar.

    When ``det_ids`` is given the map must be total over it and may not
    reference anything else.
    """
    lines = _read_lines(path)
    header = {}
    body_start = None
    for i, raw in enumerate(lines):
        text = raw.strip()
        if i == 0:
            if text != FEATURES_MAGIC:
                raise ParseError("missing feature sidecar header", path, 1)
            continue
        if text.startswith("#"):
            kv = text[1:].strip()
            if "=" not in kv:
                raise ParseError(f"bad header line {text!r}", path, i + 1)
            k, v = kv.split("=", 1)
            header[k.strip()] = v.strip()
            continue
        if text.split("\t") != list(FEATURE_COLUMNS):
            raise ParseError(f"schema mismatch: expected columns {FEATURE_COLUMNS}", path, i + 1)
        body_start = i + 1
        break
    if body_start is None:
        raise ParseError("missing column header", path)
    try:
        app_dim = int(header["appearance_dim"])
        team_spec = header.get("team", "none")
    except (KeyError, ValueError):
        raise ParseError("header must declare appearance_dim", path) from None
    team_mode, _, team_dim_s = team_spec.partition(":")
    if team_mode not in TEAM_MODES:
        raise ParseError(f"unknown team mode {team_mode!r}", path)
    team_dim = int(team_dim_s) if team_mode == "embedding" else 0
    if team_mode == "embedding" and team_dim < 1:
        raise ParseError("embedding team mode needs a dimension", path)

    table = FeatureTable(app_dim, team_mode, team_dim)
    for i in range(body_start, len(lines)):
        lineno = i + 1
        text = lines[i].rstrip("\n")
        if not text.strip():
            continue
        cols = text.split("\t")
        if len(cols) != len(FEATURE_COLUMNS):
            raise ParseError(f"schema mismatch: expected {len(FEATURE_COLUMNS)} columns, "
                             f"got {len(cols)}", path, lineno)
        try:
            det_id = int(cols[0])
        except ValueError:
            raise ParseError(f"bad det_id {cols[0]!r}", path, lineno, 1) from None
        if det_id in table.records:
            raise ParseError(f"duplicate det_id {det_id}", path, lineno, 1)
        app = _f32(cols[1], path, lineno, 2, app_dim, "appearance")
        chars = None
        if cols[2] != "-":
            c = _f32(cols[2], path, lineno, 3, 2 * CHAR_SIZE, "jersey")
            try:
                chars = CharConfidences(c[:CHAR_SIZE], c[CHAR_SIZE:])
            except ValueError as exc:
                raise ParseError(str(exc), path, lineno, 3) from None
        label = emb = None
        if team_mode == "label":
            if cols[3] not in ("0", "1", "2"):
                raise ParseError(f"team label must be 0, 1 or 2, got {cols[3]!r}", path, lineno, 4)
            label = int(cols[3])
        elif team_mode == "embedding":
            emb = _f32(cols[3], path, lineno, 4, team_dim, "team")
        elif cols[3] != "-":
            raise ParseError("team block present but header declares none", path, lineno, 4)
        if cols[4] not in ("0", "1"):
            raise ParseError(f"referee flag must be 0 or 1, got {cols[4]!r}", path, lineno, 5)
        referee = cols[4] == "1"
        if label is not None and (label == 2) != referee:
            raise ParseError("team label 2 and referee flag disagree", path, lineno, 5)
        table.records[det_id] = FeatureRecord(det_id, app, chars, label, emb, referee)

    if det_ids is not None:
        wanted = set(det_ids)
        extra = sorted(set(table.records) - wanted)
        if extra:
            raise ParseError(f"record references unknown det_id {extra[0]}", path)
        missing = sorted(wanted - set(table.records))
        if missing:
            raise ParseError(f"no feature record for det_id {missing[0]}", path)
    return table


def write_features(table: FeatureTable, path: PathLike) -> None:
    team = table.team_mode + (f":{table.team_dim}" if table.team_mode == "embedding" else "")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(FEATURES_MAGIC + "\n")
        fh.write(f"# appearance_dim={table.appearance_dim}\n")
        fh.write(f"# team={team}\n")
        fh.write("\t".join(FEATURE_COLUMNS) + "\n")
        for det_id in sorted(table.records):
            r = table.records[det_id]
            if r.appearance.shape != (table.appearance_dim,):
                raise ValueError(f"appearance dimension mismatch for det {det_id}")
            jersey = "-" if r.chars is None else fmt_f32(np.concatenate([r.chars.c1, r.chars.c2]))
            if table.team_mode == "label":
                team_col = str(r.team_label)
            elif table.team_mode == "embedding":
                team_col = fmt_f32(r.team_embedding)
            else:
                team_col = "-"
            fh.write(f"{det_id}\t{fmt_f32(r.appearance)}\t{jersey}\t{team_col}\t"
                     f"{int(r.referee)}\n")


# ---------------------------------------------------------------------------
# Homographies


def check_homography(H: np.ndarray) -> None:
    if H.shape != (3, 3) or not np.all(np.isfinite(H)):
        raise ValueError("homography must be a finite 3x3 matrix")
    if abs(np.linalg.det(H)) <= SINGULAR_EPS:
        raise ValueError("singular homography")


def parse_homographies(path: PathLike) -> dict[int, np.ndarray]:
    out: dict[int, np.ndarray] = {}
    for lineno, raw in enumerate(_read_lines(path), start=1):
        text = raw.strip()
        if not text or text.startswith("#"):
            continue
        parts = text.split(",")
        if len(parts) != 10:
            raise ParseError(f"expected 10 columns, got {len(parts)}", path, lineno)
        try:
            frame = int(parts[0])
        except ValueError:
            raise ParseError(f"bad frame {parts[0]!r}", path, lineno, 1) from None
        if frame < 0:
            raise ParseError("negative frame", path, lineno, 1)
        try:
            H = np.array([float(p) for p in parts[1:]], dtype=np.float64).reshape(3, 3)
        except ValueError:
            raise ParseError("bad matrix entry", path, lineno) from None
        if frame in out:
            raise ParseError(f"duplicate frame {frame}", path, lineno, 1)
        try:
            check_homography(H)
        except ValueError as exc:
            raise ParseError(str(exc), path, lineno) from None
        H.setflags(write=False)
        out[frame] = H
    return out


def write_homographies(hs: dict[int, np.ndarray], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# frame,h00,h01,h02,h10,h11,h12,h20,h21,h22\n")
        for frame in sorted(hs):
            vals = ",".join(fmt_num(v) for v in np.asarray(hs[frame], dtype=np.float64).ravel())
            fh.write(f"{frame},{vals}\n")


# ---------------------------------------------------------------------------
# Config and bundles


def load_config(path: PathLike) -> EngineConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path, exc.lineno, exc.colno) from None
    if not isinstance(data, dict):
        raise ParseError("config must be a JSON object", path)
    try:
        return EngineConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), path) from None


def save_config(config: EngineConfig, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class SequenceBundle:
    detections: list[Detection]
    features: FeatureTable
    homographies: dict[int, np.ndarray] = field(default_factory=dict)
    gt: Optional[TrackSet] = None
    config: EngineConfig = field(default_factory=EngineConfig)
    info: SequenceInfo = field(default_factory=SequenceInfo)

    def __post_init__(self):
        missing = [d.det_id for d in self.detections if d.det_id not in self.features.records]
        if missing:
            raise ValueError(f"no feature record for det_id {missing[0]}")
        ids = [d.det_id for d in self.detections]
        if len(set(ids)) != len(ids):
            raise ValueError("det_id values must be unique")

    @property
    def n_frames(self) -> int:
        last = max((d.frame for d in self.detections), default=-1) + 1
        if self.gt is not None and self.gt.n_points:
            last = max(last, self.gt.frames()[-1] + 1)
        return max(self.info.n_frames, last)


SEQUENCE_FILES = {
    "detections": "det.txt",
    "gt": "gt.txt",
    "features": "features.tsv",
    "homographies": "homography.csv",
}


def load_sequence(
    detections: PathLike,
    features: PathLike,
    homographies: Optional[PathLike] = None,
    gt: Optional[PathLike] = None,
    config: Optional[EngineConfig] = None,
) -> SequenceBundle:
    for p in (detections, features, homographies, gt):
        if p is not None and not Path(p).is_file():
            raise FileNotFoundError(f"input file not found: {p}")
    dets = read_detections(detections)
    info = read_sequence_info(detections)
    table = parse_features(features, det_ids=[d.det_id for d in dets])
    hs = parse_homographies(homographies) if homographies is not None else {}
    gts = read_tracks(gt) if gt is not None else None
    return SequenceBundle(dets, table, hs, gts, config or EngineConfig(), info)


def load_sequence_dir(directory: PathLike, config: Optional[EngineConfig] = None) -> SequenceBundle:
    d = Path(directory)
    hpath = d / SEQUENCE_FILES["homographies"]
    gpath = d / SEQUENCE_FILES["gt"]
    return load_sequence(
        d / SEQUENCE_FILES["detections"],
        d / SEQUENCE_FILES["features"],
        hpath if hpath.is_file() else None,
        gpath if gpath.is_file() else None,
        config,
    )
