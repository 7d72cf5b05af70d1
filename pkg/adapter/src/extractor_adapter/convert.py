"""Dump parsing and feature-line emission.

One dump file holds one video's detected points.  Conversion appends a single
JSON line per video to the output feature file:

    {"id", "label", "width", "height", "num_frames", "descriptor_dim",
     "points": [{"f", "x", "y", "d": [...]}, ...]}

In-bounds values are reproduced at full printed precision; out-of-bounds
coordinates are clamped to the video bounds and counted.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass


class AdapterError(Exception):
    """Base class for adapter failures."""


class FormatError(AdapterError):
    """Malformed dump, mapping, or metadata."""


@dataclass(frozen=True)
class VideoMeta:
    id: str
    label: str | None
    width: int
    height: int
    num_frames: int

    def validate(self) -> "VideoMeta":
        if not self.id:
            raise FormatError("metadata: id must be non-empty")
        if self.width < 1 or self.height < 1 or self.num_frames < 1:
            raise FormatError("metadata: width, height and num_frames must be >= 1")
        return self


@dataclass(frozen=True)
class ColumnMap:
    """Column layout of the dump: indices of the frame/x/y columns and the
    descriptor slice (``descriptor_len`` None means the rest of the line)."""

    frame: int
    x: int
    y: int
    descriptor_start: int
    descriptor_len: int | None = None
    comment_prefix: str = "#"
    frame_base: int = 0  # some detectors emit 1-based frame indices

    def validate(self) -> "ColumnMap":
        if min(self.frame, self.x, self.y, self.descriptor_start) < 0:
            raise FormatError("mapping: column indices must be >= 0")
        if self.descriptor_len is not None and self.descriptor_len < 1:
            raise FormatError("mapping: descriptor_len must be >= 1 when given")
        return self


def read_column_map(path) -> ColumnMap:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    try:
        cols = obj["columns"]
        mapping = ColumnMap(
            frame=int(cols["frame"]),
            x=int(cols["x"]),
            y=int(cols["y"]),
            descriptor_start=int(obj["descriptor_start"]),
            descriptor_len=(None if obj.get("descriptor_len") is None
                            else int(obj["descriptor_len"])),
            comment_prefix=str(obj.get("comment_prefix", "#")),
            frame_base=int(obj.get("frame_base", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad mapping document: {exc}") from exc
    return mapping.validate()


def read_video_meta(path) -> VideoMeta:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    try:
        label = obj.get("label")
        meta = VideoMeta(
            id=str(obj["id"]),
            label=None if label is None else str(label),
            width=int(obj["width"]),
            height=int(obj["height"]),
            num_frames=int(obj["num_frames"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad metadata document: {exc}") from exc
    return meta.validate()


def _parse_dump(path, mapping: ColumnMap):
    """Yield (lineno, frame, x, y, descriptor) per data line; the first data
    line fixes the column arity and any drift is a hard error."""
    arity = None
    min_cols = max(mapping.frame, mapping.x, mapping.y, mapping.descriptor_start) + 1
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or (mapping.comment_prefix and line.startswith(mapping.comment_prefix)):
                continue
            cols = line.split()
            if arity is None:
                arity = len(cols)
                if arity < min_cols:
                    raise FormatError(
                        f"{path}:{lineno}: {arity} columns, but the mapping needs {min_cols}"
                    )
            elif len(cols) != arity:
                raise FormatError(
                    f"{path}:{lineno}: {len(cols)} columns, expected {arity}"
                )
            try:
                frame = int(float(cols[mapping.frame])) - mapping.frame_base
                x = float(cols[mapping.x])
                y = float(cols[mapping.y])
                if mapping.descriptor_len is None:
                    raw_desc = cols[mapping.descriptor_start:]
                else:
                    stop = mapping.descriptor_start + mapping.descriptor_len
                    if stop > len(cols):
                        raise ValueError(f"descriptor slice [{mapping.descriptor_start}:{stop}] "
                                         f"exceeds {len(cols)} columns")
                    raw_desc = cols[mapping.descriptor_start:stop]
                descriptor = [float(v) for v in raw_desc]
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            yield lineno, frame, x, y, descriptor


def convert(dump_path, meta: VideoMeta, mapping: ColumnMap, out_path) -> dict:
    """Append one feature line for the dump's video to ``out_path``.

    Returns ``{"points", "clamped"}``: total emitted points and how many had
    a coordinate clamped into bounds.
    """
    meta.validate()
    mapping.validate()
    points = []
    dim = None
    clamped = 0
    for lineno, frame, x, y, descriptor in _parse_dump(dump_path, mapping):
        if dim is None:
            dim = len(descriptor)
            if dim < 1:
                raise FormatError(f"{dump_path}:{lineno}: empty descriptor slice")
        touched = False
        if not 0 <= frame < meta.num_frames:
            frame = min(max(frame, 0), meta.num_frames - 1)
            touched = True
        if not 0 <= x < meta.width:
            x = min(max(x, 0.0), meta.width - 1.0)
            touched = True
        if not 0 <= y < meta.height:
            y = min(max(y, 0.0), meta.height - 1.0)
            touched = True
        clamped += touched
        points.append({"f": frame, "x": x, "y": y, "d": descriptor})
    record = {
        "id": meta.id,
        "label": meta.label,
        "width": meta.width,
        "height": meta.height,
        "num_frames": meta.num_frames,
        "descriptor_dim": dim if dim is not None else 0,
        "points": points,
    }
    line = json.dumps(record, sort_keys=True, separators=(",", ":"))
    with open(out_path, "a", encoding="utf-8") as fh:
        fh.write(line + "\n")
        fh.flush()
        os.fsync(fh.fileno())
    return {"points": len(points), "clamped": clamped}
