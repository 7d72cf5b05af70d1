"""Interest-point feature store: interchange format, codebooks, bag-of-words
histograms over space-time regions, anchor placement, and synthetic datasets.

File formats (all UTF-8, deterministic byte output for fixed inputs):

* feature file -- one JSON object per line:
  ``{"id", "label", "width", "height", "num_frames", "descriptor_dim",
  "points": [{"f", "x", "y", "d": [...]}, ...]}``; ``label`` may be null.
* codebook file -- single JSON document
  ``{"version": 1, "dim": D, "centroids": [[...], ...]}``.
* synth spec file -- single JSON document, see :func:`parse_synth_spec`.
"""

from __future__ import annotations

import json
import os
import weakref
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, FormatError
from .numerics import _sqdist, kmeans

# ---------------------------------------------------------------------------
# core types


@dataclass(frozen=True)
class InterestPoint:
    frame: int
    x: float
    y: float
    descriptor: tuple[float, ...]


@dataclass(eq=False)
class FeatureVideo:
    """One video's labelled interest points.  Immutable after construction."""

    id: str
    label: str | None
    width: int
    height: int
    num_frames: int
    descriptor_dim: int
    points: list[InterestPoint] = field(default_factory=list)

    def validate(self) -> "FeatureVideo":
        if self.num_frames < 1:
            raise FormatError(f"video {self.id!r}: num_frames must be >= 1")
        if self.width < 1 or self.height < 1:
            raise FormatError(f"video {self.id!r}: degenerate frame size")
        for p in self.points:
            if not 0 <= p.frame < self.num_frames:
                raise FormatError(f"video {self.id!r}: point frame {p.frame} out of range")
            if not (0 <= p.x < self.width and 0 <= p.y < self.height):
                raise FormatError(f"video {self.id!r}: point ({p.x}, {p.y}) out of bounds")
            if len(p.descriptor) != self.descriptor_dim:
                raise FormatError(
                    f"video {self.id!r}: descriptor length {len(p.descriptor)} "
                    f"!= declared dim {self.descriptor_dim}"
                )
        return self


@dataclass(eq=False)
class Codebook:
    """Visual-word vocabulary: k centroid descriptors of equal dimension."""

    dim: int
    centroids: np.ndarray  # (k, dim)

    @property
    def size(self) -> int:
        return len(self.centroids)

    def validate(self) -> "Codebook":
        if self.centroids.ndim != 2 or self.size < 1:
            raise FormatError("codebook must hold at least one centroid")
        if self.centroids.shape[1] != self.dim:
            raise FormatError("codebook centroid width does not match declared dim")
        if len(np.unique(self.centroids, axis=0)) != self.size:
            raise FormatError("codebook contains bit-identical centroids")
        return self


@dataclass(frozen=True)
class Region3D:
    """A space-time volume: ``span`` frames around ``center_frame``, optionally
    restricted to a spatial box ``(x0, y0, x1, y1)``; no box means full frame."""

    center_frame: int
    span: int
    box: tuple[float, float, float, float] | None = None


# ---------------------------------------------------------------------------
# feature file i/o


def _parse_point(obj, vid: str) -> InterestPoint:
    try:
        return InterestPoint(
            frame=int(obj["f"]),
            x=float(obj["x"]),
            y=float(obj["y"]),
            descriptor=tuple(float(v) for v in obj["d"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"video {vid!r}: bad point record: {exc}") from exc


def parse_video_record(obj) -> FeatureVideo:
    if not isinstance(obj, dict):
        raise FormatError("feature record is not an object")
    try:
        vid = str(obj["id"])
        label = obj.get("label")
        video = FeatureVideo(
            id=vid,
            label=None if label is None else str(label),
            width=int(obj["width"]),
            height=int(obj["height"]),
            num_frames=int(obj["num_frames"]),
            descriptor_dim=int(obj["descriptor_dim"]),
            points=[_parse_point(p, vid) for p in obj["points"]],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad feature record: {exc}") from exc
    return video.validate()


def read_features(path) -> list[FeatureVideo]:
    """Read a line-delimited feature file; enforces unique video ids."""
    videos: list[FeatureVideo] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: not valid JSON: {exc}") from exc
            try:
                video = parse_video_record(obj)
            except FormatError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            if video.id in seen:
                raise FormatError(f"{path}:{lineno}: duplicate video id {video.id!r}")
            seen.add(video.id)
            videos.append(video)
    return videos


def video_payload(video: FeatureVideo) -> dict:
    return {
        "id": video.id,
        "label": video.label,
        "width": video.width,
        "height": video.height,
        "num_frames": video.num_frames,
        "descriptor_dim": video.descriptor_dim,
        "points": [
            {"f": p.frame, "x": p.x, "y": p.y, "d": list(p.descriptor)}
            for p in video.points
        ],
    }


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_text_atomic(path, text: str) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = os.fspath(path)
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_features(videos, path) -> None:
    lines = [dump_json(video_payload(v)) for v in videos]
    write_text_atomic(path, "".join(line + "\n" for line in lines))


# ---------------------------------------------------------------------------
# codebook


def build_codebook(descriptors, k: int, seed: int, max_iters: int = 100) -> Codebook:
    """Cluster descriptors into a k-word vocabulary; deterministic given seed."""
    if len(descriptors) == 0:
        raise FormatError("build_codebook: no descriptors")
    try:
        mat = np.asarray(descriptors, dtype=float)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"build_codebook: inconsistent descriptors: {exc}") from exc
    if mat.ndim != 2:
        raise FormatError("build_codebook: descriptors must share one dimension")
    if not 1 <= k <= len(mat):
        raise ArgumentError(f"build_codebook: k={k} out of range [1, {len(mat)}]")
    distinct = len(np.unique(mat, axis=0))
    if k > distinct:
        raise ArgumentError(
            f"build_codebook: k={k} exceeds the {distinct} distinct descriptors"
        )
    result = kmeans(mat, k, seed, max_iters=max_iters)
    return Codebook(dim=mat.shape[1], centroids=result.centroids).validate()


def read_codebook(path) -> Codebook:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    try:
        if int(obj["version"]) != 1:
            raise FormatError(f"{path}: unsupported codebook version {obj['version']}")
        book = Codebook(dim=int(obj["dim"]), centroids=np.asarray(obj["centroids"], dtype=float))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad codebook document: {exc}") from exc
    return book.validate()


def write_codebook(book: Codebook, path) -> None:
    payload = {"version": 1, "dim": book.dim, "centroids": book.centroids.tolist()}
    write_text_atomic(path, dump_json(payload) + "\n")


# ---------------------------------------------------------------------------
# histograms


class PreparedVideo:
    """Per-(video, codebook) index: the codeword of every point plus a memo of
    region histograms keyed by (frame, span, box)."""

    def __init__(self, video: FeatureVideo, codebook: Codebook):
        if video.descriptor_dim != codebook.dim:
            raise FormatError(
                f"video {video.id!r} descriptor dim {video.descriptor_dim} "
                f"!= codebook dim {codebook.dim}"
            )
        self.video = video
        self.codebook = codebook
        n = len(video.points)
        self.frames = np.fromiter((p.frame for p in video.points), dtype=int, count=n)
        self.xs = np.fromiter((p.x for p in video.points), dtype=float, count=n)
        self.ys = np.fromiter((p.y for p in video.points), dtype=float, count=n)
        if n:
            desc = np.asarray([p.descriptor for p in video.points], dtype=float)
            # argmin returns the first minimum, so ties go to the lowest word
            self.words = _sqdist(desc, codebook.centroids).argmin(axis=1)
        else:
            self.words = np.zeros(0, dtype=int)
        self._cache: dict = {}

    def _hist(self, mask: np.ndarray) -> np.ndarray:
        counts = np.bincount(self.words[mask], minlength=self.codebook.size).astype(float)
        total = counts.sum()
        if total > 0:
            counts /= total
        counts.flags.writeable = False
        return counts

    def region_hist(self, center_frame: int, span: int, box=None) -> np.ndarray:
        key = (int(center_frame), int(span), box)
        hist = self._cache.get(key)
        if hist is None:
            half = span // 2
            mask = (self.frames >= center_frame - half) & (self.frames <= center_frame + half)
            if box is not None:
                x0, y0, x1, y1 = box
                mask &= (self.xs >= x0) & (self.xs <= x1) & (self.ys >= y0) & (self.ys <= y1)
            hist = self._hist(mask)
            self._cache[key] = hist
        return hist

    def video_hist(self) -> np.ndarray:
        hist = self._cache.get("video")
        if hist is None:
            hist = self._hist(np.ones(len(self.words), dtype=bool))
            self._cache["video"] = hist
        return hist


_PREPARED: "weakref.WeakKeyDictionary[FeatureVideo, tuple[int, PreparedVideo]]" = (
    weakref.WeakKeyDictionary()
)


def prepare(video: FeatureVideo, codebook: Codebook) -> PreparedVideo:
    hit = _PREPARED.get(video)
    if hit is not None and hit[0] == id(codebook):
        return hit[1]
    prep = PreparedVideo(video, codebook)
    _PREPARED[video] = (id(codebook), prep)
    return prep


def clamp_box(box, width: float, height: float):
    x0 = max(float(box[0]), 0.0)
    y0 = max(float(box[1]), 0.0)
    x1 = min(float(box[2]), float(width))
    y1 = min(float(box[3]), float(height))
    if not (x0 < x1 and y0 < y1):
        raise ArgumentError(f"region box {box} degenerate after clamping")
    return (x0, y0, x1, y1)


def bow_histogram(video: FeatureVideo, region: Region3D, codebook: Codebook) -> np.ndarray:
    """L1-normalised codeword histogram of the points inside ``region``.

    A point is counted when its frame lies within ``span // 2`` of the centre
    frame (inclusive on both sides) and, if a box is given, its position falls
    inside the clamped box.  An empty region yields the all-zeros vector.
    """
    if region.span < 1:
        raise ArgumentError(f"region span must be >= 1, got {region.span}")
    box = None
    if region.box is not None:
        box = clamp_box(region.box, video.width, video.height)
    return prepare(video, codebook).region_hist(region.center_frame, region.span, box).copy()


# ---------------------------------------------------------------------------
# anchors


def initial_anchors(video: FeatureVideo, slots: int) -> list[int]:
    """Centre frame of each of ``slots`` equal temporal segments."""
    if slots < 1:
        raise ArgumentError(f"slots must be >= 1, got {slots}")
    if video.num_frames < slots:
        raise ArgumentError(
            f"video {video.id!r} has {video.num_frames} frames, fewer than {slots} slots"
        )
    nf = video.num_frames
    return [(2 * t - 1) * nf // (2 * slots) for t in range(1, slots + 1)]


# ---------------------------------------------------------------------------
# synthetic datasets


@dataclass(frozen=True)
class MotifSpec:
    mean: tuple[float, ...]
    noise: float = 0.0


@dataclass(frozen=True)
class CellChoice:
    """One of several appearance modes, picked per video."""

    names: tuple[str, ...]


@dataclass(frozen=True)
class CellMix:
    """Points cycle through several motifs within every video."""

    names: tuple[str, ...]


@dataclass(frozen=True)
class ClassSpec:
    videos: int
    # layout[slot][cell] is a motif name, a CellChoice, a CellMix, or None;
    # cells are row-major (a bare tuple of names acts as a CellChoice)
    layout: tuple[tuple, ...]
    jitter: int = 0


@dataclass(frozen=True)
class SynthSpec:
    width: int
    height: int
    num_frames: int
    descriptor_dim: int
    grid_rows: int
    grid_cols: int
    slots: int
    motifs: dict[str, MotifSpec]
    classes: dict[str, ClassSpec]
    points_per_motif: int = 6
    spatial_scatter: float = 6.0
    frame_scatter: int = 2
    clutter_points: int = 0

    def validate(self) -> "SynthSpec":
        if len(self.classes) < 2:
            raise ArgumentError("synth spec must declare at least 2 classes")
        if self.num_frames < self.slots or self.slots < 1:
            raise ArgumentError("synth spec: num_frames must cover the slots")
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise ArgumentError("synth spec: bad grid")
        cells = self.grid_rows * self.grid_cols
        for name, motif in self.motifs.items():
            if len(motif.mean) != self.descriptor_dim:
                raise ArgumentError(f"motif {name!r} mean has wrong dimension")
            if motif.noise < 0:
                raise ArgumentError(f"motif {name!r} has negative noise")
        for cname, cls in self.classes.items():
            if cls.videos < 1:
                raise ArgumentError(f"class {cname!r} declares no videos")
            if len(cls.layout) != self.slots:
                raise ArgumentError(f"class {cname!r} layout must cover {self.slots} slots")
            for row in cls.layout:
                if len(row) != cells:
                    raise ArgumentError(f"class {cname!r} layout row must cover {cells} cells")
                for entry in row:
                    if isinstance(entry, (CellChoice, CellMix)):
                        names = entry.names
                    elif isinstance(entry, tuple):
                        names = entry
                    else:
                        names = (entry,)
                    if not names:
                        raise ArgumentError(f"class {cname!r} has an empty layout entry")
                    for motif in names:
                        if motif is not None and motif not in self.motifs:
                            raise ArgumentError(
                                f"class {cname!r} references unknown motif {motif!r}"
                            )
        return self


def parse_synth_spec(obj) -> SynthSpec:
    """Build a SynthSpec from its JSON document.

    Expected shape::

        {"version": 1, "width", "height", "num_frames", "descriptor_dim",
         "grid": {"rows", "cols"}, "slots",
         "points_per_motif", "spatial_scatter", "frame_scatter", "clutter_points",
         "motifs": {name: {"mean": [...], "noise": 0.05}, ...},
         "classes": {name: {"videos": 20, "jitter": 2,
                            "layout": [[motif-or-null per cell] per slot]}, ...}}
    """
    try:
        motifs = {
            str(name): MotifSpec(mean=tuple(float(v) for v in m["mean"]),
                                 noise=float(m.get("noise", 0.0)))
            for name, m in obj["motifs"].items()
        }
        def layout_entry(cell):
            if cell is None:
                return None
            if isinstance(cell, dict):
                if "choice" in cell:
                    return CellChoice(tuple(str(n) for n in cell["choice"]))
                if "mix" in cell:
                    return CellMix(tuple(str(n) for n in cell["mix"]))
                raise ValueError(f"layout entry {cell!r} needs a 'choice' or 'mix' key")
            if isinstance(cell, (list, tuple)):
                return CellChoice(tuple(str(name) for name in cell))
            return str(cell)

        classes = {
            str(name): ClassSpec(
                videos=int(c["videos"]),
                layout=tuple(
                    tuple(layout_entry(cell) for cell in row) for row in c["layout"]
                ),
                jitter=int(c.get("jitter", 0)),
            )
            for name, c in obj["classes"].items()
        }
        spec = SynthSpec(
            width=int(obj["width"]),
            height=int(obj["height"]),
            num_frames=int(obj["num_frames"]),
            descriptor_dim=int(obj["descriptor_dim"]),
            grid_rows=int(obj["grid"]["rows"]),
            grid_cols=int(obj["grid"]["cols"]),
            slots=int(obj["slots"]),
            motifs=motifs,
            classes=classes,
            points_per_motif=int(obj.get("points_per_motif", 6)),
            spatial_scatter=float(obj.get("spatial_scatter", 6.0)),
            frame_scatter=int(obj.get("frame_scatter", 2)),
            clutter_points=int(obj.get("clutter_points", 0)),
        )
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ArgumentError(f"bad synth spec: {exc}") from exc
    return spec.validate()


def read_synth_spec(path) -> SynthSpec:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    return parse_synth_spec(obj)


def _cell_center(spec: SynthSpec, cell: int) -> tuple[float, float]:
    row, col = divmod(cell, spec.grid_cols)
    return (
        (col + 0.5) * spec.width / spec.grid_cols,
        (row + 0.5) * spec.height / spec.grid_rows,
    )


def synth_dataset(spec: SynthSpec, seed: int) -> list[FeatureVideo]:
    """Generate labelled videos that plant each class's motifs at its declared
    cells and slots, plus uniform background clutter.  Deterministic given seed."""
    spec.validate()
    rng = np.random.default_rng(seed)
    videos: list[FeatureVideo] = []
    cells = spec.grid_rows * spec.grid_cols
    for cname, cls in spec.classes.items():
        for n in range(cls.videos):
            points: list[InterestPoint] = []
            for slot in range(spec.slots):
                base = (2 * (slot + 1) - 1) * spec.num_frames // (2 * spec.slots)
                anchor = base
                if cls.jitter > 0:
                    anchor += int(rng.integers(-cls.jitter, cls.jitter + 1))
                anchor = min(max(anchor, 0), spec.num_frames - 1)
                for cell in range(cells):
                    entry = cls.layout[slot][cell]
                    if entry is None:
                        continue
                    if isinstance(entry, CellMix):
                        point_motifs = [
                            entry.names[p % len(entry.names)]
                            for p in range(spec.points_per_motif)
                        ]
                    else:
                        if isinstance(entry, (CellChoice, tuple)):
                            names = entry.names if isinstance(entry, CellChoice) else entry
                            name = names[int(rng.integers(len(names)))]
                        else:
                            name = entry
                        point_motifs = [name] * spec.points_per_motif
                    cx, cy = _cell_center(spec, cell)
                    for motif_name in point_motifs:
                        motif = spec.motifs[motif_name]
                        frame = anchor
                        if spec.frame_scatter > 0:
                            frame += int(rng.integers(-spec.frame_scatter, spec.frame_scatter + 1))
                        frame = min(max(frame, 0), spec.num_frames - 1)
                        x = min(max(cx + rng.normal(0.0, spec.spatial_scatter), 0.0),
                                spec.width - 1e-6)
                        y = min(max(cy + rng.normal(0.0, spec.spatial_scatter), 0.0),
                                spec.height - 1e-6)
                        if motif.noise > 0:
                            desc = np.asarray(motif.mean) + rng.normal(
                                0.0, motif.noise, spec.descriptor_dim
                            )
                        else:
                            desc = np.asarray(motif.mean, dtype=float)
                        points.append(InterestPoint(frame, float(x), float(y), tuple(desc)))
            for _ in range(spec.clutter_points):
                frame = int(rng.integers(0, spec.num_frames))
                x = float(rng.uniform(0.0, spec.width))
                y = float(rng.uniform(0.0, spec.height))
                desc = rng.normal(0.0, 1.0, spec.descriptor_dim)
                points.append(InterestPoint(frame, x, y, tuple(desc)))
            videos.append(
                FeatureVideo(
                    id=f"{cname}-{n:03d}",
                    label=cname,
                    width=spec.width,
                    height=spec.height,
                    num_frames=spec.num_frames,
                    descriptor_dim=spec.descriptor_dim,
                    points=points,
                ).validate()
            )
    return videos
