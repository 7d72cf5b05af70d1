"""Model structure, parameters, and every response function.

The graph has four layers: leaf nodes (part detectors with appearance and
deformation terms), or-nodes (switches that activate exactly one child leaf),
and-nodes (one per temporal slot: holistic frame appearance plus the or-node
scores), and a root (whole-video appearance, per-slot responses, shift
penalties, bias).  Pairwise context edges connect active leaves: spatial
edges between 4-neighbour grid cells within a slot (8 binary relation bins)
and temporal edges between same-cell leaves of consecutive slots (4 binary
interval-relation bins).

All parameters live in one flat vector whose canonical block order is
root appearance, per-slot appearance, per-slot shift weight, per-leaf
appearance, per-leaf deformation, spatial edge tables, temporal edge tables,
bias.  ``joint_feature`` produces the matching feature vector, so the dot
product of the two equals :func:`global_response` for any assignment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import ArgumentError, FormatError, InvariantError
from .features import Codebook, FeatureVideo, clamp_box, prepare, write_text_atomic

# ---------------------------------------------------------------------------
# structure


@dataclass(frozen=True)
class StructureConfig:
    """Static shape of the graph plus inference search settings."""

    temporal_slots: int = 3
    grid_rows: int = 2
    grid_cols: int = 2
    max_leaves: int = 4
    span: int = 15
    part_width: float = 60.0
    part_height: float = 60.0
    frame_width: int = 320
    frame_height: int = 240
    shift_steps: tuple[int, ...] = (2, 4, 6, 8, 10)  # symmetric +-magnitudes
    max_hypotheses: int = 5
    search_radius: int = 30
    search_stride: int = 10
    near_radius: float | None = None  # default 1.5 * part_width

    @property
    def num_cells(self) -> int:
        return self.grid_rows * self.grid_cols

    @property
    def num_or_nodes(self) -> int:
        return self.temporal_slots * self.num_cells

    @property
    def near_radius_value(self) -> float:
        return 1.5 * self.part_width if self.near_radius is None else self.near_radius

    def shift_domain(self) -> tuple[int, ...]:
        """Candidate anchor shifts: zero first, then the signed steps ascending."""
        signed = sorted({s for mag in self.shift_steps for s in (-mag, mag)})
        return (0, *(s for s in signed if s != 0))

    def cell_center(self, cell: int) -> np.ndarray:
        row, col = divmod(cell, self.grid_cols)
        return np.array(
            [
                (col + 0.5) * self.frame_width / self.grid_cols,
                (row + 0.5) * self.frame_height / self.grid_rows,
            ]
        )

    def spatial_pairs(self) -> list[tuple[int, int]]:
        """4-neighbour cell pairs (row-major indices, lower cell first)."""
        pairs = []
        for row in range(self.grid_rows):
            for col in range(self.grid_cols):
                cell = row * self.grid_cols + col
                if col + 1 < self.grid_cols:
                    pairs.append((cell, cell + 1))
                if row + 1 < self.grid_rows:
                    pairs.append((cell, cell + self.grid_cols))
        return sorted(pairs)

    def validate(self) -> "StructureConfig":
        if self.temporal_slots < 1 or self.grid_rows < 1 or self.grid_cols < 1:
            raise ArgumentError("structure: slots and grid must be positive")
        if self.max_leaves < 1:
            raise ArgumentError("structure: max_leaves must be >= 1")
        if self.span < 1:
            raise ArgumentError("structure: span must be >= 1")
        if self.part_width <= 0 or self.part_height <= 0:
            raise ArgumentError("structure: part size must be positive")
        if self.frame_width < 1 or self.frame_height < 1:
            raise ArgumentError("structure: frame size must be positive")
        if any(s <= 0 for s in self.shift_steps):
            raise ArgumentError("structure: shift steps must be positive magnitudes")
        if self.max_hypotheses < 1:
            raise ArgumentError("structure: max_hypotheses must be >= 1")
        if self.search_radius < 0 or self.search_stride < 1:
            raise ArgumentError("structure: bad part search grid")
        return self


# ---------------------------------------------------------------------------
# parameter layout

SPATIAL_BINS = 8  # above, below, left, right, near, far, clockwise, anti-clockwise
TEMPORAL_BINS = 4  # intersect, after, meets, interrupt


class ParamLayout:
    """Maps structural block keys to slices of the flat parameter vector."""

    def __init__(self, structure: StructureConfig, leaf_counts, codebook_size: int):
        self.codebook_size = int(codebook_size)
        self.leaf_counts = tuple(int(n) for n in leaf_counts)
        if len(self.leaf_counts) != structure.num_or_nodes:
            raise ArgumentError("leaf_counts length must match the or-node count")
        if any(n < 1 for n in self.leaf_counts):
            raise ArgumentError("every or-node needs at least one leaf")
        k = self.codebook_size
        slots = structure.temporal_slots
        cells = structure.num_cells
        blocks: list[tuple[tuple, int]] = [(("root",), k)]
        for t in range(slots):
            blocks.append((("app", t), k))
        for t in range(slots):
            blocks.append((("tau", t), 1))
        for i in range(structure.num_or_nodes):
            for s in range(self.leaf_counts[i]):
                blocks.append((("leaf", i, s), k))
        for i in range(structure.num_or_nodes):
            for s in range(self.leaf_counts[i]):
                blocks.append((("def", i, s), 2))
        for t in range(slots):
            for ca, cb in structure.spatial_pairs():
                na = self.leaf_counts[t * cells + ca]
                nb = self.leaf_counts[t * cells + cb]
                for sa in range(na):
                    for sb in range(nb):
                        blocks.append((("es", t, ca, cb, sa, sb), SPATIAL_BINS))
        for t in range(slots - 1):
            for cell in range(cells):
                na = self.leaf_counts[t * cells + cell]
                nb = self.leaf_counts[(t + 1) * cells + cell]
                for sa in range(na):
                    for sb in range(nb):
                        blocks.append((("et", t, cell, sa, sb), TEMPORAL_BINS))
        blocks.append((("bias",), 1))
        self.blocks = blocks
        self.index: dict[tuple, tuple[int, int]] = {}
        offset = 0
        for key, length in blocks:
            self.index[key] = (offset, length)
            offset += length
        self.size = offset

    def sl(self, *key) -> slice:
        start, length = self.index[key]
        return slice(start, start + length)

    def table(self) -> list[list]:
        """Serializable description: one [key..., start, length] row per block."""
        return [[*key, start, length] for key, (start, length) in
                ((k, self.index[k]) for k, _ in self.blocks)]


# ---------------------------------------------------------------------------
# model


class StaogModel:
    """Graph structure plus the flat parameter vector.

    Immutable during inference; the trainer is the single writer of
    ``params`` and rebuilds the model when the structure changes.
    """

    def __init__(
        self,
        structure: StructureConfig,
        codebook: Codebook,
        leaf_counts=None,
        params: np.ndarray | None = None,
        codebook_ref: str = "",
    ):
        structure.validate()
        self.structure = structure
        self.codebook = codebook
        counts = list(leaf_counts) if leaf_counts is not None else [1] * structure.num_or_nodes
        if any(not 1 <= n <= structure.max_leaves for n in counts):
            raise ArgumentError("leaf counts must lie in [1, max_leaves]")
        self.leaf_counts = counts
        self.layout = ParamLayout(structure, counts, codebook.size)
        if params is None:
            params = np.zeros(self.layout.size)
        else:
            params = np.asarray(params, dtype=float)
            if params.shape != (self.layout.size,):
                raise ArgumentError(
                    f"params length {params.shape} does not match layout size {self.layout.size}"
                )
        self.params = params
        self.codebook_ref = codebook_ref

    # -- structural indexing ------------------------------------------------

    def or_index(self, t: int, cell: int) -> int:
        return t * self.structure.num_cells + cell

    def n_leaves(self, or_idx: int) -> int:
        return self.leaf_counts[or_idx]

    def anchor_point(self, or_idx: int) -> np.ndarray:
        return self.structure.cell_center(or_idx % self.structure.num_cells)

    def valid_anchor_range(self, num_frames: int) -> tuple[int, int]:
        """Anchor frames valid for this span: [lo, hi) keeps the part volume
        inside the video."""
        half = self.structure.span // 2
        return half, num_frames - half

    # -- parameter views ----------------------------------------------------

    @property
    def w_root(self) -> np.ndarray:
        return self.params[self.layout.sl("root")]

    def w_app(self, t: int) -> np.ndarray:
        return self.params[self.layout.sl("app", t)]

    def w_tau(self, t: int) -> float:
        return float(self.params[self.layout.sl("tau", t)][0])

    def w_leaf(self, or_idx: int, slot: int) -> np.ndarray:
        return self.params[self.layout.sl("leaf", or_idx, slot)]

    def w_def(self, or_idx: int, slot: int) -> np.ndarray:
        return self.params[self.layout.sl("def", or_idx, slot)]

    def beta_spatial(self, t: int, cell_a: int, cell_b: int, sa: int, sb: int) -> np.ndarray:
        return self.params[self.layout.sl("es", t, cell_a, cell_b, sa, sb)]

    def beta_temporal(self, t: int, cell: int, sa: int, sb: int) -> np.ndarray:
        return self.params[self.layout.sl("et", t, cell, sa, sb)]

    @property
    def bias(self) -> float:
        return float(self.params[self.layout.sl("bias")][0])

    def part_box(self, position) -> tuple[float, float, float, float]:
        hw = self.structure.part_width / 2.0
        hh = self.structure.part_height / 2.0
        return (position[0] - hw, position[1] - hh, position[0] + hw, position[1] + hh)


# ---------------------------------------------------------------------------
# latent assignment


@dataclass(frozen=True)
class Assignment:
    """Hidden configuration: per-slot anchor shift and, per or-node, the
    active leaf slot and the resolved part position."""

    shifts: tuple[int, ...]
    anchor_frames: tuple[int, ...]
    active: tuple[int, ...]
    positions: tuple[tuple[float, float], ...]


def validate_assignment(model: StaogModel, video: FeatureVideo, assignment: Assignment) -> None:
    st = model.structure
    if len(assignment.shifts) != st.temporal_slots:
        raise InvariantError("assignment covers the wrong number of slots")
    if len(assignment.active) != st.num_or_nodes or len(assignment.positions) != st.num_or_nodes:
        raise InvariantError("assignment covers the wrong number of or-nodes")
    lo, hi = model.valid_anchor_range(video.num_frames)
    prev = None
    for pos in assignment.anchor_frames:
        if not lo <= pos < hi:
            raise InvariantError(f"anchor frame {pos} outside valid range [{lo}, {hi})")
        if prev is not None and pos <= prev:
            raise InvariantError("anchor frames must be strictly increasing")
        prev = pos
    for i, slot in enumerate(assignment.active):
        if not 0 <= slot < model.n_leaves(i):
            raise InvariantError(f"or-node {i}: active leaf {slot} out of range")


# ---------------------------------------------------------------------------
# pairwise relation features


def spatial_relation_feature(p, q, p2, q2, near_radius: float) -> np.ndarray:
    """Binary 8-vector (above, below, left, right, near, far, clockwise,
    anti-clockwise) describing part 2's placement relative to part 1.

    ``near`` holds iff the offset norm is <= ``near_radius``; the directional
    bin follows the dominant axis of the offset (ties go to the vertical
    axis, and a zero offset counts as below); the rotation bin compares the
    detected offset against the anchor offset ``q2 - q`` via the sign of the
    z cross product, with zero mapped to clockwise.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    off = p2 - p
    feat = np.zeros(SPATIAL_BINS)
    if abs(off[1]) >= abs(off[0]):
        feat[0 if off[1] < 0 else 1] = 1.0
    else:
        feat[2 if off[0] < 0 else 3] = 1.0
    feat[4 if float(np.hypot(off[0], off[1])) <= near_radius else 5] = 1.0
    qoff = q2 - q
    cross = qoff[0] * off[1] - qoff[1] * off[0]
    feat[7 if cross > 0 else 6] = 1.0
    return feat


def spatial_edge_response(beta, relation_feature) -> float:
    return float(np.dot(beta, relation_feature))


def leaf_time_span(anchor: int, shift: int, span: int) -> tuple[float, float]:
    """Start and end time of a part volume centred at ``anchor + shift``."""
    mid = anchor + shift
    return (mid - span / 2.0, mid + span / 2.0)


def temporal_predicate_feature(span_a, span_b, span_len: float) -> np.ndarray:
    """Binary 4-vector (intersect, after, meets, interrupt) for ordered spans.

    With ``end_a`` the first span's end and ``start_b`` the second span's
    start: intersect iff start_b < end_a; meets iff equal; after iff
    end_a < start_b <= end_a + span_len (closed upper boundary); interrupt
    beyond that.  Exactly one bin is set.
    """
    end_a = span_a[1]
    start_b = span_b[0]
    feat = np.zeros(TEMPORAL_BINS)
    if start_b < end_a:
        feat[0] = 1.0
    elif start_b == end_a:
        feat[2] = 1.0
    elif start_b <= end_a + span_len:
        feat[1] = 1.0
    else:
        feat[3] = 1.0
    return feat


def temporal_edge_response(beta, predicate_feature) -> float:
    return float(np.dot(beta, predicate_feature))


# ---------------------------------------------------------------------------
# node responses


def _part_hist(model: StaogModel, video: FeatureVideo, anchor_frame: int, position):
    if not (0 <= position[0] < video.width and 0 <= position[1] < video.height):
        raise ArgumentError(f"part position {tuple(position)} outside frame bounds")
    box = clamp_box(model.part_box(position), video.width, video.height)
    return prepare(video, model.codebook).region_hist(anchor_frame, model.structure.span, box)


def leaf_response(
    model: StaogModel,
    video: FeatureVideo,
    anchor_frame: int,
    or_idx: int,
    slot: int,
    position,
) -> float:
    """Appearance score of the part volume at ``position`` minus the
    deformation penalty for straying from the leaf's anchor point."""
    hist = _part_hist(model, video, anchor_frame, position)
    disp = np.abs(np.asarray(position, dtype=float) - model.anchor_point(or_idx))
    return float(model.w_leaf(or_idx, slot) @ hist) - float(model.w_def(or_idx, slot) @ disp)


def or_response(
    model: StaogModel,
    video: FeatureVideo,
    anchor_frame: int,
    or_idx: int,
    activation,
    positions,
) -> float:
    """Response of the single activated child leaf.

    ``activation`` is a 0/1 indicator over the or-node's leaves (exactly one
    set); ``positions`` holds one part position per leaf slot.
    """
    active = [s for s, v in enumerate(activation) if v]
    if len(activation) != model.n_leaves(or_idx) or len(active) != 1:
        raise InvariantError(
            f"or-node {or_idx}: exactly one of {model.n_leaves(or_idx)} leaves must be active"
        )
    slot = active[0]
    return leaf_response(model, video, anchor_frame, or_idx, slot, positions[slot])


def and_response(
    model: StaogModel,
    video: FeatureVideo,
    anchor_frame: int,
    t: int,
    activations,
    positions,
) -> float:
    """Holistic frame appearance plus the activated leaf of every cell.

    ``activations`` and ``positions`` are per-cell sequences as accepted by
    :func:`or_response`.
    """
    prep = prepare(video, model.codebook)
    total = float(model.w_app(t) @ prep.region_hist(anchor_frame, model.structure.span))
    for cell in range(model.structure.num_cells):
        total += or_response(
            model, video, anchor_frame, model.or_index(t, cell), activations[cell], positions[cell]
        )
    return total


def temporal_penalty(model: StaogModel, t: int, shift: int) -> float:
    """Penalty for shifting slot ``t`` off its initial anchor: -w * |shift|."""
    return -model.w_tau(t) * abs(shift)


def _and_value(model: StaogModel, video: FeatureVideo, assignment: Assignment, t: int) -> float:
    prep = prepare(video, model.codebook)
    anchor = assignment.anchor_frames[t]
    total = float(model.w_app(t) @ prep.region_hist(anchor, model.structure.span))
    for cell in range(model.structure.num_cells):
        i = model.or_index(t, cell)
        total += leaf_response(model, video, anchor, i, assignment.active[i], assignment.positions[i])
    return total


def root_response(model: StaogModel, video: FeatureVideo, assignment: Assignment) -> float:
    """Whole-video appearance, every slot's response, the shift penalties,
    and the model bias."""
    prep = prepare(video, model.codebook)
    total = float(model.w_root @ prep.video_hist()) + model.bias
    for t in range(model.structure.temporal_slots):
        total += _and_value(model, video, assignment, t)
        total += temporal_penalty(model, t, assignment.shifts[t])
    return total


def _active_pair_spatial(model, assignment, t, cell_a, cell_b):
    ia, ib = model.or_index(t, cell_a), model.or_index(t, cell_b)
    feat = spatial_relation_feature(
        assignment.positions[ia],
        model.anchor_point(ia),
        assignment.positions[ib],
        model.anchor_point(ib),
        model.structure.near_radius_value,
    )
    return model.beta_spatial(t, cell_a, cell_b, assignment.active[ia], assignment.active[ib]), feat


def _active_pair_temporal(model, assignment, t, cell):
    span = model.structure.span
    ia, ib = model.or_index(t, cell), model.or_index(t + 1, cell)
    feat = temporal_predicate_feature(
        leaf_time_span(assignment.anchor_frames[t], 0, span),
        leaf_time_span(assignment.anchor_frames[t + 1], 0, span),
        span,
    )
    return model.beta_temporal(t, cell, assignment.active[ia], assignment.active[ib]), feat


def global_response(model: StaogModel, video: FeatureVideo, assignment: Assignment) -> float:
    """Root response plus the context-edge responses of every active leaf
    pair; each undirected edge is counted once, in canonical direction."""
    total = root_response(model, video, assignment)
    for t in range(model.structure.temporal_slots):
        for cell_a, cell_b in model.structure.spatial_pairs():
            beta, feat = _active_pair_spatial(model, assignment, t, cell_a, cell_b)
            total += spatial_edge_response(beta, feat)
    for t in range(model.structure.temporal_slots - 1):
        for cell in range(model.structure.num_cells):
            beta, feat = _active_pair_temporal(model, assignment, t, cell)
            total += temporal_edge_response(beta, feat)
    return total


# ---------------------------------------------------------------------------
# joint feature map


def joint_feature(model: StaogModel, video: FeatureVideo, assignment: Assignment) -> np.ndarray:
    """Feature vector aligned bin-for-bin with the parameter layout, so that
    ``model.params @ joint_feature(...) == global_response(...)``.

    Active leaves fill their appearance bins and the negated absolute
    displacement in their deformation bins; inactive leaves stay zero;
    per-slot bins carry the frame histogram and -|shift|; edge bins carry the
    relation/predicate indicators of the active pairs; the bias bin is 1.
    """
    st = model.structure
    prep = prepare(video, model.codebook)
    layout = model.layout
    phi = np.zeros(layout.size)
    phi[layout.sl("root")] = prep.video_hist()
    for t in range(st.temporal_slots):
        anchor = assignment.anchor_frames[t]
        phi[layout.sl("app", t)] = prep.region_hist(anchor, st.span)
        phi[layout.sl("tau", t)] = -abs(assignment.shifts[t])
        for cell in range(st.num_cells):
            i = model.or_index(t, cell)
            slot = assignment.active[i]
            pos = assignment.positions[i]
            phi[layout.sl("leaf", i, slot)] = _part_hist(model, video, anchor, pos)
            disp = np.abs(np.asarray(pos, dtype=float) - model.anchor_point(i))
            phi[layout.sl("def", i, slot)] = -disp
    for t in range(st.temporal_slots):
        for cell_a, cell_b in st.spatial_pairs():
            ia, ib = model.or_index(t, cell_a), model.or_index(t, cell_b)
            _, feat = _active_pair_spatial(model, assignment, t, cell_a, cell_b)
            phi[layout.sl("es", t, cell_a, cell_b, assignment.active[ia], assignment.active[ib])] = feat
    for t in range(st.temporal_slots - 1):
        for cell in range(st.num_cells):
            ia, ib = model.or_index(t, cell), model.or_index(t + 1, cell)
            _, feat = _active_pair_temporal(model, assignment, t, cell)
            phi[layout.sl("et", t, cell, assignment.active[ia], assignment.active[ib])] = feat
    phi[layout.sl("bias")] = 1.0
    return phi


def labeled_feature(
    model: StaogModel, video: FeatureVideo, assignment: Assignment | None, y: int
) -> np.ndarray:
    """Feature vector of a labelled sample: the joint feature for y = +1, the
    zero vector for y = -1."""
    if y == 1:
        if assignment is None:
            raise ArgumentError("labeled_feature: positive label needs an assignment")
        return joint_feature(model, video, assignment)
    if y == -1:
        return np.zeros(model.layout.size)
    raise ArgumentError(f"labeled_feature: label must be +1 or -1, got {y}")


# ---------------------------------------------------------------------------
# serialization


def model_to_payload(model: StaogModel) -> dict:
    st = model.structure
    return {
        "version": 1,
        "structure": {
            "temporal_slots": st.temporal_slots,
            "grid": {"rows": st.grid_rows, "cols": st.grid_cols},
            "max_leaves": st.max_leaves,
            "span": st.span,
            "part_width": st.part_width,
            "part_height": st.part_height,
            "frame_width": st.frame_width,
            "frame_height": st.frame_height,
            "shift_steps": list(st.shift_steps),
            "max_hypotheses": st.max_hypotheses,
            "search_radius": st.search_radius,
            "search_stride": st.search_stride,
            "near_radius": st.near_radius_value,
            "leaf_counts": list(model.leaf_counts),
        },
        "codebook_ref": model.codebook_ref,
        "codebook_size": model.codebook.size,
        "bin_layout": model.layout.table(),
        "params": model.params.tolist(),
    }


def model_from_payload(obj: dict, codebook: Codebook) -> StaogModel:
    try:
        if int(obj["version"]) != 1:
            raise FormatError(f"unsupported model version {obj['version']}")
        raw = obj["structure"]
        structure = StructureConfig(
            temporal_slots=int(raw["temporal_slots"]),
            grid_rows=int(raw["grid"]["rows"]),
            grid_cols=int(raw["grid"]["cols"]),
            max_leaves=int(raw["max_leaves"]),
            span=int(raw["span"]),
            part_width=float(raw["part_width"]),
            part_height=float(raw["part_height"]),
            frame_width=int(raw["frame_width"]),
            frame_height=int(raw["frame_height"]),
            shift_steps=tuple(int(s) for s in raw["shift_steps"]),
            max_hypotheses=int(raw["max_hypotheses"]),
            search_radius=int(raw["search_radius"]),
            search_stride=int(raw["search_stride"]),
            near_radius=float(raw["near_radius"]),
        )
        leaf_counts = [int(n) for n in raw["leaf_counts"]]
        params = np.asarray(obj["params"], dtype=float)
        if int(obj["codebook_size"]) != codebook.size:
            raise FormatError(
                f"model expects a {obj['codebook_size']}-word codebook, got {codebook.size}"
            )
        model = StaogModel(
            structure,
            codebook,
            leaf_counts=leaf_counts,
            params=params,
            codebook_ref=str(obj.get("codebook_ref", "")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad model document: {exc}") from exc
    expected = [[*k, s, ln] for k, (s, ln) in ((kk, model.layout.index[kk]) for kk, _ in model.layout.blocks)]
    stored = [list(row) for row in obj.get("bin_layout", [])]
    if stored and stored != expected:
        raise FormatError("model bin layout does not match this structure")
    return model


def save_model(model: StaogModel, path) -> None:
    payload = model_to_payload(model)
    write_text_atomic(path, json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n")


def load_model(path, codebook: Codebook) -> StaogModel:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    return model_from_payload(obj, codebook)


def copy_structure(structure: StructureConfig, **changes) -> StructureConfig:
    return replace(structure, **changes)
