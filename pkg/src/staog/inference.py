"""Cascaded inference: per-leaf part detection on a displacement grid,
per-(slot, shift) hypothesis enumeration, and exact maximisation of the
global response over one hypothesis per slot.

Temporal edges couple only adjacent slots, so the final maximisation is an
exact dynamic program over the per-slot hypothesis lists; the whole-video
appearance term and the bias are constants added once.  Ties are broken
towards the lexicographically first candidate-index tuple, which matches the
enumeration order of the brute-force oracle.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, InferenceError
from .features import FeatureVideo, clamp_box, initial_anchors, prepare
from .model import (
    Assignment,
    StaogModel,
    global_response,
    leaf_time_span,
    spatial_relation_feature,
    temporal_penalty,
    temporal_predicate_feature,
)


@dataclass(frozen=True)
class FrameHypothesis:
    """One candidate configuration of a slot: its shift, the activated leaf
    per cell, the detected part positions, and the cached frame score
    (and-node response plus intra-frame spatial edge responses)."""

    slot: int
    shift: int
    anchor_frame: int
    choices: tuple[int, ...]
    positions: tuple[tuple[float, float], ...]
    score: float


@dataclass(frozen=True)
class InferenceResult:
    score: float
    assignment: Assignment
    frames: tuple[FrameHypothesis, ...]


class _PartCandidates:
    __slots__ = ("key", "positions", "absdisp")

    def __init__(self, key, positions, absdisp):
        self.key = key
        self.positions = positions
        self.absdisp = absdisp


def _part_candidates(model: StaogModel, video: FeatureVideo, or_idx: int) -> _PartCandidates:
    """Displacement grid around the or-node's anchor point, clamped to the
    video, de-duplicated, and pre-sorted by (displacement norm, x, y) so a
    first-maximum argmax realises the tie-break."""
    st = model.structure
    anchor = model.anchor_point(or_idx)
    prep = prepare(video, model.codebook)
    key = ("cands", anchor[0], anchor[1], st.search_radius, st.search_stride,
           video.width, video.height)
    hit = prep._cache.get(key)
    if hit is not None:
        return hit
    seen = {}
    offsets = range(-st.search_radius, st.search_radius + 1, st.search_stride)
    for dy in offsets:
        for dx in offsets:
            x = min(max(anchor[0] + dx, 0.0), video.width - 1.0)
            y = min(max(anchor[1] + dy, 0.0), video.height - 1.0)
            seen[(x, y)] = True
    cands = sorted(
        seen,
        key=lambda p: (float(np.hypot(p[0] - anchor[0], p[1] - anchor[1])), p[0], p[1]),
    )
    positions = np.asarray(cands, dtype=float)
    absdisp = np.abs(positions - anchor[None, :])
    result = _PartCandidates(key, positions, absdisp)
    prep._cache[key] = result
    return result


def _part_hist_matrix(model, video, anchor_frame, cands: _PartCandidates) -> np.ndarray:
    st = model.structure
    prep = prepare(video, model.codebook)
    key = ("pmat", cands.key, int(anchor_frame), st.part_width, st.part_height, st.span)
    mat = prep._cache.get(key)
    if mat is None:
        rows = [
            prep.region_hist(
                anchor_frame,
                model.structure.span,
                clamp_box(model.part_box(pos), video.width, video.height),
            )
            for pos in cands.positions
        ]
        mat = np.vstack(rows)
        mat.flags.writeable = False
        prep._cache[key] = mat
    return mat


def detect_part(
    model: StaogModel, video: FeatureVideo, anchor_frame: int, or_idx: int, slot: int
) -> tuple[tuple[float, float], float]:
    """Best part position for one leaf: exhaustive scan of the displacement
    grid; ties prefer the smallest displacement, then lexicographic (x, y)."""
    lo, hi = model.valid_anchor_range(video.num_frames)
    if not lo <= anchor_frame < hi:
        raise ArgumentError(f"anchor frame {anchor_frame} outside valid range [{lo}, {hi})")
    cands = _part_candidates(model, video, or_idx)
    hists = _part_hist_matrix(model, video, anchor_frame, cands)
    scores = hists @ model.w_leaf(or_idx, slot) - cands.absdisp @ model.w_def(or_idx, slot)
    best = int(np.argmax(scores))
    pos = cands.positions[best]
    return (float(pos[0]), float(pos[1])), float(scores[best])


def enumerate_frame_hypotheses(
    model: StaogModel,
    video: FeatureVideo,
    t: int,
    shift: int,
    limit: int | None = -1,
) -> list[FrameHypothesis]:
    """All leaf-choice combinations for slot ``t`` under ``shift``, scored by
    frame appearance + leaf responses + intra-frame spatial edges, sorted by
    descending score (equal scores keep leaf-choice lexicographic order) and
    capped at ``limit`` (default: the model's hypothesis cap; None: uncapped).

    Returns an empty list when the shifted anchor is out of range.
    """
    st = model.structure
    if limit == -1:
        limit = st.max_hypotheses
    anchors = initial_anchors(video, st.temporal_slots)
    anchor = anchors[t] + shift
    lo, hi = model.valid_anchor_range(video.num_frames)
    if not lo <= anchor < hi:
        return []
    prep = prepare(video, model.codebook)
    base = float(model.w_app(t) @ prep.region_hist(anchor, st.span))
    cells = st.num_cells
    detections: list[list[tuple[tuple[float, float], float]]] = []
    for cell in range(cells):
        i = model.or_index(t, cell)
        detections.append(
            [detect_part(model, video, anchor, i, s) for s in range(model.n_leaves(i))]
        )
    # broadcast the combo grid: per-cell leaf scores plus pairwise edge tables
    shape = tuple(len(d) for d in detections)
    total = np.full(shape, base)
    for cell in range(cells):
        axis_shape = [1] * cells
        axis_shape[cell] = shape[cell]
        total += np.array([s for _, s in detections[cell]]).reshape(axis_shape)
    for ca, cb in st.spatial_pairs():
        ia, ib = model.or_index(t, ca), model.or_index(t, cb)
        table = np.empty((shape[ca], shape[cb]))
        for sa, (pa, _) in enumerate(detections[ca]):
            for sb, (pb, _) in enumerate(detections[cb]):
                feat = spatial_relation_feature(
                    pa, model.anchor_point(ia), pb, model.anchor_point(ib),
                    st.near_radius_value,
                )
                table[sa, sb] = float(model.beta_spatial(t, ca, cb, sa, sb) @ feat)
        axis_shape = [1] * cells
        axis_shape[ca] = shape[ca]
        axis_shape[cb] = shape[cb]
        total += table.reshape(axis_shape)
    flat = total.reshape(-1)
    order = np.argsort(-flat, kind="stable")  # equal scores keep lexicographic order
    if limit is not None:
        order = order[:limit]
    hyps: list[FrameHypothesis] = []
    for flat_idx in order:
        combo = np.unravel_index(int(flat_idx), shape)
        hyps.append(
            FrameHypothesis(
                slot=t,
                shift=shift,
                anchor_frame=anchor,
                choices=tuple(int(c) for c in combo),
                positions=tuple(detections[cell][combo[cell]][0] for cell in range(cells)),
                score=float(flat[flat_idx]),
            )
        )
    return hyps


def _frame_candidates(model, video, limit) -> list[list[FrameHypothesis]]:
    st = model.structure
    try:
        initial_anchors(video, st.temporal_slots)
    except ArgumentError as exc:
        raise InferenceError(str(exc)) from exc
    domain = st.shift_domain()
    candidates: list[list[FrameHypothesis]] = []
    for t in range(st.temporal_slots):
        per_frame: list[FrameHypothesis] = []
        for shift in domain:
            per_frame.extend(enumerate_frame_hypotheses(model, video, t, shift, limit))
        if not per_frame:
            raise InferenceError(
                f"video {video.id!r}: no valid anchor placement for slot {t}"
            )
        candidates.append(per_frame)
    return candidates


def _transition(model, t, hyp_a: FrameHypothesis, hyp_b: FrameHypothesis, pred_cache) -> float:
    if hyp_b.anchor_frame <= hyp_a.anchor_frame:
        return -np.inf
    span = model.structure.span
    key = (hyp_a.anchor_frame, hyp_b.anchor_frame)
    feat = pred_cache.get(key)
    if feat is None:
        feat = temporal_predicate_feature(
            leaf_time_span(hyp_a.anchor_frame, 0, span),
            leaf_time_span(hyp_b.anchor_frame, 0, span),
            span,
        )
        pred_cache[key] = feat
    total = 0.0
    for cell in range(model.structure.num_cells):
        total += float(
            model.beta_temporal(t, cell, hyp_a.choices[cell], hyp_b.choices[cell]) @ feat
        )
    return total


def _assemble(model, hyps) -> Assignment:
    active: list[int] = []
    positions: list[tuple[float, float]] = []
    for h in hyps:
        active.extend(h.choices)
        positions.extend(h.positions)
    return Assignment(
        shifts=tuple(h.shift for h in hyps),
        anchor_frames=tuple(h.anchor_frame for h in hyps),
        active=tuple(active),
        positions=tuple(positions),
    )


def infer(model: StaogModel, video: FeatureVideo) -> InferenceResult:
    """Maximise the global response over one hypothesis per slot subject to
    strictly increasing anchor frames, by exact DP over the slot chain."""
    st = model.structure
    candidates = _frame_candidates(model, video, limit=-1)
    slots = st.temporal_slots
    node_vals = [
        np.array([h.score + temporal_penalty(model, t, h.shift) for h in candidates[t]])
        for t in range(slots)
    ]
    pred_cache: dict = {}
    suffix: list[np.ndarray] = [None] * slots
    suffix[slots - 1] = node_vals[slots - 1]
    for t in range(slots - 2, -1, -1):
        nxt = candidates[t + 1]
        vals = np.empty(len(candidates[t]))
        for a, hyp_a in enumerate(candidates[t]):
            best = -np.inf
            for b, hyp_b in enumerate(nxt):
                trans = _transition(model, t, hyp_a, hyp_b, pred_cache)
                cand = trans + suffix[t + 1][b]
                if cand > best:
                    best = cand
            vals[a] = node_vals[t][a] + best
        suffix[t] = vals
    start = int(np.argmax(suffix[0]))
    if not np.isfinite(suffix[0][start]):
        raise InferenceError(
            f"video {video.id!r}: no strictly increasing anchor placement exists"
        )
    chosen = [candidates[0][start]]
    for t in range(1, slots):
        best_val = -np.inf
        best_b = -1
        for b, hyp_b in enumerate(candidates[t]):
            trans = _transition(model, t - 1, chosen[-1], hyp_b, pred_cache)
            cand = trans + suffix[t][b]
            if cand > best_val:
                best_val = cand
                best_b = b
        chosen.append(candidates[t][best_b])
    assignment = _assemble(model, chosen)
    return InferenceResult(
        score=global_response(model, video, assignment),
        assignment=assignment,
        frames=tuple(chosen),
    )


def infer_bruteforce(
    model: StaogModel, video: FeatureVideo, guard: int = 10**6
) -> InferenceResult:
    """Enumerate every combination of per-slot hypotheses (no cap) and score
    each with the global response; testing oracle for :func:`infer`."""
    candidates = _frame_candidates(model, video, limit=None)
    total = 1
    for per_frame in candidates:
        total *= len(per_frame)
    if total > guard:
        raise ArgumentError(f"brute force would enumerate {total} > {guard} combinations")
    best: tuple[float, tuple[FrameHypothesis, ...], Assignment] | None = None
    for combo in itertools.product(*candidates):
        ok = all(
            combo[t + 1].anchor_frame > combo[t].anchor_frame for t in range(len(combo) - 1)
        )
        if not ok:
            continue
        assignment = _assemble(model, combo)
        score = global_response(model, video, assignment)
        if best is None or score > best[0]:
            best = (score, combo, assignment)
    if best is None:
        raise InferenceError(
            f"video {video.id!r}: no strictly increasing anchor placement exists"
        )
    return InferenceResult(score=best[0], assignment=best[2], frames=best[1])
