"""Weakly supervised structural learning.

The non-convex objective splits into a convex part (regulariser plus the
loss-augmented maximum per sample) minus a concave part (each sample's best
latent score at its own label).  Every outer iteration (1) imputes the
latent variables of each positive by inference, (2) proposes a structure
reconfiguration by spectral clustering of the imputed part appearance
blocks, rearranging feature bins to the new leaf assignment, and (3) refits
parameters with a cutting-plane structural SVM; a reconfigured structure is
kept only when the full objective strictly decreases.  Negatives carry a
zero feature vector at their own label, so only positives are imputed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .errors import ArgumentError
from .features import Codebook, FeatureVideo, initial_anchors
from .inference import infer
from .model import (
    Assignment,
    StaogModel,
    StructureConfig,
    joint_feature,
    labeled_feature,
)
from .numerics import qp_solve, spectral_cluster


@dataclass(frozen=True)
class TrainConfig:
    c: float = 0.003  # margin penalty
    max_iters: int = 30
    energy_tol: float = 1e-4  # relative energy change at convergence
    create_budget: int = 1  # leaf creations per or-node per iteration
    remove_budget: int = 1  # leaf removals per or-node per iteration
    min_cluster_size: int = 3  # clusters below this size do not keep a leaf
    cut_tol: float = 1e-3  # cutting-plane violation tolerance
    max_cut_rounds: int = 100
    qp_tol: float = 1e-6
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.c <= 0:
            raise ArgumentError("train config: c must be positive")
        if self.max_iters < 1:
            raise ArgumentError("train config: max_iters must be >= 1")
        if self.create_budget < 0 or self.remove_budget < 0:
            raise ArgumentError("train config: budgets must be >= 0")
        if self.min_cluster_size < 1:
            raise ArgumentError("train config: min_cluster_size must be >= 1")
        return self


@dataclass
class ImputedSample:
    """A positive sample's imputed latents, its joint feature vector, and the
    appearance sub-block of the active leaf at every or-node."""

    index: int
    video: FeatureVideo
    assignment: Assignment
    phi: np.ndarray
    parts: list[np.ndarray]


def latent_impute(model: StaogModel, video: FeatureVideo, index: int = 0) -> ImputedSample:
    """Best latent assignment for a positive sample under the current model."""
    result = infer(model, video)
    phi = joint_feature(model, video, result.assignment)
    parts = [
        phi[model.layout.sl("leaf", i, result.assignment.active[i])].copy()
        for i in range(model.structure.num_or_nodes)
    ]
    return ImputedSample(index, video, result.assignment, phi, parts)


def hyperplane(imputed, c: float) -> np.ndarray:
    """Gradient of the concave objective part at the imputed latents:
    ``-c * sum_k phi_k`` over the positive samples."""
    if not imputed:
        raise ArgumentError("hyperplane: no imputed samples")
    total = np.zeros_like(imputed[0].phi)
    for imp in imputed:
        total += imp.phi
    return -c * total


def loss_augmented_infer(model: StaogModel, video: FeatureVideo, y_true: int):
    """Maximise score plus label cost over both labels and latents.

    The negative branch carries a zero feature vector, so its value is just
    the label cost; the positive branch is the inference score plus cost.
    Returns ``(label, assignment_or_None, value)``; ties go to the negative
    branch.
    """
    result = infer(model, video)
    pos_value = result.score + (0.0 if y_true == 1 else 1.0)
    neg_value = 0.0 if y_true == -1 else 1.0
    if pos_value > neg_value:
        return 1, result.assignment, pos_value
    return -1, None, neg_value


def cutting_plane_solve(
    oracle,
    phi_hat,
    c: float,
    tol: float = 1e-3,
    max_rounds: int = 100,
    qp_tol: float = 1e-6,
):
    """Minimise ``0.5*||w||**2 + c * sum_k [max_hyp(w @ phi + loss) - w @ phi_hat[k]]``.

    ``oracle(k, w)`` must return ``(phi, loss)`` for sample k's most violating
    hypothesis under weights ``w``.  One most-violated constraint per sample
    is added per round until no violation exceeds ``tol``, re-solving the
    restricted dual after each round; the result is within ``tol * c * n`` of
    the optimum.  Returns ``(w, info)`` with ``info = {"rows", "rounds"}``.
    """
    n = len(phi_hat)
    if n == 0:
        raise ArgumentError("cutting_plane_solve: no samples")
    dim = len(phi_hat[0])
    rows: list[tuple[np.ndarray, float]] = []
    groups: list[int] = []
    alpha = np.zeros(0)
    w = np.zeros(dim)
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        slack = np.zeros(n)
        for (coef, loss), k in zip(rows, groups):
            slack[k] = max(slack[k], loss - float(coef @ w))
        added = 0
        for k in range(n):
            phi_best, loss = oracle(k, w)
            coef = phi_hat[k] - phi_best
            if (loss - float(coef @ w)) - slack[k] > tol:
                rows.append((coef, float(loss)))
                groups.append(k)
                added += 1
        if added == 0:
            break
        alpha = np.concatenate([alpha, np.zeros(len(rows) - len(alpha))])
        w, alpha = qp_solve(rows, c, groups, dim=dim, tol=qp_tol, alpha0=alpha)
    return w, {"rows": len(rows), "rounds": rounds}


def solve_ssvm(model: StaogModel, samples, phi_hat, config: TrainConfig):
    """Convex parameter refit with the imputed features held fixed.

    ``samples`` is a list of ``(video, label)`` pairs and ``phi_hat`` the
    per-sample target feature vectors (zeros for negatives).  The model's
    parameter vector doubles as scratch space for the separation oracle and
    is left at the returned optimum.
    """

    def oracle(k, w):
        model.params[:] = w
        video, y_true = samples[k]
        y, assignment, _ = loss_augmented_infer(model, video, y_true)
        phi = labeled_feature(model, video, assignment, y)
        return phi, (0.0 if y == y_true else 1.0)

    w, info = cutting_plane_solve(
        oracle,
        phi_hat,
        config.c,
        tol=config.cut_tol,
        max_rounds=config.max_cut_rounds,
        qp_tol=config.qp_tol,
    )
    model.params[:] = w
    return w, info


def energy(model: StaogModel, samples, c: float) -> float:
    """Full objective at the current parameters, with fresh inference."""
    total = 0.5 * float(model.params @ model.params)
    for video, y in samples:
        result = infer(model, video)
        pos_value = result.score + (0.0 if y == 1 else 1.0)
        neg_value = 0.0 if y == -1 else 1.0
        total += c * max(pos_value, neg_value)
        if y == 1:
            total -= c * result.score
    return total


# ---------------------------------------------------------------------------
# structure reconfiguration


def _match_clusters(assignment, current, n_clusters, n_leaves):
    """Greedy overlap matching of spectral clusters to existing leaves."""
    overlap = np.zeros((n_clusters, n_leaves), dtype=int)
    for cluster, leaf in zip(assignment, current):
        overlap[cluster, leaf] += 1
    cluster_to_leaf: dict[int, int | None] = {c: None for c in range(n_clusters)}
    taken: set[int] = set()
    pairs = sorted(
        ((int(overlap[c, leaf]), c, leaf) for c in range(n_clusters) for leaf in range(n_leaves)),
        key=lambda x: (-x[0], x[1], x[2]),
    )
    for count, c, leaf in pairs:
        if count <= 0:
            break
        if cluster_to_leaf[c] is None and leaf not in taken:
            cluster_to_leaf[c] = leaf
            taken.add(leaf)
    return cluster_to_leaf


def _reconfigure_or_node(config, max_leaves, n_leaves, vectors, current, seed):
    """Cluster one or-node's part vectors and derive its structural edit.

    Returns ``(final_slots, kept, donors)`` where ``final_slots[k]`` indexes
    the extended old slot space (existing slots first, then created ones),
    ``kept`` lists surviving old slots in order, and ``donors`` holds the
    donor old slot of each created leaf.
    """
    n_samples = len(vectors)
    result = spectral_cluster(vectors, max_leaves, seed)
    assignment = result.assignment
    n_clusters = result.n_clusters
    sizes = np.bincount(assignment, minlength=n_clusters)
    cluster_to_leaf = _match_clusters(assignment, current, n_clusters, n_leaves)

    # create leaves for new clusters, largest first, within budget and the
    # leaf cap; clusters below the survival threshold never earn a leaf
    donors: list[int] = []
    created_of_cluster: dict[int, int] = {}
    budget = config.create_budget
    for c in sorted(range(n_clusters), key=lambda c: (-sizes[c], c)):
        if cluster_to_leaf[c] is not None or sizes[c] < config.min_cluster_size:
            continue
        if budget <= 0 or n_leaves + len(donors) >= max_leaves:
            continue
        counts = np.zeros(n_leaves, dtype=int)
        for a, cur in zip(assignment, current):
            if a == c:
                counts[cur] += 1
        created_of_cluster[c] = n_leaves + len(donors)
        donors.append(int(np.argmax(counts)))
        budget -= 1

    # clusters with neither a matched leaf nor a created one fold into the
    # nearest surviving cluster by centroid distance
    target_clusters = [
        c for c in range(n_clusters) if cluster_to_leaf[c] is not None or c in created_of_cluster
    ]
    fold: dict[int, int] = {}
    for c in range(n_clusters):
        if c in target_clusters or sizes[c] == 0:
            continue
        dists = [
            float(np.linalg.norm(result.centroids[c] - result.centroids[c2]))
            for c2 in target_clusters
        ]
        fold[c] = target_clusters[int(np.argmin(dists))]

    def slot_of_cluster(c: int) -> int:
        c = fold.get(c, c)
        leaf = cluster_to_leaf[c]
        return leaf if leaf is not None else created_of_cluster[c]

    final_slots = np.array([slot_of_cluster(c) for c in assignment], dtype=int)

    # remove under-populated old leaves within budget, keeping >= 1 leaf;
    # their samples move to the nearest surviving leaf by mean part vector
    total_slots = n_leaves + len(donors)
    members = np.bincount(final_slots, minlength=total_slots)
    removed: list[int] = []
    budget = config.remove_budget
    for s in sorted(range(n_leaves), key=lambda s: (members[s], s)):
        if members[s] >= config.min_cluster_size:
            break
        if budget <= 0 or total_slots - len(removed) <= 1:
            break
        removed.append(s)
        budget -= 1
    if removed:
        removed_set = set(removed)
        surviving = [s for s in range(total_slots) if s not in removed_set]
        means = {
            s: vectors[final_slots == s].mean(axis=0)
            for s in surviving
            if (final_slots == s).any()
        }
        for k in range(n_samples):
            if final_slots[k] in removed_set:
                options = sorted(means)
                dists = [float(np.linalg.norm(vectors[k] - means[s])) for s in options]
                final_slots[k] = options[int(np.argmin(dists))]
    kept = [s for s in range(n_leaves) if s not in removed]
    return final_slots, kept, donors


def _copy_params(old: StaogModel, new: StaogModel, slot_maps) -> None:
    """Copy parameter blocks across a structure change.

    ``slot_maps[i]`` maps each surviving old slot of or-node ``i`` to its new
    slot.  Created leaves keep zero appearance and zero edge blocks; their
    deformation weights are filled separately from the donor leaf.
    """
    st = old.structure
    src, dst = old.params, new.params
    lo, ln = old.layout, new.layout
    dst[ln.sl("root")] = src[lo.sl("root")]
    dst[ln.sl("bias")] = src[lo.sl("bias")]
    for t in range(st.temporal_slots):
        dst[ln.sl("app", t)] = src[lo.sl("app", t)]
        dst[ln.sl("tau", t)] = src[lo.sl("tau", t)]
    for i in range(st.num_or_nodes):
        for s_old, s_new in slot_maps[i].items():
            dst[ln.sl("leaf", i, s_new)] = src[lo.sl("leaf", i, s_old)]
            dst[ln.sl("def", i, s_new)] = src[lo.sl("def", i, s_old)]
    cells = st.num_cells
    for t in range(st.temporal_slots):
        for ca, cb in st.spatial_pairs():
            ia, ib = t * cells + ca, t * cells + cb
            for sa, na in slot_maps[ia].items():
                for sb, nb in slot_maps[ib].items():
                    dst[ln.sl("es", t, ca, cb, na, nb)] = src[lo.sl("es", t, ca, cb, sa, sb)]
    for t in range(st.temporal_slots - 1):
        for cell in range(cells):
            ia, ib = t * cells + cell, (t + 1) * cells + cell
            for sa, na in slot_maps[ia].items():
                for sb, nb in slot_maps[ib].items():
                    dst[ln.sl("et", t, cell, na, nb)] = src[lo.sl("et", t, cell, sa, sb)]


def reconfigure(model: StaogModel, imputed, config: TrainConfig, seed: int):
    """Independently recluster every or-node and rearrange feature bins.

    Returns ``(candidate, candidate_imputed, edits, moved)``; when nothing
    changes the original model and imputed list are returned unchanged with
    ``edits == []`` and ``moved == False``.
    """
    if not imputed:
        return model, list(imputed), [], False
    st = model.structure
    n_or = st.num_or_nodes
    slot_maps: list[dict[int, int]] = []
    donor_lists: list[list[int]] = []
    new_counts: list[int] = []
    new_active = [list(imp.assignment.active) for imp in imputed]
    edits: list[dict] = []
    moved = False
    for i in range(n_or):
        vectors = np.asarray([imp.parts[i] for imp in imputed])
        current = [imp.assignment.active[i] for imp in imputed]
        final_slots, kept, donors = _reconfigure_or_node(
            config, st.max_leaves, model.n_leaves(i), vectors, current, seed + 7919 * i
        )
        n_leaves = model.n_leaves(i)
        slot_map = {s: idx for idx, s in enumerate(kept)}
        for j in range(len(donors)):
            slot_map[n_leaves + j] = len(kept) + j
        slot_maps.append({s: slot_map[s] for s in kept})
        donor_lists.append(donors)
        new_counts.append(len(kept) + len(donors))
        if donors or len(kept) != n_leaves:
            edits.append({"or": i, "created": len(donors), "removed": n_leaves - len(kept)})
        for k, imp in enumerate(imputed):
            final = slot_map[int(final_slots[k])]
            if int(final_slots[k]) != current[k]:
                moved = True
            new_active[k][i] = final
    if not edits and not moved:
        return model, list(imputed), [], False
    candidate = StaogModel(
        st, model.codebook, leaf_counts=new_counts, codebook_ref=model.codebook_ref
    )
    _copy_params(model, candidate, slot_maps)
    for i in range(n_or):
        for j, donor in enumerate(donor_lists[i]):
            new_slot = len(slot_maps[i]) + j
            candidate.params[candidate.layout.sl("def", i, new_slot)] = model.params[
                model.layout.sl("def", i, donor)
            ]
    cand_imputed: list[ImputedSample] = []
    for k, imp in enumerate(imputed):
        assignment = Assignment(
            shifts=imp.assignment.shifts,
            anchor_frames=imp.assignment.anchor_frames,
            active=tuple(new_active[k]),
            positions=imp.assignment.positions,
        )
        phi = joint_feature(candidate, imp.video, assignment)
        parts = [
            phi[candidate.layout.sl("leaf", i, assignment.active[i])].copy()
            for i in range(n_or)
        ]
        cand_imputed.append(ImputedSample(imp.index, imp.video, assignment, phi, parts))
    return candidate, cand_imputed, edits, moved


# ---------------------------------------------------------------------------
# training


def canonical_assignment(model: StaogModel, video: FeatureVideo) -> Assignment:
    """Default latents for initialisation: the closest-to-zero valid shift per
    slot and every part at its or-node's anchor point, sole leaf active."""
    st = model.structure
    try:
        anchors = initial_anchors(video, st.temporal_slots)
    except ArgumentError as exc:
        raise ArgumentError(f"video {video.id!r}: {exc}") from exc
    lo, hi = model.valid_anchor_range(video.num_frames)
    domain = sorted(st.shift_domain(), key=lambda s: (abs(s), s))
    shifts: list[int] = []
    frames: list[int] = []
    prev = -1
    for t, tau in enumerate(anchors):
        chosen = None
        for s in domain:
            pos = tau + s
            if lo <= pos < hi and pos > prev:
                chosen = (s, pos)
                break
        if chosen is None:
            raise ArgumentError(
                f"video {video.id!r} is too short to place anchor {t} with span {st.span}"
            )
        shifts.append(chosen[0])
        frames.append(chosen[1])
        prev = chosen[1]
    positions = []
    for i in range(st.num_or_nodes):
        q = model.anchor_point(i)
        positions.append((min(q[0], video.width - 1.0), min(q[1], video.height - 1.0)))
    return Assignment(
        shifts=tuple(shifts),
        anchor_frames=tuple(frames),
        active=(0,) * st.num_or_nodes,
        positions=tuple(positions),
    )


def _phi_hat_from(model, samples, assignments_by_index) -> list[np.ndarray]:
    zeros = np.zeros(model.layout.size)
    out = []
    for k, (video, y) in enumerate(samples):
        if y == 1:
            out.append(assignments_by_index[k])
        else:
            out.append(zeros)
    return out


def train(samples, codebook: Codebook, structure: StructureConfig, config: TrainConfig, log=None) -> StaogModel:
    """Train one binary model.

    ``samples`` is a list of ``(FeatureVideo, label)`` pairs with labels in
    {+1, -1}; at least one of each is required.  ``log``, when given, is
    called once per outer iteration with a dict record.  Deterministic given
    ``config.seed`` and the inputs.
    """
    config.validate()
    pos_idx = [k for k, (_, y) in enumerate(samples) if y == 1]
    neg_idx = [k for k, (_, y) in enumerate(samples) if y == -1]
    if not pos_idx or not neg_idx:
        raise ArgumentError("training needs at least one positive and one negative sample")
    if any(y not in (1, -1) for _, y in samples):
        raise ArgumentError("sample labels must be +1 or -1")
    model = StaogModel(structure, codebook)
    canonical = {
        k: joint_feature(model, samples[k][0], canonical_assignment(model, samples[k][0]))
        for k in pos_idx
    }
    phi_hat = _phi_hat_from(model, samples, canonical)
    _, info = solve_ssvm(model, samples, phi_hat, config)
    e_current = energy(model, samples, config.c)
    if log is not None:
        log(
            {
                "iter": 0,
                "energy": e_current,
                "structure_accepted": False,
                "leaf_counts": list(model.leaf_counts),
                "constraint_count": info["rows"],
                "wall_time": 0.0,
            }
        )
    for it in range(1, config.max_iters + 1):
        t0 = time.perf_counter()
        imputed = [latent_impute(model, samples[k][0], k) for k in pos_idx]
        candidate, cand_imputed, edits, moved = reconfigure(
            model, imputed, config, seed=config.seed + 104729 * it
        )
        changed = bool(edits) or moved
        accepted = False
        prev_params = model.params.copy()
        if changed:
            phi_hat = _phi_hat_from(candidate, samples, {imp.index: imp.phi for imp in cand_imputed})
            _, info = solve_ssvm(candidate, samples, phi_hat, config)
            e_candidate = energy(candidate, samples, config.c)
            if e_candidate < e_current:
                model = candidate
                e_new = e_candidate
                accepted = True
            else:
                model.params[:] = prev_params
                phi_hat = _phi_hat_from(model, samples, {imp.index: imp.phi for imp in imputed})
                _, info = solve_ssvm(model, samples, phi_hat, config)
                e_new = energy(model, samples, config.c)
                if e_new > e_current:
                    # the approximate QP may overshoot; never accept an increase
                    model.params[:] = prev_params
                    e_new = e_current
        else:
            phi_hat = _phi_hat_from(model, samples, {imp.index: imp.phi for imp in imputed})
            _, info = solve_ssvm(model, samples, phi_hat, config)
            e_new = energy(model, samples, config.c)
            if e_new > e_current:
                model.params[:] = prev_params
                e_new = e_current
        if log is not None:
            log(
                {
                    "iter": it,
                    "energy": e_new,
                    "structure_accepted": accepted,
                    "leaf_counts": list(model.leaf_counts),
                    "constraint_count": info["rows"],
                    "wall_time": time.perf_counter() - t0,
                }
            )
        rel = abs(e_current - e_new) / max(abs(e_current), 1e-12)
        e_current = e_new
        if rel <= config.energy_tol:
            break
    return model


def train_multiclass(videos, codebook: Codebook, structure: StructureConfig, config: TrainConfig, log=None):
    """One-vs-rest training: one binary model per class, each taking every
    other class's videos as negatives.  Returns ``{class_name: model}`` with
    classes in sorted name order; requires fully labelled videos of >= 2
    classes.  ``log``, when given, is called as ``log(class_name, record)``.
    """
    labels = {v.label for v in videos}
    if None in labels:
        raise ArgumentError("multiclass training requires a label on every video")
    classes = sorted(labels)
    if len(classes) < 2:
        raise ArgumentError(f"multiclass training needs >= 2 classes, got {len(classes)}")
    models: dict[str, StaogModel] = {}
    for idx, cls in enumerate(classes):
        cls_samples = [(v, 1 if v.label == cls else -1) for v in videos]
        cls_config = replace(config, seed=config.seed + 1000003 * idx)
        cls_log = None if log is None else (lambda record, cls=cls: log(cls, record))
        models[cls] = train(cls_samples, codebook, structure, cls_config, log=cls_log)
    return models


def predict_scores(models, video: FeatureVideo):
    """Inference result of every per-class model on one video."""
    return {cls: infer(model, video) for cls, model in models.items()}


def predict(models, video: FeatureVideo):
    """Class with the highest score (ties: first in class-name order), plus
    the per-class inference results."""
    if not models:
        raise ArgumentError("predict: no models")
    scores = predict_scores(models, video)
    best = None
    for cls in sorted(scores):
        if best is None or scores[cls].score > scores[best].score:
            best = cls
    return best, scores
