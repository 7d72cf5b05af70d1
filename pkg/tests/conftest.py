"""Shared generators for randomized and planted test instances."""

from __future__ import annotations

import numpy as np
import pytest

from staog import Codebook, FeatureVideo, InterestPoint, StaogModel, StructureConfig
from staog.features import CellChoice, CellMix, ClassSpec, MotifSpec, SynthSpec
from staog.model import Assignment


def make_video(rng, vid="v0", width=120, height=90, num_frames=30, n_points=40, dim=4,
               label=None):
    points = [
        InterestPoint(
            int(rng.integers(num_frames)),
            float(rng.uniform(0, width)),
            float(rng.uniform(0, height)),
            tuple(rng.normal(size=dim)),
        )
        for _ in range(n_points)
    ]
    return FeatureVideo(vid, label, width, height, num_frames, dim, points).validate()


def make_codebook(rng, k=5, dim=4):
    return Codebook(dim=dim, centroids=rng.normal(size=(k, dim))).validate()


def small_structure(**overrides) -> StructureConfig:
    base = dict(
        temporal_slots=2,
        grid_rows=1,
        grid_cols=2,
        max_leaves=2,
        span=5,
        part_width=30.0,
        part_height=30.0,
        frame_width=120,
        frame_height=90,
        shift_steps=(3,),
        max_hypotheses=10**9,
        search_radius=10,
        search_stride=10,
    )
    base.update(overrides)
    return StructureConfig(**base).validate()


def random_model(rng, structure=None, k=5, dim=4, scale=0.5):
    structure = structure or small_structure()
    codebook = make_codebook(rng, k=k, dim=dim)
    counts = [int(rng.integers(1, structure.max_leaves + 1)) for _ in range(structure.num_or_nodes)]
    model = StaogModel(structure, codebook, leaf_counts=counts)
    model.params[:] = rng.normal(scale=scale, size=model.layout.size)
    return model


def random_assignment(rng, model, video) -> Assignment:
    """Any valid latent configuration: in-range strictly increasing anchors,
    random active leaves, random in-bounds positions."""
    from staog.features import initial_anchors

    st = model.structure
    anchors = initial_anchors(video, st.temporal_slots)
    lo, hi = model.valid_anchor_range(video.num_frames)
    domain = st.shift_domain()
    for _ in range(200):
        shifts = [int(domain[rng.integers(len(domain))]) for _ in range(st.temporal_slots)]
        frames = [a + s for a, s in zip(anchors, shifts)]
        if all(lo <= f < hi for f in frames) and all(
            frames[t + 1] > frames[t] for t in range(len(frames) - 1)
        ):
            break
    else:
        shifts = [0] * st.temporal_slots
        frames = list(anchors)
    active = tuple(int(rng.integers(model.n_leaves(i))) for i in range(st.num_or_nodes))
    positions = tuple(
        (float(rng.uniform(0, video.width - 1)), float(rng.uniform(0, video.height - 1)))
        for _ in range(st.num_or_nodes)
    )
    return Assignment(tuple(shifts), tuple(frames), active, positions)


def _one_hot_motif(i, dim=8, scale=4.0, noise=0.05):
    mean = [0.0] * dim
    mean[i] = scale
    return MotifSpec(mean=tuple(mean), noise=noise)


def separable_spec(videos_per_class=20) -> SynthSpec:
    """Two classes with opposite motif orderings; cleanly separable."""
    return SynthSpec(
        width=320, height=240, num_frames=64, descriptor_dim=8,
        grid_rows=2, grid_cols=2, slots=2,
        motifs={"m1": _one_hot_motif(0), "m2": _one_hot_motif(2)},
        classes={
            "A": ClassSpec(videos=videos_per_class,
                           layout=(("m1", "m1", "m2", "m2"), ("m2", "m2", "m1", "m1")),
                           jitter=3),
            "B": ClassSpec(videos=videos_per_class,
                           layout=(("m2", "m2", "m1", "m1"), ("m1", "m1", "m2", "m2")),
                           jitter=3),
        },
        points_per_motif=6, spatial_scatter=8.0, frame_scatter=2, clutter_points=10,
    ).validate()


def bimodal_spec(videos_per_class=20) -> SynthSpec:
    """Positive class with two appearance modes at cell 0; the negative class
    presents the mixture of both modes there, so only a leaf split separates."""
    bimodal = CellChoice(("mA", "mB"))
    confuser = CellMix(("mA", "mB"))
    return SynthSpec(
        width=320, height=240, num_frames=64, descriptor_dim=8,
        grid_rows=2, grid_cols=2, slots=2,
        motifs={"mA": _one_hot_motif(0), "mB": _one_hot_motif(2), "mC": _one_hot_motif(4)},
        classes={
            "X": ClassSpec(videos=videos_per_class,
                           layout=((bimodal, "mC", "mC", "mC"), (bimodal, "mC", "mC", "mC")),
                           jitter=2),
            "Y": ClassSpec(videos=videos_per_class,
                           layout=((confuser, "mC", "mC", "mC"), (confuser, "mC", "mC", "mC")),
                           jitter=2),
        },
        points_per_motif=6, spatial_scatter=8.0, frame_scatter=2, clutter_points=8,
    ).validate()


def train_structure(**overrides) -> StructureConfig:
    base = dict(
        temporal_slots=2, grid_rows=2, grid_cols=2, max_leaves=4,
        span=9, part_width=80.0, part_height=60.0,
        frame_width=320, frame_height=240,
        shift_steps=(2, 4), max_hypotheses=3,
        search_radius=20, search_stride=10,
    )
    base.update(overrides)
    return StructureConfig(**base).validate()


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
