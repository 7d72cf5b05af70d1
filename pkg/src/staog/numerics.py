"""Numerical kernels: seeded k-means, spectral clustering with automatic
cluster count, and the boxed QP solver behind the cutting-plane trainer.

Everything here is deterministic given the seed arguments; nothing touches
global RNG state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError


@dataclass
class ClusterResult:
    assignment: np.ndarray  # (n,) cluster id per input vector
    centroids: np.ndarray  # (n_clusters, dim)
    inertia: float
    history: list[float] = field(default_factory=list)  # inertia per Lloyd sweep

    @property
    def n_clusters(self) -> int:
        return len(self.centroids)


def _as_matrix(vectors) -> np.ndarray:
    try:
        mat = np.asarray(vectors, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ArgumentError(f"expected equal-length numeric vectors: {exc}") from exc
    if mat.ndim != 2:
        raise ArgumentError(f"expected a list of equal-length vectors, got shape {mat.shape}")
    return mat


def _sqdist(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d2 = (
        (points * points).sum(axis=1)[:, None]
        - 2.0 * (points @ centers.T)
        + (centers * centers).sum(axis=1)[None, :]
    )
    np.maximum(d2, 0.0, out=d2)
    return d2


def _plusplus_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[int(rng.integers(n))]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total > 0.0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        centers[c] = points[idx]
        np.minimum(d2, ((points - centers[c]) ** 2).sum(axis=1), out=d2)
    return centers


def kmeans(vectors, k: int, seed: int, max_iters: int = 100) -> ClusterResult:
    """Lloyd's algorithm with seeded k-means++ initialisation.

    Empty clusters are re-seeded from the point farthest from its assigned
    centroid.  Stops at an assignment fixpoint or after ``max_iters`` sweeps.
    """
    points = _as_matrix(vectors)
    n = points.shape[0]
    if n == 0:
        raise ArgumentError("kmeans: no input vectors")
    if not 1 <= k <= n:
        raise ArgumentError(f"kmeans: k={k} out of range [1, {n}]")
    rng = np.random.default_rng(seed)
    centers = _plusplus_init(points, k, rng)
    assign = None
    history: list[float] = []
    rows = np.arange(n)
    for _ in range(max_iters):
        d2 = _sqdist(points, centers)
        new_assign = d2.argmin(axis=1)
        for c in range(k):
            if not (new_assign == c).any():
                far = int(d2[rows, new_assign].argmax())
                centers[c] = points[far]
                d2[:, c] = ((points - centers[c]) ** 2).sum(axis=1)
                new_assign = d2.argmin(axis=1)
        history.append(float(d2[rows, new_assign].sum()))
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            centers[c] = points[assign == c].mean(axis=0)
    d2 = _sqdist(points, centers)
    inertia = float(d2[rows, assign].sum())
    return ClusterResult(assign.copy(), centers.copy(), inertia, history)


def spectral_cluster(vectors, max_clusters: int, seed: int) -> ClusterResult:
    """Normalised-cut clustering with the cluster count picked by eigengap.

    Gaussian affinities use sigma = median entry of the full pairwise
    distance matrix (self-pairs included; sigma falls back to 1 when the
    median is 0).  The number of clusters maximises the gap between
    consecutive Laplacian eigenvalues, capped at ``max_clusters`` with a
    floor of 1; k-means then runs on the row-normalised eigenvector
    embedding.  Fewer than two vectors yield a single cluster.
    """
    if max_clusters < 1:
        raise ArgumentError(f"spectral_cluster: max_clusters={max_clusters} < 1")
    n = len(vectors)
    if n == 0:
        return ClusterResult(np.zeros(0, dtype=int), np.zeros((0, 0)), 0.0)
    points = _as_matrix(vectors)
    if n < 2:
        return ClusterResult(np.zeros(n, dtype=int), points.copy(), 0.0)
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    sigma = float(np.median(dist))
    if sigma <= 0.0:
        sigma = 1.0
    aff = np.exp(-(dist**2) / (2.0 * sigma * sigma))
    inv_sqrt_deg = 1.0 / np.sqrt(aff.sum(axis=1))
    lap = np.eye(n) - aff * inv_sqrt_deg[:, None] * inv_sqrt_deg[None, :]
    evals, evecs = np.linalg.eigh((lap + lap.T) * 0.5)
    cap = min(max_clusters, n - 1)
    gaps = evals[1 : cap + 1] - evals[:cap]
    n_clusters = int(np.argmax(gaps)) + 1 if cap >= 1 else 1
    emb = evecs[:, :n_clusters].copy()
    for col in range(emb.shape[1]):
        # fix the eigenvector sign so the embedding is run-to-run stable
        pivot = int(np.abs(emb[:, col]).argmax())
        if emb[pivot, col] < 0:
            emb[:, col] = -emb[:, col]
    norms = np.sqrt((emb**2).sum(axis=1))
    nz = norms > 0
    emb[nz] /= norms[nz, None]
    km = kmeans(emb, n_clusters, seed)
    return ClusterResult(km.assignment, km.centroids, km.inertia, km.history)


def qp_solve(
    rows,
    c: float,
    groups=None,
    *,
    dim: int | None = None,
    tol: float = 1e-6,
    alpha0=None,
    max_steps: int | None = None,
    history: list[float] | None = None,
):
    """Solve the restricted margin-rescaling dual by pairwise coordinate ascent.

    ``rows`` is a list of ``(coef_vector, loss)`` constraint rows; the dual
    maximises ``sum(loss * alpha) - 0.5 * ||sum(alpha * coef)||**2`` subject
    to ``alpha >= 0`` and ``sum(alpha) <= c`` within each group.  Each step
    greedily picks the single-coordinate move or the within-group pairwise
    mass transfer with the largest directional gradient (pair moves keep the
    group sum fixed, so tight groups cannot stall progress) and takes the
    exact clipped line-search step.  Terminates at duality gap <= ``tol``.

    ``alpha0`` warm-starts the dual variables.  Returns
    ``(primal_weights, alpha)``.
    """
    if not rows:
        if dim is None:
            raise ArgumentError("qp_solve: dim required when no rows are given")
        return np.zeros(dim), np.zeros(0)
    coef = np.asarray([np.asarray(r[0], dtype=float) for r in rows])
    loss = np.asarray([float(r[1]) for r in rows])
    n_rows = len(rows)
    grp = list(groups) if groups is not None else list(range(n_rows))
    if len(grp) != n_rows:
        raise ArgumentError("qp_solve: groups length must match rows")
    group_of: dict = {}
    gidx = np.empty(n_rows, dtype=int)
    for r, g in enumerate(grp):
        gidx[r] = group_of.setdefault(g, len(group_of))
    n_groups = len(group_of)
    members: list[np.ndarray] = [
        np.flatnonzero(gidx == g) for g in range(n_groups)
    ]
    gram = coef @ coef.T
    diag = np.diag(gram).copy()
    if alpha0 is not None:
        alpha = np.asarray(alpha0, dtype=float).copy()
        if alpha.shape != (n_rows,):
            raise ArgumentError("qp_solve: alpha0 length must match rows")
        np.maximum(alpha, 0.0, out=alpha)
    else:
        alpha = np.zeros(n_rows)
    gsum = np.zeros(n_groups)
    np.add.at(gsum, gidx, alpha)
    for g in range(n_groups):
        if gsum[g] > c:  # rescale an infeasible warm start
            alpha[members[g]] *= c / gsum[g]
            gsum[g] = c
    grad = loss - gram @ alpha
    if max_steps is None:
        max_steps = max(20000, 400 * n_rows)
    check_every = max(64, n_rows)

    def gap_value() -> float:
        nonlocal grad
        grad = loss - gram @ alpha  # refresh against incremental drift
        slack = np.full(n_groups, -np.inf)
        np.maximum.at(slack, gidx, grad)
        np.maximum(slack, 0.0, out=slack)
        primal = 0.5 * (loss @ alpha - grad @ alpha) + c * slack.sum()
        dual = 0.5 * (loss @ alpha + grad @ alpha)
        if history is not None:
            history.append(float(dual))
        return float(primal - dual)

    if gap_value() > tol:
        neg_inf = -np.inf
        for step_no in range(max_steps):
            cap = c - gsum[gidx]
            up_ok = cap > 0.0
            down_ok = alpha > 0.0
            single_up = np.where(up_ok, grad, neg_inf)
            single_down = np.where(down_ok, -grad, neg_inf)
            r_up = int(np.argmax(single_up))
            r_down = int(np.argmax(single_down))
            best_kind, best_val, best_rs = 0, single_up[r_up], (r_up, -1)
            if single_down[r_down] > best_val:
                best_kind, best_val, best_rs = 1, single_down[r_down], (r_down, -1)
            grp_hi = np.full(n_groups, neg_inf)
            np.maximum.at(grp_hi, gidx, grad)
            grp_lo = np.full(n_groups, np.inf)
            np.minimum.at(grp_lo, gidx[down_ok], grad[down_ok])
            pair_val = grp_hi - grp_lo
            g_best = int(np.argmax(pair_val))
            if pair_val[g_best] > best_val:
                mem = members[g_best]
                gm = grad[mem]
                r = int(mem[int(np.argmax(gm))])
                downs = mem[alpha[mem] > 0.0]
                s = int(downs[int(np.argmin(grad[downs]))])
                if r != s:
                    best_kind, best_val, best_rs = 2, pair_val[g_best], (r, s)
            if best_val <= 1e-14:
                break
            if best_kind == 0:
                r = best_rs[0]
                hi = c - gsum[gidx[r]]
                step = grad[r] / diag[r] if diag[r] > 0.0 else hi
                step = min(step, hi)
                if step <= 0.0:
                    break
                alpha[r] += step
                gsum[gidx[r]] += step
                grad -= step * gram[r]
            elif best_kind == 1:
                r = best_rs[0]
                step = -grad[r] / diag[r] if diag[r] > 0.0 else alpha[r]
                step = min(step, alpha[r])
                if step <= 0.0:
                    break
                alpha[r] -= step
                gsum[gidx[r]] -= step
                grad += step * gram[r]
            else:
                r, s = best_rs
                den = diag[r] + diag[s] - 2.0 * gram[r, s]
                step = (grad[r] - grad[s]) / den if den > 0.0 else alpha[s]
                step = min(step, alpha[s])
                if step <= 0.0:
                    break
                alpha[r] += step
                alpha[s] -= step
                grad -= step * (gram[r] - gram[s])
            if (step_no + 1) % check_every == 0 and gap_value() <= tol:
                break
        else:
            gap_value()
    w = coef.T @ alpha
    return w, alpha
