"""Cross-view association of observations within a sliding frame window.

Pairwise matchability scores (from the built-in geometric scorer or an
external file) feed an optimal one-to-one assignment per frame pair;
matches below the confidence threshold are discarded, and the surviving
pairs are chained into initial clusters by connected components.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import Observation
from .triangulation import Ray, ray_ray_distance

__all__ = [
    "MatchMatrix",
    "PairMatch",
    "Cluster",
    "geometric_score",
    "build_score_matrix",
    "assign_pairs",
    "transitive_cluster",
]

DEFAULT_TAU = 0.5
DEFAULT_SIGMA_G = 0.5  # meters; decay scale of the geometric score


@dataclass(eq=False)
class MatchMatrix:
    """Symmetric N x N matchability scores over an ordered set of obs ids."""

    obs_ids: list[int]
    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        n = len(self.obs_ids)
        if self.scores.shape != (n, n):
            raise ValueError(f"scores must be {n}x{n}, got {self.scores.shape}")
        if np.any(self.scores < 0.0) or np.any(self.scores > 1.0):
            raise ValueError("scores must lie in [0, 1]")
        if np.any(np.abs(np.diagonal(self.scores)) > 0.0):
            raise ValueError("diagonal entries must be zero")
        if not np.allclose(self.scores, self.scores.T, atol=1e-9):
            raise ValueError("scores must be symmetric")
        self._index = {obs_id: i for i, obs_id in enumerate(self.obs_ids)}
        if len(self._index) != n:
            raise ValueError("obs_ids contains duplicates")

    def index_of(self, obs_id: int) -> int:
        return self._index[obs_id]

    def score(self, obs_a: int, obs_b: int) -> float:
        return float(self.scores[self._index[obs_a], self._index[obs_b]])


@dataclass(frozen=True)
class PairMatch:
    """An accepted match between two observations from different frames."""

    obs_a: int
    obs_b: int
    score: float


@dataclass(eq=False)
class Cluster:
    """A group of observation ids, optionally with an estimated 3D center.

    When `center` is set, `residuals` maps every member to its
    point-to-ray distance from the center.
    """

    cluster_id: int
    members: set[int]
    center: np.ndarray | None = None
    residuals: dict[int, float] | None = None

    def __post_init__(self):
        self.members = set(self.members)
        if not self.members:
            raise ValueError("cluster must have at least one member")
        if self.center is not None:
            self.center = np.asarray(self.center, dtype=float)
            if self.residuals is None or set(self.residuals) != self.members:
                raise ValueError("residuals must cover exactly the members when center is set")

    @property
    def size(self) -> int:
        return len(self.members)


def geometric_score(a: Observation, b: Observation, sigma_g: float = DEFAULT_SIGMA_G) -> float:
    """Baseline matchability from ray proximity: exp(-gap / sigma_g).

    Returns 0 for observations of different categories or from the same
    frame. The gap is the minimum 3D distance between the two rays.
    """
    if a.category != b.category or a.frame_id == b.frame_id:
        return 0.0
    gap = ray_ray_distance(Ray(a.exposure, a.direction), Ray(b.exposure, b.direction))
    return float(min(1.0, max(0.0, np.exp(-gap / sigma_g))))


def build_score_matrix(
    observations: list[Observation],
    sigma_g: float = DEFAULT_SIGMA_G,
    max_frame_gap: int | None = None,
) -> MatchMatrix:
    """Geometric-score matrix over all observations.

    Only same-category pairs from different frames get a nonzero score.
    When `max_frame_gap` is given, pairs further apart in the sorted frame
    ordering are left at zero; the assignment stage never consults them.
    """
    obs_ids = [o.obs_id for o in observations]
    n = len(observations)
    scores = np.zeros((n, n))
    frame_rank = {f: i for i, f in enumerate(sorted({o.frame_id for o in observations}))}
    by_category: dict[str, list[int]] = {}
    for i, o in enumerate(observations):
        by_category.setdefault(o.category, []).append(i)
    for indices in by_category.values():
        for ai in range(len(indices)):
            for bi in range(ai + 1, len(indices)):
                i, j = indices[ai], indices[bi]
                a, b = observations[i], observations[j]
                if a.frame_id == b.frame_id:
                    continue
                if max_frame_gap is not None:
                    if abs(frame_rank[a.frame_id] - frame_rank[b.frame_id]) > max_frame_gap:
                        continue
                s = geometric_score(a, b, sigma_g)
                scores[i, j] = s
                scores[j, i] = s
    return MatchMatrix(obs_ids=obs_ids, scores=scores)


def assign_pairs(
    m: MatchMatrix,
    frame_of: dict[int, int],
    window: list[int],
    tau: float = DEFAULT_TAU,
) -> list[PairMatch]:
    """Optimal one-to-one matches for every frame pair in the window.

    For each unordered pair of frames, solves the maximum-weight bipartite
    assignment between the frames' observations and keeps assignments whose
    score is at least `tau`.
    """
    missing = [obs_id for obs_id in m.obs_ids if obs_id not in frame_of]
    if missing:
        raise ValueError(f"obs ids missing from frame_of: {missing[:5]}")
    by_frame: dict[int, list[int]] = {f: [] for f in window}
    for obs_id in m.obs_ids:
        f = frame_of[obs_id]
        if f in by_frame:
            by_frame[f].append(obs_id)
    for ids in by_frame.values():
        ids.sort()

    matches: list[PairMatch] = []
    frames = sorted(window)
    for i in range(len(frames)):
        for j in range(i + 1, len(frames)):
            left = by_frame[frames[i]]
            right = by_frame[frames[j]]
            if not left or not right:
                continue
            block = np.array([[m.score(a, b) for b in right] for a in left])
            rows, cols = linear_sum_assignment(block, maximize=True)
            for r, c in zip(rows, cols):
                score = float(block[r, c])
                if score >= tau:
                    a, b = left[r], right[c]
                    matches.append(PairMatch(obs_a=min(a, b), obs_b=max(a, b), score=score))
    return matches


class _UnionFind:
    """Union by rank with path compression over observation ids."""

    def __init__(self, items):
        self._parent = {x: x for x in items}
        self._rank = {x: 0 for x in items}

    def find(self, x):
        root = x
        while self._parent[root] != root:
            root = self._parent[root]
        while self._parent[x] != root:
            self._parent[x], x = root, self._parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self._rank[ra] < self._rank[rb]:
            ra, rb = rb, ra
        self._parent[rb] = ra
        if self._rank[ra] == self._rank[rb]:
            self._rank[ra] += 1


def transitive_cluster(pairs: list[PairMatch], all_obs: list[int]) -> list[Cluster]:
    """Chain pair matches into clusters by connected components.

    Every observation in `all_obs` ends up in exactly one cluster;
    unmatched observations become singletons. Cluster ids are assigned in
    order of each component's smallest member id.
    """
    uf = _UnionFind(all_obs)
    known = set(all_obs)
    for pair in pairs:
        if pair.obs_a not in known or pair.obs_b not in known:
            raise ValueError(f"pair ({pair.obs_a}, {pair.obs_b}) references unknown observation")
        uf.union(pair.obs_a, pair.obs_b)
    components: dict[int, set[int]] = {}
    for obs_id in all_obs:
        components.setdefault(uf.find(obs_id), set()).add(obs_id)
    ordered = sorted(components.values(), key=min)
    return [Cluster(cluster_id=i, members=members) for i, members in enumerate(ordered)]
