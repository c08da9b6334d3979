"""Shared test fixtures: independent oracles and scene corruption."""

from __future__ import annotations

import math

import numpy as np

from streetinv import Cluster, Ray
from streetinv.simulator import GroundTruth, oracle_grid_center


def make_ray(origin, point) -> Ray:
    """Ray from origin through point (test fixture convenience)."""
    return Ray.through(origin, point)


def finite_difference_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient, the independent check for analytic ones."""
    g = np.zeros_like(x, dtype=float)
    for k in range(len(x)):
        e = np.zeros_like(x, dtype=float)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def grid_argmin(rays, center_hint, half_width=1.0, coarse_step=0.02, fine_step=0.001):
    """Coarse-to-fine composition of exhaustive grid searches.

    A literal single-pass 1 mm grid over a 2 m cube is 8e9 points; instead
    run the exhaustive oracle at a coarse step over the full cube, then at
    the fine step on a sub-box around the coarse argmin. The energy is a
    convex quadratic, so whenever the fine argmin is strictly interior the
    continuous minimizer is bracketed; if it lands on the sub-box boundary
    the box is doubled and the search repeated.
    """
    hint = np.asarray(center_hint, dtype=float)
    lo = hint - half_width
    hi = hint + half_width
    coarse = oracle_grid_center(rays, (lo, hi), coarse_step)
    margin = coarse_step + 8.0 * fine_step
    while True:
        lo2 = coarse - margin
        hi2 = coarse + margin
        fine = oracle_grid_center(rays, (lo2, hi2), fine_step)
        interior = np.all(fine > lo2 + fine_step * 0.5) and np.all(fine < hi2 - fine_step * 0.5)
        if interior:
            return fine
        margin *= 2.0


# Independent WGS-84 geodetic -> ENU oracle (textbook formulas, written
# separately from the implementation under test).
_A = 6378137.0
_F = 1.0 / 298.257223563


def oracle_geodetic_to_enu(lat, lon, alt, lat0, lon0, alt0):
    e2 = _F * (2 - _F)

    def ecef(lat_d, lon_d, h):
        la, lo = math.radians(lat_d), math.radians(lon_d)
        n = _A / math.sqrt(1 - e2 * math.sin(la) ** 2)
        return np.array(
            [
                (n + h) * math.cos(la) * math.cos(lo),
                (n + h) * math.cos(la) * math.sin(lo),
                (n * (1 - e2) + h) * math.sin(la),
            ]
        )

    d = ecef(lat, lon, alt) - ecef(lat0, lon0, alt0)
    la0, lo0 = math.radians(lat0), math.radians(lon0)
    rot = np.array(
        [
            [-math.sin(lo0), math.cos(lo0), 0.0],
            [-math.sin(la0) * math.cos(lo0), -math.sin(la0) * math.sin(lo0), math.cos(la0)],
            [math.cos(la0) * math.cos(lo0), math.cos(la0) * math.sin(lo0), math.sin(la0)],
        ]
    )
    return rot @ d


def true_clusters(observations, truth: GroundTruth) -> list[Cluster]:
    """The ideal clustering implied by ground truth (clutter as singletons)."""
    groups: dict = {}
    extras = []
    for o in observations:
        objid = truth.object_of[o.obs_id]
        if objid is None:
            extras.append({o.obs_id})
        else:
            groups.setdefault(objid, set()).add(o.obs_id)
    parts = sorted(list(groups.values()) + extras, key=min)
    return [Cluster(cluster_id=i, members=m) for i, m in enumerate(parts)]


def corrupt_links(observations, truth: GroundTruth, frac: float, rng: np.random.Generator):
    """Corrupt a fraction of the true linkage, mimicking chained local
    association errors: pairs of stolen rays form spurious ghost clusters
    (over-matching) and leftovers become detached singletons
    (under-matching). Only clusters keeping >= 2 members donate rays, so
    every corrupted observation has a surviving home cluster.

    Returns (clusters, n_ghosts, n_detached).
    """
    obs = {o.obs_id: o for o in observations}
    working: dict = {}
    for o in observations:
        objid = truth.object_of[o.obs_id]
        if objid is not None:
            working.setdefault(objid, set()).add(o.obs_id)
    total = sum(len(ms) for ms in working.values())
    stealable = [m for k in sorted(working) for m in sorted(working[k]) if len(working[k]) >= 3]
    n_corrupt = max(2, int(round(frac * total)))
    rng.shuffle(stealable)
    chosen = []
    budget = {k: len(ms) for k, ms in working.items()}
    for m in stealable:
        if len(chosen) >= n_corrupt:
            break
        k = truth.object_of[m]
        if budget[k] <= 2:
            continue
        chosen.append(m)
        budget[k] -= 1

    def pairable(a, b, require_same_category):
        if truth.object_of[a] == truth.object_of[b]:
            return False
        if obs[a].frame_id == obs[b].frame_id:
            return False
        if require_same_category and obs[a].category != obs[b].category:
            return False
        return True

    ghosts, detached, used = [], [], set()
    for require_same_category in (True, False):
        for i, a in enumerate(chosen):
            if a in used:
                continue
            for b in chosen[i + 1:]:
                if b in used or not pairable(a, b, require_same_category):
                    continue
                ghosts.append({a, b})
                used.add(a)
                used.add(b)
                break
    for a in chosen:
        if a not in used:
            detached.append({a})
            used.add(a)
    for m in used:
        working[truth.object_of[m]].discard(m)
    parts = [ms for ms in working.values() if ms] + ghosts + detached
    clusters = [
        Cluster(cluster_id=i, members=ms) for i, ms in enumerate(sorted(parts, key=min))
    ]
    return clusters, len(ghosts), len(detached)
