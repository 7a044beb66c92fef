"""OPTICS ordering and xi-steepness cluster extraction."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

UNDEFINED = np.inf


class ClusteringError(ValueError):
    pass


@dataclass(frozen=True)
class OpticsParams:
    min_samples: int = 5
    max_eps: float = math.inf
    xi: float = 0.05
    min_cluster_size: Optional[int] = None  # defaults to min_samples

    def __post_init__(self):
        if self.min_samples < 2:
            raise ClusteringError("min_samples must be >= 2")
        if not self.max_eps > 0:
            raise ClusteringError("max_eps must be positive")
        if not 0.0 < self.xi < 1.0:
            raise ClusteringError("xi must lie in (0, 1)")

    @property
    def cluster_floor(self) -> int:
        return self.min_cluster_size or self.min_samples


@dataclass(frozen=True)
class ReachabilityResult:
    """``reachability`` is indexed by ordered position; ``core_distance`` and
    ``predecessor`` by row. ``inf`` marks undefined distances, -1 no predecessor."""

    ordering: np.ndarray
    reachability: np.ndarray
    core_distance: np.ndarray
    predecessor: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("position,row,reachability\n")
            for pos, (row, r) in enumerate(zip(self.ordering, self.reachability)):
                fh.write(f"{pos},{row},{'' if np.isinf(r) else repr(float(r))}\n")


@dataclass(frozen=True)
class Clustering:
    """Per-row cluster ids (-1 = noise unless grouped)."""

    labels: np.ndarray
    noise_id: Optional[int] = None
    cluster_sizes: dict = field(init=False)
    largest_id: int = field(init=False)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        ids, counts = np.unique(labels, return_counts=True)
        sizes = {int(i): int(c) for i, c in zip(ids, counts)}
        genuine = {i: c for i, c in sizes.items() if i != -1 and i != self.noise_id}
        # ties go to the lowest id
        largest = max(genuine, key=lambda i: (genuine[i], -i)) if genuine else -1
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "cluster_sizes", sizes)
        object.__setattr__(self, "largest_id", largest)

    @property
    def ids(self) -> list[int]:
        """All cluster ids that hold rows, noise group included, raw noise excluded."""
        return [i for i in self.cluster_sizes if i != -1]

    @property
    def n_clusters(self) -> int:
        return len(self.ids)

    def members(self, cluster_id: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cluster_id)

    def is_noise_group(self, cluster_id: int) -> bool:
        return self.noise_id is not None and cluster_id == self.noise_id


def _row_distances(X: np.ndarray, rows: np.ndarray, point: np.ndarray) -> np.ndarray:
    return np.sqrt(((X[rows] - point) ** 2).sum(axis=1))


def core_distances(X: np.ndarray, min_samples: int, max_eps: float = math.inf) -> np.ndarray:
    """Distance to the ``min_samples``-th nearest neighbor, the point itself counted first."""
    n, d = X.shape
    out = np.empty(n)
    chunk = max(1, 2_000_000 // max(1, n * d))
    for lo in range(0, n, chunk):
        block = X[lo:lo + chunk]
        dist = np.sqrt(((X[None, :, :] - block[:, None, :]) ** 2).sum(axis=2))
        out[lo:lo + chunk] = np.partition(dist, min_samples - 1, axis=1)[:, min_samples - 1]
    out[out > max_eps] = UNDEFINED
    return out


def optics_order(points: np.ndarray, params: OpticsParams = OpticsParams()) -> ReachabilityResult:
    """OPTICS with Euclidean distance.

    The next point expanded is the unprocessed one with the smallest
    reachability. Ties, including the choice of the point that starts each
    connected component, go to the lexicographically smallest coordinates and
    then to the lowest row index, so the ordering does not depend on the input
    row order unless points coincide.
    """
    X = np.ascontiguousarray(points, dtype=np.float64)
    n = X.shape[0]
    if X.ndim != 2 or n < params.min_samples:
        raise ClusteringError(f"need at least min_samples={params.min_samples} rows, got {n}")
    core = core_distances(X, params.min_samples, params.max_eps)
    reach = np.full(n, UNDEFINED)
    pred = np.full(n, -1, dtype=np.int64)
    unprocessed = np.arange(n)
    ordering = np.empty(n, dtype=np.int64)
    # lexsort treats its last key as primary; reverse so column 0 leads
    rank = np.empty(n, dtype=np.int64)
    rank[np.lexsort(X.T[::-1])] = np.arange(n)
    for pos in range(n):
        r = reach[unprocessed]
        tied = np.flatnonzero(r == r.min())
        k = int(tied[np.argmin(rank[unprocessed[tied]])]) if len(tied) > 1 else int(tied[0])
        p = unprocessed[k]
        unprocessed = np.delete(unprocessed, k)
        ordering[pos] = p
        if np.isinf(core[p]) or unprocessed.size == 0:
            continue
        d = _row_distances(X, unprocessed, X[p])
        new = np.maximum(d, core[p])
        better = new < reach[unprocessed]
        if not math.isinf(params.max_eps):
            better &= d <= params.max_eps
        targets = unprocessed[better]
        reach[targets] = new[better]
        pred[targets] = p
    return ReachabilityResult(ordering, reach[ordering], core, pred)


# --- xi extraction ---------------------------------------------------------


def _extend_region(steep: np.ndarray, away: np.ndarray, start: int, min_samples: int) -> int:
    """Last index of the steep region beginning at ``start``.

    The region may contain up to ``min_samples`` consecutive non-steep points
    but ends at the first point that moves in the opposite direction.
    """
    n = len(steep)
    non_steep = 0
    end = start
    index = start
    while index < n:
        if steep[index]:
            non_steep = 0
            end = index
        elif not away[index]:
            non_steep += 1
            if non_steep > min_samples:
                break
        else:
            return end
        index += 1
    return end


def _update_down_areas(areas: list, mib: float, keep_ratio: float, plot: np.ndarray) -> list:
    if np.isinf(mib):
        return []
    kept = [a for a in areas if mib <= plot[a["start"]] * keep_ratio]
    for a in kept:
        a["mib"] = max(a["mib"], mib)
    return kept


def _correct_predecessor(plot, pred_plot, ordering, s, e):
    while s < e:
        if plot[s] > plot[e]:
            return s, e
        p_e = pred_plot[e]
        for i in range(s, e):
            if p_e == ordering[i]:
                return s, e
        e -= 1
    return None, None


def xi_intervals(result: ReachabilityResult, params: OpticsParams) -> list[tuple[int, int]]:
    """All xi clusters as inclusive (start, end) ordered-position intervals.

    Steep-down and steep-up areas are points whose successor's reachability
    changes by at least a factor ``1 - xi``; a cluster spans a steep-down area
    to a matching steep-up area. Nested clusters are listed before the
    clusters that enclose them.
    """
    min_samples = params.min_samples
    keep_ratio = 1.0 - params.xi
    plot = np.hstack((result.reachability, np.inf))
    pred_plot = np.hstack((result.predecessor[result.ordering], -1))
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = plot[:-1] / plot[1:]
        steep_up = ratio <= keep_ratio
        steep_down = ratio >= 1.0 / keep_ratio
        down = ratio > 1
        up = ratio < 1

    down_areas: list = []
    clusters: list[tuple[int, int]] = []
    index = 0
    mib = 0.0
    for steep_index in np.flatnonzero(steep_up | steep_down):
        if steep_index < index:
            continue
        mib = max(mib, float(np.max(plot[index:steep_index + 1])))
        down_areas = _update_down_areas(down_areas, mib, keep_ratio, plot)
        if steep_down[steep_index]:
            d_end = _extend_region(steep_down, up, steep_index, min_samples)
            down_areas.append({"start": int(steep_index), "end": d_end, "mib": 0.0})
            index = d_end + 1
            mib = plot[index]
            continue
        u_start = int(steep_index)
        u_end = _extend_region(steep_up, down, u_start, min_samples)
        index = u_end + 1
        mib = plot[index]
        found = []
        for area in down_areas:
            c_start = area["start"]
            c_end = u_end
            if plot[c_end + 1] * keep_ratio < area["mib"]:
                continue
            d_max = plot[area["start"]]
            if d_max * keep_ratio >= plot[c_end + 1]:
                while plot[c_start + 1] > plot[c_end + 1] and c_start < area["end"]:
                    c_start += 1
            elif plot[c_end + 1] * keep_ratio >= d_max:
                while plot[c_end - 1] > d_max and c_end > u_start:
                    c_end -= 1
            c_start, c_end = _correct_predecessor(plot, pred_plot, result.ordering, c_start, c_end)
            if c_start is None:
                continue
            if c_end - c_start + 1 < params.cluster_floor:
                continue
            if c_start > area["end"] or c_end < u_start:
                continue
            found.append((int(c_start), int(c_end)))
        found.reverse()
        clusters.extend(found)
    return clusters


def extract_clusters(result: ReachabilityResult, params: OpticsParams = OpticsParams()) -> Clustering:
    """Label every row with the innermost xi cluster that contains it.

    Enclosing clusters keep only the rows none of their sub-clusters claim;
    rows outside every cluster are noise (-1). Ids are numbered by first
    ordered position.
    """
    n = len(result.ordering)
    by_position = np.full(n, -1, dtype=np.int64)
    intervals = xi_intervals(result, params)
    # widest first so nested intervals overwrite their parents
    widths = [e - s for s, e in intervals]
    for k in sorted(range(len(intervals)), key=lambda k: (-widths[k], k)):
        s, e = intervals[k]
        by_position[s:e + 1] = k
    relabel: dict[int, int] = {}
    for raw in by_position:
        if raw != -1 and raw not in relabel:
            relabel[int(raw)] = len(relabel)
    by_position = np.array([relabel.get(int(r), -1) for r in by_position], dtype=np.int64)
    labels = np.empty(n, dtype=np.int64)
    labels[result.ordering] = by_position
    return Clustering(labels)


def group_noise(clustering: Clustering) -> Clustering:
    """Fold all noise rows into one pseudo-cluster that can never be the largest."""
    labels = clustering.labels
    if not (labels == -1).any():
        return clustering
    noise_id = int(labels.max()) + 1 if (labels >= 0).any() else 0
    grouped = np.where(labels == -1, noise_id, labels)
    return replace(clustering, labels=grouped, noise_id=noise_id)


def cluster_points(points: np.ndarray, params: OpticsParams = OpticsParams()) -> tuple[Clustering, ReachabilityResult]:
    result = optics_order(points, params)
    return group_noise(extract_clusters(result, params)), result
