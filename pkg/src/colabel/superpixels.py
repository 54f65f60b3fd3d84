"""Mean-shift superpixels and the multi-layer clique sets built from them."""

from __future__ import annotations

import heapq
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .core import ShapeError, VideoVolume


@dataclass(frozen=True)
class MeanShiftParams:
    spatial_bandwidth: float
    range_bandwidth: float
    min_region_size: int = 1
    max_iterations: int = 50
    convergence_eps: float = 0.1

    def __post_init__(self):
        for name in ("spatial_bandwidth", "range_bandwidth", "convergence_eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("min_region_size", "max_iterations"):
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer, got {getattr(self, name)}")


DEFAULT_MEANSHIFT = (
    MeanShiftParams(7, 6.5, 20),
    MeanShiftParams(7, 9.5, 50),
    MeanShiftParams(7, 13, 100),
)


@dataclass(frozen=True)
class SegmentationMap:
    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2:
            raise ShapeError(f"segmentation map must be H x W, got {lab.shape}")
        lab = lab.astype(np.int64)
        present = np.unique(lab)
        if present[0] != 0 or present[-1] != present.size - 1:
            raise ValueError("region ids must be contiguous from 0")
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)

    @property
    def n_regions(self) -> int:
        return int(self.labels.max()) + 1


@dataclass(frozen=True)
class CliqueLayerSet:
    """Per-layer, per-frame region maps plus global clique ids.

    ``ids[m, t, y, x]`` is the global clique of that pixel in layer m; ids
    are laid out layer-major, then frame, then region, so cliques never
    span frames and never collide across layers.
    """

    maps: tuple
    ids: np.ndarray
    n_cliques: int

    @property
    def n_layers(self) -> int:
        return self.ids.shape[0]


def relabel_raster(labels: np.ndarray) -> np.ndarray:
    """Renumber ids 0..R-1 in raster order of first occurrence."""
    flat = labels.ravel()
    _, first, inverse = np.unique(flat, return_index=True, return_inverse=True)
    rank = np.empty_like(first)
    rank[np.argsort(first, kind="stable")] = np.arange(first.size)
    return rank[inverse].reshape(labels.shape)


def _window_offsets(radius: float) -> tuple[np.ndarray, np.ndarray]:
    # window centres are rounded to the grid, which moves them by at most sqrt(2) / 2
    r = int(math.ceil(radius + 0.75))
    dy, dx = np.mgrid[-r : r + 1, -r : r + 1]
    keep = dy**2 + dx**2 <= (radius + 0.75) ** 2
    return dy[keep].astype(np.int64), dx[keep].astype(np.int64)


def _find_modes(frame: np.ndarray, params: MeanShiftParams, chunk: int = 2048) -> np.ndarray:
    """Flat-kernel mean shift of every pixel's 5-d feature to its mode.

    Features are (x / hs, y / hs, r / hr, g / hr, b / hr); the window is the
    unit ball.  Spatial coordinates of window candidates come straight from
    the pixel grid, so only colours are gathered.
    """
    h, w, _ = frame.shape
    yy, xx = np.mgrid[0:h, 0:w]
    hs, hr = float(params.spatial_bandwidth), float(params.range_bandwidth)
    rgb = frame.reshape(-1, 3).astype(np.float64) / hr
    pos = np.concatenate([xx.reshape(-1, 1) / hs, yy.reshape(-1, 1) / hs, rgb], axis=1)
    active = np.arange(h * w)
    dy, dx = _window_offsets(hs)
    eps2 = params.convergence_eps**2

    for _ in range(params.max_iterations):
        if active.size == 0:
            break
        still = []
        for s in range(0, active.size, chunk):
            idx = active[s : s + chunk]
            p = pos[idx]
            cy = np.rint(p[:, 1] * hs).astype(np.int64)[:, None] + dy[None, :]
            cx = np.rint(p[:, 0] * hs).astype(np.int64)[:, None] + dx[None, :]
            inside = (cy >= 0) & (cy < h) & (cx >= 0) & (cx < w)
            col = rgb[np.where(inside, cy * w + cx, 0)]
            d2 = (cx / hs - p[:, :1]) ** 2 + (cy / hs - p[:, 1:2]) ** 2
            d2 += np.einsum("ikc,ikc->ik", col - p[:, None, 2:], col - p[:, None, 2:])
            near = inside & (d2 <= 1.0)
            count = near.sum(axis=1)
            moved = count > 0
            nf = near[moved].astype(np.float64)
            cnt = count[moved, None]
            mean = np.concatenate(
                [
                    (nf * cx[moved]).sum(axis=1, keepdims=True) / hs,
                    (nf * cy[moved]).sum(axis=1, keepdims=True) / hs,
                    np.einsum("ik,ikc->ic", nf, col[moved]),
                ],
                axis=1,
            )
            mean[:, :2] /= cnt
            mean[:, 2:] /= cnt
            shift2 = ((mean - p[moved]) ** 2).sum(axis=1)
            pos[idx[moved]] = mean
            still.append(idx[moved][shift2 >= eps2])
        active = np.concatenate(still)
    return pos.reshape(h, w, 5)


def _group_modes(modes: np.ndarray) -> np.ndarray:
    h, w, _ = modes.shape
    ids = np.arange(h * w).reshape(h, w)
    rows, cols = [], []
    for a, b, ma, mb in (
        (ids[:, :-1], ids[:, 1:], modes[:, :-1], modes[:, 1:]),
        (ids[:-1, :], ids[1:, :], modes[:-1, :], modes[1:, :]),
    ):
        close = ((ma - mb) ** 2).sum(axis=-1) < 1.0
        rows.append(a[close])
        cols.append(b[close])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    graph = coo_matrix((np.ones(rows.size), (rows, cols)), shape=(h * w, h * w))
    _, comp = connected_components(graph, directed=False)
    return relabel_raster(comp.reshape(h, w))


def _merge_small(labels: np.ndarray, frame: np.ndarray, min_size: int) -> np.ndarray:
    """Fold regions below ``min_size`` into the 4-adjacent region with the closest mean colour.

    The smallest offending region is merged first (lowest id on ties); colour
    ties go to the lower neighbour id.
    """
    n = int(labels.max()) + 1
    flat = labels.ravel()
    size = np.bincount(flat, minlength=n).astype(np.int64)
    if min_size <= 1 or size.min() >= min_size:
        return labels
    color = np.stack(
        [np.bincount(flat, weights=frame[..., c].ravel().astype(np.float64), minlength=n) for c in range(3)],
        axis=1,
    ).tolist()
    size = size.tolist()
    adj = [set() for _ in range(n)]
    for a, b in ((labels[:, :-1], labels[:, 1:]), (labels[:-1, :], labels[1:, :])):
        diff = a != b
        for u, v in zip(a[diff].tolist(), b[diff].tolist()):
            adj[u].add(v)
            adj[v].add(u)

    parent = np.arange(n)
    heap = [(size[r], r) for r in range(n) if size[r] < min_size]
    heapq.heapify(heap)
    while heap:
        sz, r = heapq.heappop(heap)
        if parent[r] != r or sz != size[r] or size[r] >= min_size or not adj[r]:
            continue
        mean_r = [c / size[r] for c in color[r]]

        def gap(q):
            return (sum((c / size[q] - m) ** 2 for c, m in zip(color[q], mean_r)), q)

        best = min(adj[r], key=gap)
        parent[r] = best
        size[best] += size[r]
        color[best] = [a + b for a, b in zip(color[best], color[r])]
        for q in adj[r]:
            adj[q].discard(r)
            if q != best:
                adj[q].add(best)
                adj[best].add(q)
        adj[best].discard(best)
        adj[r] = set()
        if size[best] < min_size:
            heapq.heappush(heap, (size[best], best))

    root = parent.copy()
    while True:
        nxt = root[root]
        if np.array_equal(nxt, root):
            break
        root = nxt
    return relabel_raster(root[labels])


def meanshift_segment(frame, params: MeanShiftParams) -> SegmentationMap:
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[-1] != 3:
        raise ShapeError(f"frame must be H x W x 3, got {frame.shape}")
    modes = _find_modes(frame, params)
    labels = _group_modes(modes)
    labels = _merge_small(labels, frame, params.min_region_size)
    return SegmentationMap(labels)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("COLABEL_THREADS", "1")))
    except ValueError:
        return 1


def assemble_clique_layers(layers) -> CliqueLayerSet:
    """Assign global clique ids to ``layers[m][t]`` SegmentationMaps."""
    layers = tuple(tuple(layer) for layer in layers)
    if not layers or not layers[0]:
        raise ValueError("need at least one layer with at least one frame")
    n_frames = len(layers[0])
    shape = layers[0][0].labels.shape
    ids = np.empty((len(layers), n_frames) + shape, dtype=np.int64)
    offset = 0
    for m, layer in enumerate(layers):
        if len(layer) != n_frames:
            raise ShapeError(f"layer {m} has {len(layer)} frames, expected {n_frames}")
        for t, seg in enumerate(layer):
            if seg.labels.shape != shape:
                raise ShapeError(f"layer {m} frame {t} map is {seg.labels.shape}, expected {shape}")
            ids[m, t] = seg.labels + offset
            offset += seg.n_regions
    ids.setflags(write=False)
    return CliqueLayerSet(maps=layers, ids=ids, n_cliques=offset)


def build_clique_layers(video: VideoVolume, params_list=DEFAULT_MEANSHIFT) -> CliqueLayerSet:
    params_list = list(params_list)
    if not params_list:
        raise ValueError("need at least one mean-shift parameter set")
    jobs = [(p, t) for p in params_list for t in range(video.n_frames)]

    def run(job):
        p, t = job
        return meanshift_segment(video.frames[t], p)

    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            maps = list(pool.map(run, jobs))
    else:
        maps = [run(j) for j in jobs]
    t = video.n_frames
    return assemble_clique_layers([maps[i * t : (i + 1) * t] for i in range(len(params_list))])


def frame_window(cliques: CliqueLayerSet, start: int, stop: int) -> CliqueLayerSet:
    """Restrict a clique layer set to frames [start, stop), renumbering ids."""
    return assemble_clique_layers([layer[start:stop] for layer in cliques.maps])


def load_segmentation_map(path, frame: int = 0, shape=None) -> SegmentationMap:
    """Read one frame of a region-map file, repairing non-contiguous ids."""
    from .formats import read_labelmap

    lm = read_labelmap(path)
    if not 0 <= frame < lm.shape[0]:
        raise ShapeError(f"{path}: frame {frame} requested, file has {lm.shape[0]}")
    labels = lm[frame]
    if shape is not None and labels.shape != tuple(shape):
        raise ShapeError(f"{path}: region map is {labels.shape}, video frames are {tuple(shape)}")
    _, dense = np.unique(labels, return_inverse=True)
    return SegmentationMap(dense.reshape(labels.shape))


def load_region_layer(path, video: VideoVolume) -> list:
    """All frames of a precomputed region-map file, validated against the video."""
    from .formats import read_labelmap

    lm = read_labelmap(path)
    if lm.shape != video.shape:
        raise ShapeError(f"{path}: region maps are {lm.shape}, video is {video.shape}")
    return [load_segmentation_map(path, t, video.shape[1:]) for t in range(lm.shape[0])]
