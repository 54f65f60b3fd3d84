"""Parallel mean-field inference over co-labeled frame windows."""

from __future__ import annotations

import logging
import time
from typing import Optional, Sequence

import numpy as np

from .core import (
    MeanFieldConfig,
    SegmentationResult,
    ShapeError,
    VideoVolume,
    argmax_labels,
    check_unary,
    softmax_neg,
)
from .lattice import EXACT_CAP, LatticeError, build_lattice
from .potentials import (
    CooccurrenceModel,
    KernelSpec,
    PnPottsParams,
    build_feature_points,
    cooccurrence_expectation,
    pairwise_message,
    pn_potts_expectation,
    potts_transform,
)
from .superpixels import CliqueLayerSet, frame_window

log = logging.getLogger(__name__)


def init_q(unary) -> np.ndarray:
    """Q proportional to exp(-unary), normalised per pixel."""
    return softmax_neg(unary)


def max_q_delta(q, q_new) -> float:
    q = np.asarray(q)
    q_new = np.asarray(q_new)
    if q.shape != q_new.shape:
        raise ShapeError(f"Q fields differ in shape: {q.shape} vs {q_new.shape}")
    return float(np.abs(q_new - q).max())


def _check_batch(q, unary, cliques, pn):
    if q.shape != unary.shape:
        raise ShapeError(f"Q field {q.shape} does not match unary field {unary.shape}")
    if (cliques is None) != (pn is None):
        raise ValueError("clique layers and P^n-Potts parameters must be given together")
    if cliques is not None and cliques.ids.shape[1:] != q.shape[:-1]:
        raise ShapeError(f"clique layers cover {cliques.ids.shape[1:]}, batch is {q.shape[:-1]}")


def mean_field_step(
    q,
    unary,
    lattices: Sequence,
    specs: Sequence[KernelSpec],
    cliques: Optional[CliqueLayerSet] = None,
    pn: Optional[PnPottsParams] = None,
    cooc: Optional[CooccurrenceModel] = None,
    config: MeanFieldConfig = MeanFieldConfig(),
) -> np.ndarray:
    """One Jacobi update; every expectation term reads the input Q only."""
    q = np.asarray(q, dtype=np.float64)
    unary = np.asarray(unary, dtype=np.float64)
    _check_batch(q, unary, cliques, pn)
    energy = unary + potts_transform(pairwise_message(q, lattices, specs))
    if cliques is not None:
        energy += pn_potts_expectation(q, cliques, pn, config.q_floor)
    if cooc is not None:
        energy += cooccurrence_expectation(q, cooc, config.q_floor)
    return softmax_neg(energy)


def _leave_one_out_products(x: np.ndarray) -> np.ndarray:
    """prod_{j != i} x_j along axis 0, via prefix and suffix products (no division)."""
    ones = np.ones((1,) + x.shape[1:])
    prefix = np.cumprod(np.concatenate([ones, x[:-1]]), axis=0)
    suffix = np.cumprod(np.concatenate([ones, x[::-1][:-1]]), axis=0)[::-1]
    return prefix * suffix


def mean_field_step_exact(
    q,
    unary,
    video: VideoVolume,
    specs: Sequence[KernelSpec],
    cliques: Optional[CliqueLayerSet] = None,
    pn: Optional[PnPottsParams] = None,
    cooc: Optional[CooccurrenceModel] = None,
    config: MeanFieldConfig = MeanFieldConfig(),
    cap: int = EXACT_CAP,
) -> np.ndarray:
    """Brute-force counterpart of ``mean_field_step`` for small batches.

    Gaussian sums are evaluated pairwise and every leave-one-out product is
    formed directly, without the log-space shortcut.
    """
    q = np.asarray(q, dtype=np.float64)
    unary = np.asarray(unary, dtype=np.float64)
    _check_batch(q, unary, cliques, pn)
    n_labels = q.shape[-1]
    flat = q.reshape(-1, n_labels)
    if flat.shape[0] > cap:
        raise LatticeError(f"exact step limited to {cap} pixels, got {flat.shape[0]}")
    if video.shape != q.shape[:-1]:
        raise ShapeError(f"video {video.shape} does not match Q field {q.shape[:-1]}")

    features = [build_feature_points(video, s) for s in specs]
    energy = unary.reshape(-1, n_labels) + potts_transform(
        pairwise_message(flat, features, specs)
    )

    if cliques is not None:
        for m, gmax in enumerate(pn.gamma_max):
            ids = cliques.ids[m].ravel()
            order = np.argsort(ids, kind="stable")
            bounds = np.flatnonzero(np.diff(ids[order])) + 1
            for members in np.split(order, bounds):
                pure = _leave_one_out_products(flat[members])
                energy[members] += pn.gamma_low * pure + gmax * (1.0 - pure)

    if cooc is not None and cooc.weight > 0:
        present = 1.0 - _leave_one_out_products(1.0 - flat)
        for l in range(n_labels):
            others = [k for k in range(n_labels) if k != l]
            energy[:, l] += cooc.weight * (present[:, others] * cooc.matrix[l, others]).sum(axis=1)

    return softmax_neg(energy).reshape(q.shape)


def build_window_lattices(video: VideoVolume, specs: Sequence[KernelSpec]) -> list:
    """One lattice per kernel; zero-weight kernels get ``None`` and are skipped."""
    out = []
    for spec in specs:
        if spec.weight == 0:
            out.append(None)
        else:
            out.append(build_lattice(build_feature_points(video, spec)))
    return out


def run_window(
    video: VideoVolume,
    unary,
    specs: Sequence[KernelSpec],
    cliques=None,
    pn=None,
    cooc=None,
    config: MeanFieldConfig = MeanFieldConfig(),
):
    """Mean-field inference on one co-labeled batch; returns (Q, iterations run)."""
    active = [s for s in specs if s.weight > 0]
    lattices = build_window_lattices(video, active)
    q = init_q(unary)
    steps = 0
    for _ in range(config.iterations):
        q_new = mean_field_step(q, unary, lattices, active, cliques, pn, cooc, config)
        steps += 1
        delta = max_q_delta(q, q_new)
        q = q_new
        if config.convergence_tol is not None and delta < config.convergence_tol:
            break
    return q, steps


def run_inference(
    video: VideoVolume,
    unary,
    cliques: Optional[CliqueLayerSet] = None,
    config: MeanFieldConfig = MeanFieldConfig(),
    specs: Sequence[KernelSpec] = (),
    cooc: Optional[CooccurrenceModel] = None,
    pn: Optional[PnPottsParams] = None,
    keep_q: bool = True,
) -> SegmentationResult:
    """Segment a video in consecutive windows of ``config.batch_size`` frames.

    Windows share no state.  Each builds its kernel lattices once and reuses
    them for every iteration and label.
    """
    unary = check_unary(unary, video)
    if (cliques is None) != (pn is None):
        raise ValueError("clique layers and P^n-Potts parameters must be given together")
    if cliques is not None and cliques.ids.shape[1:] != video.shape:
        raise ShapeError(f"clique layers cover {cliques.ids.shape[1:]}, video is {video.shape}")

    t_total = video.n_frames
    labels = np.empty(video.shape, dtype=np.int64)
    final_q = np.empty(unary.shape) if keep_q else None
    times = []
    max_steps = 0
    start_all = time.perf_counter()
    for start in range(0, t_total, config.batch_size):
        stop = min(start + config.batch_size, t_total)
        t0 = time.perf_counter()
        win_cliques = frame_window(cliques, start, stop) if cliques is not None else None
        q, steps = run_window(
            video.window(start, stop), unary[start:stop], specs, win_cliques, pn, cooc, config
        )
        labels[start:stop] = argmax_labels(q)
        if keep_q:
            final_q[start:stop] = q
        times.append(time.perf_counter() - t0)
        max_steps = max(max_steps, steps)
        log.debug("window %d-%d: %d steps, %.3fs", start, stop, steps, times[-1])
    return SegmentationResult(
        labels=labels,
        final_q=final_q,
        iterations_run=max_steps,
        wall_time=time.perf_counter() - start_all,
        window_times=times,
    )
