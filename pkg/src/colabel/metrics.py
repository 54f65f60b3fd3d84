"""Segmentation metrics and a seeded synthetic video/unary generator."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .core import ShapeError, VideoVolume, unary_from_probabilities

PIXEL_NOISE_SIGMA = 8.0


def _pair(pred, gt):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    return pred.ravel().astype(np.int64), gt.ravel().astype(np.int64)


def _valid(gt: np.ndarray, ignore_label: Optional[int]) -> np.ndarray:
    mask = np.ones(gt.shape, dtype=bool) if ignore_label is None else gt != ignore_label
    if not mask.any():
        raise ValueError("empty evaluation set")
    return mask


def confusion_matrix(pred, gt, n_labels: int, ignore_label: Optional[int] = None) -> np.ndarray:
    """Rows are ground-truth classes, columns predictions."""
    p, g = _pair(pred, gt)
    mask = _valid(g, ignore_label)
    p, g = p[mask], g[mask]
    if p.size and (min(p.min(), g.min()) < 0 or max(p.max(), g.max()) >= n_labels):
        raise ValueError(f"label index out of range for {n_labels} labels")
    return np.bincount(n_labels * g + p, minlength=n_labels**2).reshape(n_labels, n_labels)


def global_accuracy(pred, gt, ignore_label: Optional[int] = None) -> float:
    p, g = _pair(pred, gt)
    mask = _valid(g, ignore_label)
    return float((p[mask] == g[mask]).mean())


def class_average_accuracy(pred, gt, n_labels: int, ignore_label: Optional[int] = None) -> float:
    """Mean per-class recall over the classes present in the ground truth."""
    cm = confusion_matrix(pred, gt, n_labels, ignore_label)
    support = cm.sum(axis=1)
    present = support > 0
    return float((np.diag(cm)[present] / support[present]).mean())


def mean_iou(pred, gt, n_labels: int, ignore_label: Optional[int] = None) -> float:
    cm = confusion_matrix(pred, gt, n_labels, ignore_label)
    inter = np.diag(cm)
    union = cm.sum(axis=0) + cm.sum(axis=1) - inter
    seen = union > 0
    return float((inter[seen] / union[seen]).mean())


def temporal_stability(pred, video, color_eps: float = 10.0) -> float:
    """Share of colour-static pixels whose label survives to the next frame.

    A pixel pair (t, t + 1) qualifies when no RGB channel changes by more
    than ``color_eps``.
    """
    frames = video.frames if isinstance(video, VideoVolume) else np.asarray(video)
    pred = np.asarray(pred)
    if pred.shape != frames.shape[:3]:
        raise ShapeError(f"prediction {pred.shape} does not match video {frames.shape[:3]}")
    if pred.shape[0] < 2:
        raise ValueError("temporal stability needs at least 2 frames")
    rgb = frames.astype(np.int16)
    static = np.abs(rgb[1:] - rgb[:-1]).max(axis=-1) <= color_eps
    if not static.any():
        raise ValueError("no colour-static pixels to evaluate")
    same = pred[1:] == pred[:-1]
    return float(same[static].mean())


def evaluate(pred, gt, n_labels: int, ignore_label=None, video=None, color_eps: float = 10.0) -> dict:
    report = {
        "global_accuracy": global_accuracy(pred, gt, ignore_label),
        "class_average_accuracy": class_average_accuracy(pred, gt, n_labels, ignore_label),
        "mean_iou": mean_iou(pred, gt, n_labels, ignore_label),
    }
    if video is not None:
        report["temporal_stability"] = temporal_stability(pred, video, color_eps)
    return report


def scene_palette(rng: np.random.Generator, n_labels: int) -> np.ndarray:
    return rng.uniform(30, 225, size=(n_labels, 3))


def synthesize_scene(seed: int, t: int, h: int, w: int, n_labels: int, unary_noise: float):
    """Seeded desk-scale stand-in for a labelled video with classifier unaries.

    Ground truth is a background (label 0) overpainted by ``n_labels``
    axis-aligned rectangles, each translating one pixel per frame along a
    fixed direction.  Frames add Gaussian pixel noise to a per-label colour.
    Unary probabilities mix the one-hot truth with per-pixel exponential
    scores, ``(1 - noise) * onehot + noise * E`` renormalised, so
    ``unary_noise = 0`` reproduces the truth and larger values corrupt more
    pixels.

    Returns (VideoVolume, gt labels T x H x W, unary costs T x H x W x L).
    """
    if n_labels < 2:
        raise ValueError("need at least 2 labels")
    if min(t, h, w) < 1:
        raise ValueError(f"degenerate scene dimensions {(t, h, w)}")
    if not 0.0 <= unary_noise <= 1.0:
        raise ValueError(f"unary_noise must lie in [0, 1], got {unary_noise}")
    rng = np.random.default_rng(seed)
    palette = scene_palette(rng, n_labels)

    rects = []
    for k in range(n_labels):
        rh = int(rng.integers(max(1, h // 6), max(2, h // 2) + 1))
        rw = int(rng.integers(max(1, w // 6), max(2, w // 2) + 1))
        y0 = int(rng.integers(0, max(1, h - rh + 1)))
        x0 = int(rng.integers(0, max(1, w - rw + 1)))
        directions = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]
        dy, dx = directions[int(rng.integers(len(directions)))]
        rects.append((1 + k % (n_labels - 1), y0, x0, rh, rw, dy, dx))

    gt = np.zeros((t, h, w), dtype=np.int64)
    for f in range(t):
        for label, y0, x0, rh, rw, dy, dx in rects:
            ys, xs = y0 + dy * f, x0 + dx * f
            gt[f, max(ys, 0) : max(ys + rh, 0), max(xs, 0) : max(xs + rw, 0)] = label

    pixels = palette[gt] + rng.normal(0.0, PIXEL_NOISE_SIGMA, size=gt.shape + (3,))
    video = VideoVolume(np.clip(np.rint(pixels), 0, 255).astype(np.uint8))

    onehot = np.eye(n_labels)[gt]
    scores = (1.0 - unary_noise) * onehot + unary_noise * rng.exponential(1.0, size=onehot.shape)
    probs = scores / scores.sum(axis=-1, keepdims=True)
    unary = unary_from_probabilities(probs, floor=1e-6)
    return video, gt, unary
