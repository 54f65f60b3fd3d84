"""Shared domain types: pixel volumes, label sets, unary/marginal fields, run config.

Fields are plain float64 arrays laid out [t][y][x][l]; the helpers here
validate them rather than wrapping them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

SIMPLEX_TOL = 1e-6


class ShapeError(ValueError):
    """Array dimensions disagree with the batch they belong to."""


@dataclass(frozen=True)
class VideoVolume:
    """A batch of RGB frames, shape (T, H, W, 3), uint8."""

    frames: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim == 3 and f.shape[-1] == 3:
            f = f[None]
        if f.ndim != 4 or f.shape[-1] != 3:
            raise ShapeError(f"frames must be T x H x W x 3, got {f.shape}")
        if min(f.shape[:3]) < 1:
            raise ShapeError(f"empty video volume {f.shape}")
        if f.dtype != np.uint8:
            if np.any(f < 0) or np.any(f > 255):
                raise ValueError("RGB intensities must lie in 0..255")
            f = f.astype(np.uint8)
        f = np.ascontiguousarray(f)
        f.setflags(write=False)
        object.__setattr__(self, "frames", f)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.frames.shape[:3]

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_pixels(self) -> int:
        t, h, w = self.shape
        return t * h * w

    def window(self, start: int, stop: int) -> "VideoVolume":
        return VideoVolume(self.frames[start:stop])


@dataclass(frozen=True)
class LabelSet:
    names: tuple
    palette: tuple
    ignore_label: Optional[int] = None

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        palette = tuple(tuple(int(c) for c in rgb) for rgb in self.palette)
        if len(names) < 2:
            raise ValueError("a label set needs at least 2 labels")
        if len(palette) != len(names):
            raise ValueError(f"palette has {len(palette)} entries for {len(names)} labels")
        if any(len(rgb) != 3 or min(rgb) < 0 or max(rgb) > 255 for rgb in palette):
            raise ValueError("palette entries must be RGB triples in 0..255")
        if self.ignore_label is not None and not 0 <= self.ignore_label < len(names):
            raise ValueError(f"ignore_label {self.ignore_label} out of range for {len(names)} labels")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "palette", palette)

    def __len__(self) -> int:
        return len(self.names)

    @classmethod
    def default(cls, n_labels: int) -> "LabelSet":
        rng = np.random.default_rng(n_labels)
        palette = rng.integers(0, 256, size=(n_labels, 3))
        return cls(tuple(f"class{i}" for i in range(n_labels)), tuple(map(tuple, palette)))


@dataclass(frozen=True)
class MeanFieldConfig:
    iterations: int = 5
    batch_size: int = 50
    q_floor: float = 1e-10
    convergence_tol: Optional[float] = None

    def __post_init__(self):
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ValueError(f"iterations must be a positive integer, got {self.iterations}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ValueError(f"batch_size must be a positive integer, got {self.batch_size}")
        if not 0.0 < self.q_floor < 1e-3:
            raise ValueError(f"q_floor must lie in (0, 1e-3), got {self.q_floor}")
        if self.convergence_tol is not None and self.convergence_tol <= 0:
            raise ValueError("convergence_tol must be positive when set")


@dataclass
class SegmentationResult:
    labels: np.ndarray
    final_q: Optional[np.ndarray] = None
    iterations_run: int = 0
    wall_time: float = 0.0
    window_times: list = field(default_factory=list)


def check_unary(costs, video: Optional[VideoVolume] = None, n_labels: Optional[int] = None) -> np.ndarray:
    u = np.asarray(costs, dtype=np.float64)
    if u.ndim != 4:
        raise ShapeError(f"unary field must be T x H x W x L, got {u.shape}")
    if video is not None and u.shape[:3] != video.shape:
        raise ShapeError(f"unary field {u.shape[:3]} does not match video {video.shape}")
    if n_labels is not None and u.shape[3] != n_labels:
        raise ShapeError(f"unary field has {u.shape[3]} labels, expected {n_labels}")
    if not np.all(np.isfinite(u)):
        raise ValueError("unary field contains non-finite costs")
    return u


def check_qfield(q, tol: float = SIMPLEX_TOL) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.ndim < 2:
        raise ShapeError(f"Q field needs a trailing label axis, got {q.shape}")
    if np.any(q < 0) or np.any(q > 1):
        raise ValueError("Q entries must lie in [0, 1]")
    err = np.abs(q.sum(axis=-1) - 1.0).max()
    if err > tol:
        raise ValueError(f"Q rows do not sum to 1 (max deviation {err:.3g})")
    return q


def unary_from_probabilities(probs, floor: float = 1e-10, n_labels: Optional[int] = None) -> np.ndarray:
    """Classifier probabilities to costs: ``-log(max(p, floor))``."""
    p = np.asarray(probs, dtype=np.float64)
    if not 0.0 < floor < 1.0:
        raise ValueError(f"floor must lie in (0, 1), got {floor}")
    if np.any(np.isnan(p)):
        raise ValueError("probabilities contain NaN")
    if n_labels is not None and p.shape[-1] != n_labels:
        raise ShapeError(f"probabilities have {p.shape[-1]} labels, expected {n_labels}")
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    return -np.log(np.maximum(p, floor))


def softmax_neg(costs: np.ndarray) -> np.ndarray:
    """Per-pixel ``exp(-c) / sum exp(-c)`` with a max-shift for stability."""
    z = -np.asarray(costs, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    return z


def argmax_labels(q) -> np.ndarray:
    """MPM decision; ties resolve to the lowest label index."""
    return np.argmax(np.asarray(q), axis=-1).astype(np.int64)
