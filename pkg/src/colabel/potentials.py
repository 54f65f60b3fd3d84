"""Energy terms and their mean-field expectation contributions.

Every ``*_expectation`` / message function takes a Q field of shape
(T, H, W, L) and returns an array of the same shape holding the expected
cost of assigning label l to pixel i given the current marginals of every
other pixel.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import VideoVolume
from .lattice import PermutohedralLattice, filter as lattice_filter, gaussian_filter_exact

KERNEL_KINDS = ("smoothness", "appearance", "global_appearance")


@dataclass(frozen=True)
class KernelSpec:
    """One Gaussian pairwise kernel.

    ``spatial`` is theta_gamma for smoothness and theta_alpha for appearance;
    ``color`` is theta_beta (appearance) or theta_beta_g (global_appearance);
    ``temporal`` is theta_tau.  Unused bandwidths may be left as None.
    """

    kind: str
    weight: float
    spatial: Optional[float] = None
    color: Optional[float] = None
    temporal: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}; expected one of {KERNEL_KINDS}")
        if not self.weight >= 0:
            raise ValueError(f"kernel weight must be >= 0, got {self.weight}")
        for name in self.bandwidth_names():
            value = getattr(self, name)
            if value is None or not value > 0:
                raise ValueError(f"{self.kind} kernel needs a positive {name} bandwidth, got {value}")

    def bandwidth_names(self) -> tuple:
        return {
            "smoothness": ("spatial", "temporal"),
            "appearance": ("spatial", "temporal", "color"),
            "global_appearance": ("color",),
        }[self.kind]

    @property
    def dim(self) -> int:
        return {"smoothness": 3, "appearance": 6, "global_appearance": 3}[self.kind]


DEFAULT_KERNELS = (
    KernelSpec("smoothness", 3.0, spatial=3.0, temporal=1.0),
    KernelSpec("appearance", 10.0, spatial=60.0, color=20.0, temporal=5.0),
    KernelSpec("global_appearance", 1.0, color=20.0),
)


@dataclass(frozen=True)
class PnPottsParams:
    """Per-layer disagreement cost ``gamma_max`` and the shared pure-clique cost ``gamma_low``."""

    gamma_max: tuple = (0.5, 0.4, 0.3)
    gamma_low: float = 0.0

    def __post_init__(self):
        gm = tuple(float(g) for g in self.gamma_max)
        object.__setattr__(self, "gamma_max", gm)
        if not self.gamma_low >= 0:
            raise ValueError(f"gamma_low must be >= 0, got {self.gamma_low}")
        for m, g in enumerate(gm):
            if not g > self.gamma_low:
                raise ValueError(f"gamma_max[{m}] = {g} must exceed gamma_low = {self.gamma_low}")

    @property
    def n_layers(self) -> int:
        return len(self.gamma_max)


@dataclass(frozen=True)
class CooccurrenceModel:
    matrix: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        c = np.array(self.matrix, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError(f"co-occurrence matrix must be square, got {c.shape}")
        if not np.all(np.isfinite(c)) or np.any(c < 0):
            raise ValueError("co-occurrence costs must be finite and non-negative")
        if not np.allclose(c, c.T, rtol=0, atol=1e-12):
            raise ValueError("co-occurrence matrix must be symmetric")
        if np.any(np.diag(c) != 0):
            raise ValueError("co-occurrence matrix must have a zero diagonal")
        if not self.weight >= 0:
            raise ValueError(f"co-occurrence weight must be >= 0, got {self.weight}")
        c.setflags(write=False)
        object.__setattr__(self, "matrix", c)

    @property
    def n_labels(self) -> int:
        return self.matrix.shape[0]


def build_feature_points(video: VideoVolume, spec: KernelSpec) -> np.ndarray:
    """Bandwidth-scaled N x d features in row-major [t][y][x] pixel order."""
    t, h, w = video.shape
    tt, yy, xx = np.meshgrid(np.arange(t), np.arange(h), np.arange(w), indexing="ij")
    rgb = video.frames.reshape(-1, 3).astype(np.float64)
    if spec.kind == "global_appearance":
        return rgb / spec.color
    cols = [xx.ravel() / spec.spatial, yy.ravel() / spec.spatial, tt.ravel() / spec.temporal]
    pos = np.stack(cols, axis=1).astype(np.float64)
    if spec.kind == "smoothness":
        return pos
    return np.concatenate([pos, rgb / spec.color], axis=1)


def _apply_kernel(op, values: np.ndarray) -> np.ndarray:
    if isinstance(op, PermutohedralLattice):
        return lattice_filter(op, values)
    return gaussian_filter_exact(op, values)


def pairwise_message(q, lattices: Sequence, specs: Sequence[KernelSpec]) -> np.ndarray:
    """Gaussian-weighted label mass of all *other* pixels, summed over kernels.

    ``lattices[k]`` is either a PermutohedralLattice or a raw feature matrix,
    in which case the exact O(N^2) sum is used.
    """
    q = np.asarray(q, dtype=np.float64)
    if len(lattices) != len(specs):
        raise ValueError(f"{len(lattices)} lattices for {len(specs)} kernel specs")
    flat = q.reshape(-1, q.shape[-1])
    out = np.zeros_like(flat)
    for op, spec in zip(lattices, specs):
        if spec.weight == 0:
            continue
        n = op.n_points if isinstance(op, PermutohedralLattice) else np.shape(op)[0]
        if n != flat.shape[0]:
            raise ValueError(f"kernel built over {n} points, Q field has {flat.shape[0]}")
        out += spec.weight * (_apply_kernel(op, flat) - flat)
    return out.reshape(q.shape)


def potts_transform(messages) -> np.ndarray:
    """Apply the Potts compatibility: sum of the messages of every other label."""
    m = np.asarray(messages, dtype=np.float64)
    return m.sum(axis=-1, keepdims=True) - m


def pn_potts_expectation(q, cliques, params: PnPottsParams, q_floor: float = 1e-10) -> np.ndarray:
    """Expected P^n-Potts cost per pixel and label, summed over clique layers.

    For pixel i in clique c, the probability that every other member takes
    label l is the leave-one-out product, formed in log space as
    ``exp(S_c(l) - log Q_i(l))`` with ``S_c(l) = sum_j log max(Q_j(l), eps)``.
    """
    q = np.asarray(q, dtype=np.float64)
    ids = np.asarray(cliques.ids)
    if ids.shape[0] != params.n_layers:
        raise ValueError(f"{ids.shape[0]} clique layers but {params.n_layers} gamma_max values")
    if ids.shape[1:] != q.shape[:-1]:
        raise ValueError(f"clique maps {ids.shape[1:]} do not cover Q field {q.shape[:-1]}")
    if np.any(ids < 0):
        raise ValueError("pixel without a clique in some layer")
    n_labels = q.shape[-1]
    logq = np.log(np.maximum(q.reshape(-1, n_labels), q_floor))
    out = np.zeros_like(logq)
    n_cliques = cliques.n_cliques
    for m, gmax in enumerate(params.gamma_max):
        c = ids[m].ravel()
        sums = np.stack(
            [np.bincount(c, weights=logq[:, l], minlength=n_cliques) for l in range(n_labels)], axis=1
        )
        pure = np.exp(np.minimum(sums[c] - logq, 0.0))
        out += params.gamma_low * pure + gmax * (1.0 - pure)
    return out.reshape(q.shape)


def cooccurrence_expectation(q, model: CooccurrenceModel, q_floor: float = 1e-10) -> np.ndarray:
    """Expected co-occurrence cost with factorised label-presence probabilities.

    Presence of l' among the other pixels of the batch is
    ``1 - prod_{j != i} (1 - Q_j(l'))``, again via a clamped log-space sum.
    """
    q = np.asarray(q, dtype=np.float64)
    n_labels = q.shape[-1]
    if model.n_labels != n_labels:
        raise ValueError(f"co-occurrence model has {model.n_labels} labels, Q field has {n_labels}")
    flat = q.reshape(-1, n_labels)
    if model.weight == 0 or not np.any(model.matrix):
        return np.zeros_like(q)
    log_absent = np.log(np.maximum(1.0 - flat, q_floor))
    total = log_absent.sum(axis=0)
    present = 1.0 - np.exp(np.minimum(total[None, :] - log_absent, 0.0))
    # zero diagonal makes the l' != l restriction implicit
    return (model.weight * present @ model.matrix).reshape(q.shape)


def estimate_cooccurrence(
    gt_maps, n_labels: int, weight: float = 1.0, ignore_label: Optional[int] = None
) -> CooccurrenceModel:
    """Co-occurrence costs from how often label pairs share a ground-truth map.

    ``C(l, l') = max(0, -log((n(l, l') + 1) / (n + 1)))`` rescaled to a
    maximum of 1, where n(l, l') counts maps containing both labels.
    """
    maps = list(gt_maps)
    if not maps:
        raise ValueError("need at least one ground-truth map")
    both = np.zeros((n_labels, n_labels))
    for lm in maps:
        lm = np.asarray(lm)
        present = np.unique(lm)
        if ignore_label is not None:
            present = present[present != ignore_label]
        if present.size and (present.min() < 0 or present.max() >= n_labels):
            raise ValueError(f"label index {present.max()} out of range for {n_labels} labels")
        mask = np.zeros(n_labels, dtype=bool)
        mask[present] = True
        both += np.outer(mask, mask)
    c = np.maximum(0.0, -np.log((both + 1.0) / (len(maps) + 1.0)))
    np.fill_diagonal(c, 0.0)
    top = c.max()
    if top > 0:
        c = c / top
    return CooccurrenceModel(c, weight)


def load_cooccurrence_matrix(path, weight: float = 1.0) -> CooccurrenceModel:
    """Whitespace-separated L x L text matrix."""
    try:
        c = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise ValueError(f"{path}: malformed co-occurrence matrix ({exc})") from None
    return CooccurrenceModel(c, weight)
