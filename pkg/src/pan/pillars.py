"""Sparse pillarization of radar point clouds.

Converts a multi-sweep cloud into a sparse BEV pseudo-image: points fall
into vertical pillars over a 2-D grid, each pillar's points are encoded by
a small per-point net and max-aggregated, and the result is a dense
H x W x C buffer plus the boolean mask of non-empty pillars. ``gather`` /
``scatter`` move between that grid and the packed token view that the
attention stages operate on.

Elevation is deliberately ignored: z is carried on points but never enters
pillar features (automotive radar gives no reliable elevation).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import BatchNormStats, LinearParams, batch_norm2d, init_linear, linear, relu
from .tensor import DTYPE, Rng


@dataclass
class RadarPoint:
    """One radar return in the ego frame; velocity is ego-motion compensated."""

    x: float
    y: float
    z: float
    vx: float
    vy: float
    rcs: float
    sweep_offset: float = 0.0  # seconds before the current sweep; 0 = current
    sweep_index: int = 0


@dataclass
class PointCloud:
    frame_id: str
    points: list[RadarPoint] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class PillarConfig:
    """BEV grid geometry and pillar encoder dims.

    Defaults: a 128 x 128 grid covering +-50 m (pillar_size 0.78125 m).
    """

    x_min: float = -50.0
    x_max: float = 50.0
    y_min: float = -50.0
    y_max: float = 50.0
    pillar_size: float = 0.78125
    max_points_per_pillar: int = 20
    raw_channels: int = 10
    out_channels: int = 32

    def __post_init__(self):
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise ValueError("empty BEV range")
        for span, name in ((self.x_max - self.x_min, "x"), (self.y_max - self.y_min, "y")):
            cells = span / self.pillar_size
            if abs(cells - round(cells)) > 1e-9:
                raise ValueError(f"{name} range is not an integer number of pillars")
        if self.max_points_per_pillar < 1:
            raise ValueError("max_points_per_pillar must be >= 1")

    @property
    def width(self) -> int:
        return round((self.x_max - self.x_min) / self.pillar_size)

    @property
    def height(self) -> int:
        return round((self.y_max - self.y_min) / self.pillar_size)


@dataclass
class PillarGrid:
    """Dense H x W x C pseudo-image plus the non-empty-pillar mask."""

    data: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=DTYPE)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.data.ndim != 3 or self.mask.shape != self.data.shape[:2]:
            raise ValueError("data must be [H, W, C] with mask [H, W]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def pillar_count(self) -> int:
        return int(self.mask.sum())

    def validate(self) -> None:
        """Check the sparsity invariant: unmasked cells hold exact zeros."""
        if np.any(self.data[~self.mask] != 0.0):
            raise ValueError("unmasked cells must be exactly zero")


@dataclass
class TokenBatch:
    """Packed non-empty pillars: tokens [P, C] with their (i, j) grid coords."""

    tokens: np.ndarray
    coords: np.ndarray  # [P, 2] int, row-major (i, j) order

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=DTYPE)
        self.coords = np.asarray(self.coords, dtype=np.int64).reshape(-1, 2)
        if self.tokens.shape[0] != self.coords.shape[0]:
            raise ValueError("tokens and coords disagree on pillar count")

    def __len__(self) -> int:
        return self.tokens.shape[0]


@dataclass
class PfnParams:
    """Per-point encoder: linear -> batch norm -> relu into C channels."""

    lin: LinearParams
    bn_gamma: np.ndarray
    bn_beta: np.ndarray
    bn_stats: BatchNormStats


def init_pfn(cfg: PillarConfig, rng: Rng) -> PfnParams:
    c = cfg.out_channels
    return PfnParams(
        lin=init_linear(cfg.raw_channels, c, rng),
        bn_gamma=np.ones(c),
        bn_beta=np.zeros(c),
        bn_stats=BatchNormStats.fresh(c),
    )


def _points_array(pc: PointCloud) -> np.ndarray:
    # columns: x, y, vx, vy, rcs, sweep_offset, sweep_index
    if not pc.points:
        return np.zeros((0, 7), dtype=DTYPE)
    return np.array(
        [[p.x, p.y, p.vx, p.vy, p.rcs, p.sweep_offset, p.sweep_index] for p in pc.points],
        dtype=DTYPE,
    )


def pillarize(pc: PointCloud, cfg: PillarConfig, pfn: PfnParams,
              training: bool = False) -> PillarGrid:
    """Encode a point cloud into the sparse pseudo-image.

    Out-of-range points are dropped. Each kept point is augmented with its
    offsets to the mean of its pillar's kept points (x_c, y_c) and to the
    pillar center (x_p, y_p), giving the 10-channel raw feature
    (x, y, vx, vy, rcs, sweep_offset, x_c, y_c, x_p, y_p). Points run
    through linear -> batch norm -> relu, then each pillar takes the
    elementwise max over its points. Pillars holding more than
    ``max_points_per_pillar`` points keep the ones closest to the pillar
    center (ties by (x, y, sweep_index)), which makes the result a pure
    function of the point set regardless of input order.
    """
    h, w, c = cfg.height, cfg.width, cfg.out_channels
    grid = PillarGrid(data=np.zeros((h, w, c)), mask=np.zeros((h, w), dtype=bool))
    pts = _points_array(pc)
    if pts.shape[0] == 0:
        return grid
    if not np.all(np.isfinite(pts)):
        raise FloatingPointError("non-finite radar point fields")

    xs, ys = pts[:, 0], pts[:, 1]
    j = np.floor((xs - cfg.x_min) / cfg.pillar_size).astype(np.int64)
    i = np.floor((ys - cfg.y_min) / cfg.pillar_size).astype(np.int64)
    in_range = (i >= 0) & (i < h) & (j >= 0) & (j < w)
    if not in_range.any():
        return grid
    pts, i, j = pts[in_range], i[in_range], j[in_range]

    flat = i * w + j
    center_x = cfg.x_min + (j + 0.5) * cfg.pillar_size
    center_y = cfg.y_min + (i + 0.5) * cfg.pillar_size
    dist2 = (pts[:, 0] - center_x) ** 2 + (pts[:, 1] - center_y) ** 2
    # row-major pillar order, then the deterministic truncation order
    order = np.lexsort((pts[:, 6], pts[:, 1], pts[:, 0], dist2, flat))
    pts, flat = pts[order], flat[order]
    center_x, center_y = center_x[order], center_y[order]

    uniq, starts, counts = np.unique(flat, return_index=True, return_counts=True)
    pos_in_pillar = np.arange(flat.size) - np.repeat(starts, counts)
    keep = pos_in_pillar < cfg.max_points_per_pillar
    pts, flat = pts[keep], flat[keep]
    center_x, center_y = center_x[keep], center_y[keep]
    kept_counts = np.minimum(counts, cfg.max_points_per_pillar)
    kept_starts = np.concatenate(([0], np.cumsum(kept_counts)[:-1]))

    mean_x = np.add.reduceat(pts[:, 0], kept_starts) / kept_counts
    mean_y = np.add.reduceat(pts[:, 1], kept_starts) / kept_counts
    mean_x = np.repeat(mean_x, kept_counts)
    mean_y = np.repeat(mean_y, kept_counts)

    feats = np.column_stack([
        pts[:, 0], pts[:, 1],            # x, y
        pts[:, 2], pts[:, 3],            # vx, vy
        pts[:, 4], pts[:, 5],            # rcs, sweep_offset
        pts[:, 0] - mean_x, pts[:, 1] - mean_y,
        pts[:, 0] - center_x, pts[:, 1] - center_y,
    ])
    enc = linear(feats, pfn.lin)
    enc = batch_norm2d(enc, pfn.bn_stats, pfn.bn_gamma, pfn.bn_beta, training=training)
    enc = relu(enc)
    pillar_feats = np.maximum.reduceat(enc, kept_starts, axis=0)

    ii, jj = uniq // w, uniq % w
    grid.data[ii, jj] = pillar_feats
    grid.mask[ii, jj] = True
    return grid


def gather(grid: PillarGrid) -> TokenBatch:
    """Pack the non-empty pillars into [P, C] tokens, row-major by (i, j)."""
    ii, jj = np.nonzero(grid.mask)  # np.nonzero scans row-major already
    return TokenBatch(tokens=grid.data[ii, jj].copy(),
                      coords=np.column_stack([ii, jj]))


def scatter(tb: TokenBatch, height: int, width: int) -> PillarGrid:
    """Inverse of ``gather``: place tokens back on an otherwise-zero grid."""
    coords = tb.coords
    if coords.shape[0]:
        ii, jj = coords[:, 0], coords[:, 1]
        if ii.min() < 0 or jj.min() < 0 or ii.max() >= height or jj.max() >= width:
            raise IndexError("scatter: coordinate outside the grid")
        flat = ii * width + jj
        if np.unique(flat).size != flat.size:
            raise IndexError("scatter: duplicate coordinates")
    c = tb.tokens.shape[1]
    grid = PillarGrid(data=np.zeros((height, width, c)),
                      mask=np.zeros((height, width), dtype=bool))
    if coords.shape[0]:
        grid.data[coords[:, 0], coords[:, 1]] = tb.tokens
        grid.mask[coords[:, 0], coords[:, 1]] = True
    return grid
