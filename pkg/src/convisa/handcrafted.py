"""IDT descriptors (HOG, HOF, MBH, trajectory shape, KMeans BoW) written as
convolution-pooling cascades over :mod:`convisa.tensor_core`."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .tensor_core import CascadeSpec, Conv, Pool, as_volume, cascade_eval

DESCRIPTOR_KINDS = ("HOG", "HOF", "MBHx", "MBHy", "Trajectory", "LOP", "LOF")
DEFAULT_CELL_GRID = (2, 2, 3)
ZERO_BIN_THRESHOLD = 0.4


@dataclass
class BinningBank:
    directions: np.ndarray          # (K, 2)
    includes_zero_bin: bool = False
    zero_threshold: float = ZERO_BIN_THRESHOLD

    @classmethod
    def even(cls, k: int, zero_bin: bool = False, zero_threshold: float = ZERO_BIN_THRESHOLD):
        if k < 2:
            raise ValueError(f"need at least 2 orientation bins, got {k}")
        theta = 2 * np.pi * np.arange(k) / k
        return cls(np.stack([np.cos(theta), np.sin(theta)], axis=1), zero_bin, zero_threshold)

    @property
    def n_channels(self) -> int:
        return len(self.directions) + int(self.includes_zero_bin)


@dataclass
class IdtDescriptor:
    values: np.ndarray
    kind: str
    location: tuple = (0.5, 0.5, 0.5)

    def __post_init__(self):
        if self.kind not in DESCRIPTOR_KINDS:
            raise ValueError(f"unknown descriptor kind {self.kind!r}")
        self.values = np.asarray(self.values, dtype=np.float32)
        loc = np.asarray(self.location, dtype=np.float64)
        if loc.shape != (3,) or np.any(loc < 0) or np.any(loc > 1):
            raise ValueError(f"location {self.location} outside the unit cube")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("descriptor has non-finite values")


def gradient_filters(channel: int = 0, n_channels: int = 1) -> np.ndarray:
    """Centered differences (-1, 0, 1) along x and y as a ``(3, 3, 1, C, 2)`` bank.

    Only input channel ``channel`` is read; this is how the MBH nets select
    the u or v component of a flow volume.
    """
    bank = np.zeros((3, 3, 1, n_channels, 2))
    bank[0, 1, 0, channel, 0], bank[2, 1, 0, channel, 0] = -1.0, 1.0
    bank[1, 0, 0, channel, 1], bank[1, 2, 0, channel, 1] = -1.0, 1.0
    return bank


class Binning:
    """Oriented soft binning: relu of projections on unit directions.

    With a zero bin, sites whose vector magnitude is below the threshold
    answer 1 in the extra channel and 0 in all oriented ones.
    """

    in_channels = 2

    def __init__(self, bank: BinningBank):
        self.bank = bank

    def out_channels(self, c_in: int) -> int:
        return self.bank.n_channels

    def __call__(self, volume):
        return oriented_binning(volume, self.bank)


def oriented_binning(gradients, bank: BinningBank) -> np.ndarray:
    g = as_volume(gradients).astype(np.float64)
    if g.shape[3] != 2:
        raise DimensionError(f"oriented binning needs 2 channels (gx, gy), got {g.shape[3]}")
    out = np.maximum(g @ np.asarray(bank.directions, dtype=np.float64).T, 0.0)
    if bank.includes_zero_bin:
        still = np.hypot(g[..., 0], g[..., 1]) < bank.zero_threshold
        out[still] = 0.0
        out = np.concatenate([out, still[..., None].astype(np.float64)], axis=3)
    return out.astype(np.float32)


def _cell_pool(patch_shape, cell_grid, border: int = 0) -> Pool:
    # valid gradients drop ``border`` samples on each side in x and y
    patch_shape = (patch_shape[0] - 2 * border, patch_shape[1] - 2 * border, patch_shape[2])
    size = tuple(max(1, d // g) for d, g in zip(patch_shape, cell_grid))
    return Pool("local_sum", size)


def hog_net(patch_shape=(32, 32, 15), cell_grid=DEFAULT_CELL_GRID, n_bins: int = 8) -> CascadeSpec:
    return CascadeSpec([
        Conv(gradient_filters(), "identity", "valid"),
        Binning(BinningBank.even(n_bins)),
        _cell_pool(patch_shape, cell_grid, border=1),
    ])


def hof_net(patch_shape=(32, 32, 15), cell_grid=DEFAULT_CELL_GRID, n_bins: int = 8,
            zero_threshold: float = ZERO_BIN_THRESHOLD) -> CascadeSpec:
    return CascadeSpec([
        Binning(BinningBank.even(n_bins, zero_bin=True, zero_threshold=zero_threshold)),
        _cell_pool(patch_shape, cell_grid),
    ])


def mbh_net(channel: int, patch_shape=(32, 32, 15), cell_grid=DEFAULT_CELL_GRID,
            n_bins: int = 8) -> CascadeSpec:
    """MBHx for ``channel=0`` (u component), MBHy for ``channel=1``."""
    return CascadeSpec([
        Conv(gradient_filters(channel, 2), "identity", "valid"),
        Binning(BinningBank.even(n_bins)),
        _cell_pool(patch_shape, cell_grid, border=1),
    ])


def _flatten_cells(pooled: np.ndarray, cell_grid) -> np.ndarray:
    gx, gy, gt = cell_grid
    cells = pooled[:gx, :gy, :gt, :]
    # cell raster order: x fastest, then y, then t; bins contiguous per cell
    return cells.transpose(2, 1, 0, 3).reshape(-1)


def describe_patch(kind: str, volume, cell_grid=DEFAULT_CELL_GRID, location=(0.5, 0.5, 0.5),
                   zero_threshold: float = ZERO_BIN_THRESHOLD) -> IdtDescriptor:
    """Run the handcrafted net for ``kind`` on one trajectory-aligned patch."""
    vol = as_volume(volume)
    shape = vol.shape[:3]
    if kind == "HOG":
        if vol.shape[3] != 1:
            raise DimensionError(f"HOG expects a 1-channel pixel patch, got {vol.shape[3]} channels")
        spec = hog_net(shape, cell_grid)
    elif kind == "HOF":
        spec = hof_net(shape, cell_grid, zero_threshold=zero_threshold)
    elif kind in ("MBHx", "MBHy"):
        spec = mbh_net(0 if kind == "MBHx" else 1, shape, cell_grid)
    else:
        raise ValueError(f"no handcrafted net for kind {kind!r}")
    pooled = cascade_eval(spec, vol)
    return IdtDescriptor(_flatten_cells(pooled, cell_grid), kind, tuple(location))


def trajectory_descriptor(points, location=(0.5, 0.5, 0.5)) -> IdtDescriptor:
    """Frame-to-frame displacements normalized by their summed magnitude."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise ValueError("trajectory needs at least 2 points of (x, y)")
    disp = np.diff(pts, axis=0)
    total = np.hypot(disp[:, 0], disp[:, 1]).sum()
    if total <= 1e-12:
        raise ValueError("static trajectory: zero total displacement")
    return IdtDescriptor((disp / total).reshape(-1), "Trajectory", tuple(location))


def bow_bandwidth(centroids: np.ndarray) -> float:
    """Median pairwise centroid distance (1.0 for a single centroid)."""
    c = np.asarray(centroids, dtype=np.float64)
    if len(c) < 2:
        return 1.0
    d2 = ((c[:, None, :] - c[None, :, :]) ** 2).sum(-1)
    dist = np.sqrt(d2[np.triu_indices(len(c), 1)])
    med = float(np.median(dist))
    return med if med > 0 else 1.0


def kmeans_bow_cascade(centroids: np.ndarray) -> CascadeSpec:
    """Soft BoW as Conv3 (centroid filters + softmax) followed by Pool2.

    The descriptor stream is a ``(N, 1, 1, D)`` volume, one descriptor per
    x site. Scores are ``-||x - c_k||^2 / (2 sigma^2)``; the part depending
    only on ``x`` cancels in the softmax, so the conv carries
    ``c_k / sigma^2`` as weights and a constant bias channel supplies
    ``-||c_k||^2 / (2 sigma^2)``.
    """
    c = np.asarray(centroids, dtype=np.float64)
    if c.ndim != 2 or len(c) < 1:
        raise ValueError("centroids must be a non-empty K x D matrix")
    s2 = bow_bandwidth(c) ** 2
    K, D = c.shape
    bank = np.zeros((1, 1, 1, D + 1, K))
    bank[0, 0, 0, :D, :] = c.T / s2
    bank[0, 0, 0, D, :] = -0.5 * (c ** 2).sum(1) / s2
    return CascadeSpec([Conv(bank, "softmax"), Pool("global_sum")])


def bow_stream(descriptors: np.ndarray) -> np.ndarray:
    """Pack an ``(N, D)`` descriptor matrix into the BoW input volume."""
    X = np.asarray(descriptors, dtype=np.float32)
    ones = np.ones((len(X), 1), dtype=np.float32)
    return np.hstack([X, ones])[:, None, None, :]
