"""Learned trajectory descriptors for the appearance (LOP) and motion (LOF) streams.

Both streams split a trajectory patch into a grid of cells and run one ISA+
model on every cell. They differ in how time is handled inside a cell:

* temporal projection: the model sees the whole ``space x stack_len`` block,
  so its filters span time;
* temporal pooling: the model sees single frames and the per-frame outputs
  are averaged (or maxed) over the cell's frames afterwards.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .handcrafted import IdtDescriptor
from .isa import IsaModel, isa_plus_extract
from .video import TrajectoryPatch


@dataclass
class StreamConfig:
    stream: str = "appearance"
    cell_grid: tuple = (2, 2, 3)
    stack_len: int = 5
    temporal_pool: str = "none"
    method: str = "isa+"

    def __post_init__(self):
        self.cell_grid = tuple(int(g) for g in self.cell_grid)
        if self.stream not in ("appearance", "motion"):
            raise ValueError(f"unknown stream {self.stream!r}")
        if self.temporal_pool not in ("none", "mean", "max"):
            raise ValueError(f"unknown temporal pooling {self.temporal_pool!r}")
        if self.method not in ("pca", "isa", "isa+"):
            raise ValueError(f"unknown feature method {self.method!r}")
        if self.stack_len < 1 or min(self.cell_grid) < 1:
            raise ValueError("stack_len and cell grid must be positive")

    @classmethod
    def projection(cls, stream: str, cell_frames: int = 5, **kw):
        return cls(stream=stream, stack_len=cell_frames, temporal_pool="none", **kw)

    @classmethod
    def pooling(cls, stream: str, how: str = "mean", **kw):
        return cls(stream=stream, stack_len=1, temporal_pool=how, **kw)

    @property
    def kind(self) -> str:
        return "LOP" if self.stream == "appearance" else "LOF"

    @property
    def structure(self) -> str:
        return "projection" if self.temporal_pool == "none" else "pooling"


def build_cell_grid(patch: TrajectoryPatch | np.ndarray, grid) -> list[np.ndarray]:
    """Split a patch into ``gx * gy * gt`` cells, x fastest, then y, then t."""
    vol = patch.volume if isinstance(patch, TrajectoryPatch) else np.asarray(patch)
    gx, gy, gt = grid
    N, M, T = vol.shape[:3]
    if gx > N or gy > M or gt > T:
        raise DimensionError(f"cell grid {tuple(grid)} exceeds patch dims {(N, M, T)}")
    cw, ch, ct = N // gx, M // gy, T // gt
    return [vol[i * cw:(i + 1) * cw, j * ch:(j + 1) * ch, k * ct:(k + 1) * ct]
            for k in range(gt) for j in range(gy) for i in range(gx)]


def _stack(patches) -> np.ndarray:
    vols = [p.volume if isinstance(p, TrajectoryPatch) else np.asarray(p) for p in patches]
    if not vols:
        raise ValueError("no patches given")
    shapes = {v.shape for v in vols}
    if len(shapes) != 1:
        raise DimensionError(f"patches differ in shape: {sorted(shapes)}")
    return np.stack(vols).astype(np.float64)


def _chunks(V: np.ndarray, cfg: StreamConfig) -> tuple[np.ndarray, int]:
    """Rows of model inputs, ordered (patch, cell t, cell y, cell x, chunk)."""
    Np, N, M, T, C = V.shape
    gx, gy, gt = cfg.cell_grid
    if gx > N or gy > M or gt > T:
        raise DimensionError(f"cell grid {cfg.cell_grid} exceeds patch dims {(N, M, T)}")
    cw, ch, ct = N // gx, M // gy, T // gt
    s = cfg.stack_len
    if ct % s:
        raise DimensionError(f"stack_len {s} does not divide the cell temporal extent {ct}")
    n_chunks = ct // s
    V = V[:, :gx * cw, :gy * ch, :gt * ct]
    V = V.reshape(Np, gx, cw, gy, ch, gt, n_chunks, s, C)
    # inputs are flattened x-fastest, i.e. C-order over (c, t, y, x)
    V = V.transpose(0, 5, 3, 1, 6, 8, 7, 4, 2)
    return V.reshape(Np * gt * gy * gx * n_chunks, C * s * ch * cw), n_chunks


def input_dim(patch_shape, cfg: StreamConfig) -> int:
    N, M, T, C = patch_shape
    gx, gy, _ = cfg.cell_grid
    return (N // gx) * (M // gy) * cfg.stack_len * C


def training_rows(patches, cfg: StreamConfig) -> np.ndarray:
    """Model training inputs drawn from every cell (and chunk) of the patches."""
    X, _ = _chunks(_stack(patches), cfg)
    return X


def extract_learned(patches, model: IsaModel, cfg: StreamConfig) -> np.ndarray:
    """Descriptor matrix ``(n_patches, cells * feature_dim)``."""
    V = _stack(patches)
    expected = input_dim(V.shape[1:], cfg)
    if model.input_dim != expected:
        raise DimensionError(
            f"{cfg.kind} {cfg.structure} cells have {expected} inputs but the model "
            f"expects {model.input_dim}")
    X, n_chunks = _chunks(V, cfg)
    F = isa_plus_extract(X, model, cfg.method)
    D = F.shape[1]
    n_cells = int(np.prod(cfg.cell_grid))
    F = F.reshape(len(V), n_cells, n_chunks, D)
    if cfg.temporal_pool == "mean":
        F = F.mean(axis=2)
    elif cfg.temporal_pool == "max":
        F = F.max(axis=2)
    elif n_chunks != 1:
        raise DimensionError("temporal_pool 'none' needs stack_len equal to the cell's frame count")
    else:
        F = F[:, :, 0]
    return F.reshape(len(V), n_cells * D)


def extract_lop(patch: TrajectoryPatch, model: IsaModel, cfg: StreamConfig) -> IdtDescriptor:
    if patch.volume.shape[3] != 1:
        raise DimensionError(f"LOP expects 1-channel pixel patches, got {patch.volume.shape[3]}")
    return IdtDescriptor(extract_learned([patch], model, cfg)[0], "LOP", patch.location)


def extract_lof(patch: TrajectoryPatch, model: IsaModel, cfg: StreamConfig) -> IdtDescriptor:
    if patch.volume.shape[3] != 2:
        raise DimensionError(f"LOF expects 2-channel flow patches, got {patch.volume.shape[3]}")
    return IdtDescriptor(extract_learned([patch], model, cfg)[0], "LOF", patch.location)


def temporal_correlation(patches) -> float:
    """Pooled correlation between consecutive frames of every patch.

    Each frame is centred on its own mean; pairs containing a zero-variance
    frame are skipped.
    """
    sxy = sxx = syy = 0.0
    used = 0
    for p in patches:
        vol = p.volume if isinstance(p, TrajectoryPatch) else np.asarray(p)
        if vol.shape[2] < 2:
            raise DimensionError("temporal correlation needs patches with at least 2 frames")
        frames = vol.astype(np.float64).transpose(2, 0, 1, 3).reshape(vol.shape[2], -1)
        frames = frames - frames.mean(axis=1, keepdims=True)
        energy = (frames ** 2).sum(axis=1)
        a, b = frames[:-1], frames[1:]
        ok = (energy[:-1] > 1e-20) & (energy[1:] > 1e-20)
        if not ok.any():
            continue
        sxy += float((a[ok] * b[ok]).sum())
        sxx += float(energy[:-1][ok].sum())
        syy += float(energy[1:][ok].sum())
        used += int(ok.sum())
    if used == 0:
        raise ValueError("every frame pair had zero variance")
    return float(np.clip(sxy / np.sqrt(sxx * syy), -1.0, 1.0))
