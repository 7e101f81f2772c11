"""Video clips, optical flow, dense trajectory tracking and patch sampling.

Frames are stored as ``(W, H, T, 1)`` volumes, so the first image axis is x.
Flow stacks are ``(W, H, T - 1, 2)`` volumes holding per-pair ``(u, v)``
displacements along x and y.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import formats
from .errors import DimensionError, FormatError


@dataclass
class VideoClip:
    frames: np.ndarray
    fps: float = 25.0
    label: int | None = None
    # per-sprite ground-truth velocities (n_sprites, T - 1, 2); synthetic clips only
    velocities: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float32)
        if f.ndim == 3:
            f = f[..., None]
        if f.ndim != 4 or f.shape[3] != 1 or f.shape[2] < 1:
            raise DimensionError(f"clip frames must be (W, H, T, 1) with T >= 1, got {f.shape}")
        if f.size and (f.min() < 0 or f.max() > 1):
            raise ValueError("clip intensities must lie in [0, 1]")
        self.frames = f

    @property
    def shape(self):
        return self.frames.shape[:3]


def save_video(clip: VideoClip, path):
    formats.write_video(path, clip.frames, clip.fps, clip.label)


def load_video(path) -> VideoClip:
    frames, fps, label = formats.read_video(path)
    try:
        return VideoClip(frames, fps, label)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


# --- optical flow --------------------------------------------------------

@dataclass
class FlowConfig:
    alpha: float = 0.3          # smoothness weight (intensity units)
    iterations: int = 40        # per pyramid level
    levels: int = 3
    presmooth: float = 1.0      # gaussian sigma applied to both frames


_AVG = np.array([[1, 2, 1], [2, 0, 2], [1, 2, 1]], dtype=np.float64) / 12.0


def _avg(f: np.ndarray) -> np.ndarray:
    # 2-D neighbour average on the last two axes of a stack
    return ndimage.correlate(f, _AVG[None], mode="nearest")


def _warp(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    b, w, h = img.shape
    bi, xi, yi = np.meshgrid(np.arange(b), np.arange(w), np.arange(h), indexing="ij")
    coords = np.stack([bi, xi + u, yi + v]).astype(np.float64)
    return ndimage.map_coordinates(img, coords, order=1, mode="nearest")


def _horn_schunck(A: np.ndarray, B: np.ndarray, cfg: FlowConfig):
    """Coarse-to-fine Horn-Schunck on stacks ``(batch, W, H)``."""
    a2 = cfg.alpha ** 2
    pyr_a, pyr_b = [A], [B]
    for _ in range(cfg.levels - 1):
        if min(pyr_a[-1].shape[1:]) < 16:
            break
        pyr_a.append(ndimage.zoom(ndimage.gaussian_filter(pyr_a[-1], (0, 1, 1)), (1, .5, .5), order=1))
        pyr_b.append(ndimage.zoom(ndimage.gaussian_filter(pyr_b[-1], (0, 1, 1)), (1, .5, .5), order=1))
    u = np.zeros_like(pyr_a[-1])
    v = np.zeros_like(pyr_a[-1])
    for a, b in zip(reversed(pyr_a), reversed(pyr_b)):
        if u.shape != a.shape:
            zoom = (1, a.shape[1] / u.shape[1], a.shape[2] / u.shape[2])
            u = ndimage.zoom(u, zoom, order=1) * zoom[1]
            v = ndimage.zoom(v, zoom, order=1) * zoom[2]
        bw = _warp(b, u, v)
        m = 0.5 * (a + bw)
        Ix = np.gradient(m, axis=1)
        Iy = np.gradient(m, axis=2)
        It = bw - a
        denom = a2 + Ix ** 2 + Iy ** 2
        du = np.zeros_like(u)
        dv = np.zeros_like(v)
        for _ in range(cfg.iterations):
            # smoothness acts on the full flow, data term on the increment
            ua, va = _avg(u + du) - u, _avg(v + dv) - v
            t = (Ix * ua + Iy * va + It) / denom
            du, dv = ua - Ix * t, va - Iy * t
        u, v = u + du, v + dv
    return u, v


def estimate_flow(a, b, cfg: FlowConfig | None = None) -> np.ndarray:
    """Flow from frame ``a`` to frame ``b`` as a ``(W, H, 1, 2)`` volume."""
    cfg = cfg or FlowConfig()
    a = np.asarray(a, dtype=np.float64).reshape(np.shape(a)[:2])
    b = np.asarray(b, dtype=np.float64).reshape(np.shape(b)[:2])
    if a.shape != b.shape:
        raise DimensionError(f"frame shapes differ: {a.shape} vs {b.shape}")
    flows = _flow_stack(a[None], b[None], cfg)
    return flows[:, :, :1, :]


def _flow_stack(A, B, cfg):
    if cfg.presmooth > 0:
        A = ndimage.gaussian_filter(A, (0, cfg.presmooth, cfg.presmooth))
        B = ndimage.gaussian_filter(B, (0, cfg.presmooth, cfg.presmooth))
    u, v = _horn_schunck(A, B, cfg)
    out = np.stack([u, v], axis=-1).transpose(1, 2, 0, 3)
    return np.nan_to_num(out).astype(np.float32)


def estimate_clip_flows(clip: VideoClip, cfg: FlowConfig | None = None) -> np.ndarray:
    """Flow for every consecutive frame pair, ``(W, H, T - 1, 2)``."""
    cfg = cfg or FlowConfig()
    f = clip.frames[..., 0].astype(np.float64).transpose(2, 0, 1)
    if len(f) < 2:
        raise DimensionError("need at least 2 frames to estimate flow")
    return _flow_stack(f[:-1], f[1:], cfg)


def load_flow_middlebury(path):
    """Return ``(flow, unknown_mask)`` with flow as a ``(W, H, 1, 2)`` volume."""
    return formats.read_flo(path)


def save_flow_middlebury(flow, path):
    formats.write_flo(path, flow)


# --- trajectories --------------------------------------------------------

@dataclass
class Trajectory:
    points: np.ndarray      # (L, 2) of (x, y)
    start_frame: int

    @property
    def length(self) -> int:
        return len(self.points)

    def path_length(self) -> float:
        d = np.diff(self.points, axis=0)
        return float(np.hypot(d[:, 0], d[:, 1]).sum())


@dataclass
class TrackConfig:
    length: int = 15
    stride: int = 5
    min_displacement: float = 1.0
    median_size: int = 3


def _bilinear(field2: np.ndarray, pts: np.ndarray) -> np.ndarray:
    coords = np.stack([pts[:, 0], pts[:, 1]])
    return np.stack([ndimage.map_coordinates(field2[..., c], coords, order=1, mode="nearest")
                     for c in range(field2.shape[-1])], axis=1)


def track_trajectories(clip_shape, flows, cfg: TrackConfig | None = None) -> list[Trajectory]:
    """Dense tracking through median-filtered flow.

    Grid points are seeded every frame wherever no live track sits within
    ``stride`` pixels. Tracks that leave the frame are dropped; tracks that
    reach ``cfg.length`` points are kept when their path length reaches
    ``min_displacement``. Only tracks whose every point has a flow field
    are started, so flow patches along them are complete.
    """
    cfg = cfg or TrackConfig()
    W, H = clip_shape[:2]
    flows = np.asarray(flows, dtype=np.float64)
    n_flows = flows.shape[2]
    if cfg.median_size > 1:
        flows = ndimage.median_filter(flows, size=(cfg.median_size, cfg.median_size, 1, 1),
                                      mode="nearest")
    gx, gy = np.meshgrid(np.arange(0, W, cfg.stride), np.arange(0, H, cfg.stride), indexing="ij")
    grid = np.stack([gx.ravel(), gy.ravel()], axis=1).astype(np.float64)
    live: list[tuple[int, list]] = []
    done: list[Trajectory] = []
    for t in range(n_flows + 1):
        if t + cfg.length <= n_flows:
            if live:
                heads = np.array([pts[-1] for _, pts in live])
                dist2 = ((grid[:, None, :] - heads[None]) ** 2).sum(-1).min(axis=1)
                free = grid[dist2 >= cfg.stride ** 2]
            else:
                free = grid
            live.extend((t, [p.copy()]) for p in free)
        still = []
        for start, pts in live:
            if len(pts) == cfg.length:
                traj = Trajectory(np.array(pts), start)
                if traj.path_length() >= cfg.min_displacement:
                    done.append(traj)
            else:
                still.append((start, pts))
        live = still
        if t == n_flows or not live:
            continue
        heads = np.array([pts[-1] for _, pts in live])
        nxt = heads + _bilinear(flows[:, :, t, :], heads)
        keep = (nxt[:, 0] >= 0) & (nxt[:, 0] <= W - 1) & (nxt[:, 1] >= 0) & (nxt[:, 1] <= H - 1)
        live = [(s, pts + [p]) for (s, pts), p, k in zip(live, nxt, keep) if k]
    done.sort(key=lambda tr: (tr.start_frame, tr.points[0, 1], tr.points[0, 0]))
    return done


@dataclass
class TrajectoryPatch:
    volume: np.ndarray       # (P, P, L, C)
    location: tuple
    padded: bool = False


def sample_patch(stack, traj: Trajectory, size: int = 32, n_frames: int | None = None) -> TrajectoryPatch:
    """Bilinearly resample a ``size x size`` window around each trajectory point.

    ``stack`` is a ``(W, H, T, C)`` volume of pixels or flow; frame ``i`` of
    the patch is read at time ``traj.start_frame + i``. The location is the
    mean point normalized by ``(W - 1, H - 1, n_frames - 1)``.
    """
    vol = np.asarray(stack, dtype=np.float64)
    if vol.ndim == 3:
        vol = vol[..., None]
    W, H, T, C = vol.shape
    L = traj.length
    if traj.start_frame < 0 or traj.start_frame + L > T:
        raise DimensionError(
            f"trajectory frames [{traj.start_frame}, {traj.start_frame + L}) exceed stack length {T}")
    off = np.arange(size) - (size - 1) / 2.0
    px = traj.points[:, 0][None, None, :] + off[:, None, None]
    py = traj.points[:, 1][None, None, :] + off[None, :, None]
    px, py = np.broadcast_arrays(px, py)
    pt = np.broadcast_to(traj.start_frame + np.arange(L)[None, None, :], px.shape)
    coords = np.stack([px, py, pt]).astype(np.float64)
    out = np.stack([ndimage.map_coordinates(vol[..., c], coords, order=1, mode="constant", cval=0.0)
                    for c in range(C)], axis=-1)
    padded = bool((px < 0).any() or (px > W - 1).any() or (py < 0).any() or (py > H - 1).any())
    n_frames = n_frames or T
    mean = traj.points.mean(axis=0)
    loc = (float(np.clip(mean[0] / max(W - 1, 1), 0, 1)),
           float(np.clip(mean[1] / max(H - 1, 1), 0, 1)),
           float(np.clip((traj.start_frame + (L - 1) / 2) / max(n_frames - 1, 1), 0, 1)))
    return TrajectoryPatch(out.astype(np.float32), loc, padded)


# --- synthetic benchmark -------------------------------------------------

@dataclass
class MotionPattern:
    direction: float            # drift angle, radians
    speed: float                # drift, px / frame
    osc_angle: float = 0.0      # oscillation axis relative to the drift, radians
    osc_amplitude: float = 0.0  # peak oscillation velocity, px / frame
    osc_periods: tuple = (8.0, 8.0)  # period drawn uniformly per sprite, frames


@dataclass
class SynthConfig:
    classes: int = 4
    clips_per_class: int = 40
    test_fraction: float = 0.5
    width: int = 64
    height: int = 64
    frames: int = 30
    sprites: int = 2
    sprite_radius: float = 11.0
    sprite_contrast: float = 0.35
    background_contrast: float = 0.15
    texture_sigma: float = 1.5
    speed: float = 0.5
    osc_amplitude: float = 1.0
    osc_periods: tuple = (2.5, 12.0)
    jitter: float = 0.0       # i.i.d. per-frame velocity noise, px / frame
    noise: float = 0.045      # per-frame sensor noise std
    seed: int = 0

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("synthetic benchmark needs at least 2 classes")
        if self.clips_per_class < 2:
            raise ValueError("need at least 2 clips per class for a train/test split")
        self.osc_periods = tuple(float(p) for p in self.osc_periods)

    def patterns(self) -> list[MotionPattern]:
        """Class ``k`` drifts right (even ``k``) or left (odd ``k``).

        ``k // 2`` picks the oscillation axis (parallel or perpendicular to
        the drift); ``k // 4`` scales the oscillation amplitude.
        """
        out = []
        for k in range(self.classes):
            axis = 0.0 if (k // 2) % 2 == 0 else np.pi / 2
            amp = self.osc_amplitude * (1 + 0.5 * (k // 4))
            out.append(MotionPattern(np.pi * (k % 2), self.speed, axis, amp, self.osc_periods))
        return out


def _texture(rng, shape, sigma, contrast):
    t = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return contrast * t / (t.std() + 1e-12)


def _render_clip(cfg: SynthConfig, pattern: MotionPattern, rng) -> tuple[np.ndarray, np.ndarray]:
    W, H, T = cfg.width, cfg.height, cfg.frames
    frame0 = 0.5 + _texture(rng, (W, H), cfg.texture_sigma, cfg.background_contrast)
    R = cfg.sprite_radius
    tex_size = int(2 * R + 6)
    frames = np.repeat(frame0[:, :, None], T, axis=2)
    xs, ys = np.meshgrid(np.arange(W), np.arange(H), indexing="ij")
    along = np.array([np.cos(pattern.direction), np.sin(pattern.direction)])
    osc_dir = np.array([np.cos(pattern.direction + pattern.osc_angle),
                        np.sin(pattern.direction + pattern.osc_angle)])
    velocities = np.zeros((cfg.sprites, T - 1, 2))
    for s in range(cfg.sprites):
        tex = 0.5 + _texture(rng, (tex_size, tex_size), cfg.texture_sigma, cfg.sprite_contrast)
        phase = rng.uniform(0, 2 * np.pi)
        period = rng.uniform(*pattern.osc_periods)
        tt = np.arange(T - 1)
        vel = (pattern.speed * along[None, :]
               + pattern.osc_amplitude * np.sin(2 * np.pi * tt / period + phase)[:, None]
               * osc_dir[None, :]
               + cfg.jitter * rng.standard_normal((T - 1, 2)))
        path = np.vstack([np.zeros(2), np.cumsum(vel, axis=0)])
        centre = np.array([W / 2, H / 2]) - path.mean(axis=0) + rng.uniform(-8, 8, size=2)
        pos = centre[None, :] + path
        velocities[s] = vel
        for t in range(T):
            dx, dy = xs - pos[t, 0], ys - pos[t, 1]
            r = np.hypot(dx, dy)
            mask = np.clip(R + 0.5 - r, 0, 1)
            if not mask.any():
                continue
            sample = ndimage.map_coordinates(tex, [dx + tex_size / 2, dy + tex_size / 2],
                                             order=1, mode="wrap")
            frames[:, :, t] = mask * sample + (1 - mask) * frames[:, :, t]
    frames += cfg.noise * rng.standard_normal(frames.shape)
    return np.clip(frames, 0, 1)[..., None].astype(np.float32), velocities


def generate_synth_dataset(cfg: SynthConfig) -> tuple[list[VideoClip], list[VideoClip]]:
    """Seeded train/test clips; classes are balanced in both splits."""
    rng = np.random.default_rng(cfg.seed)
    n_test = max(1, int(round(cfg.clips_per_class * cfg.test_fraction)))
    if n_test >= cfg.clips_per_class:
        raise ValueError("test_fraction leaves no training clips")
    train, test = [], []
    for label, pattern in enumerate(cfg.patterns()):
        for i in range(cfg.clips_per_class):
            frames, vel = _render_clip(cfg, pattern, rng)
            clip = VideoClip(frames, 25.0, label, vel)
            (test if i < n_test else train).append(clip)
    return train, test
