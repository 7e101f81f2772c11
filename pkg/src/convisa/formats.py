"""Little-endian binary containers used for interchange between stages.

Every container opens with a 4-byte ASCII magic. Arrays are stored as
float32; volumes are written x-fastest (Fortran order over ``(x, y, t, c)``),
matrices row-major.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError

FLO_MAGIC = 202021.25
MAX_DIM = 1 << 28
MAX_SAMPLES = 1 << 32


class _Reader:
    def __init__(self, buf: bytes, source: str):
        self.buf = buf
        self.pos = 0
        self.source = source

    def take(self, n: int, what: str) -> bytes:
        end = self.pos + n
        if end > len(self.buf):
            raise FormatError(
                f"{self.source}: truncated while reading {what}: needs bytes "
                f"[{self.pos}, {end}) but file has {len(self.buf)} bytes")
        chunk = self.buf[self.pos:end]
        self.pos = end
        return chunk

    def magic(self, expected: bytes):
        got = self.take(len(expected), "magic")
        if got != expected:
            raise FormatError(f"{self.source}: bad magic {got!r}, expected {expected!r}")

    def unpack(self, fmt: str, what: str):
        fmt = "<" + fmt
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def floats(self, count: int, what: str, dtype="<f4") -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(count * itemsize, what), dtype=dtype).copy()

    def done(self):
        if self.pos != len(self.buf):
            raise FormatError(
                f"{self.source}: {len(self.buf) - self.pos} trailing bytes after payload")


def _read(path) -> _Reader:
    path = Path(path)
    try:
        return _Reader(path.read_bytes(), str(path))
    except FileNotFoundError as exc:
        raise FormatError(f"{path}: no such file") from exc


def _check_dims(dims, source):
    if any(d < 1 for d in dims):
        raise FormatError(f"{source}: dims {tuple(dims)} must all be >= 1")
    if any(d > MAX_DIM for d in dims) or int(np.prod(dims, dtype=object)) > MAX_SAMPLES:
        raise FormatError(f"{source}: dims {tuple(dims)} overflow the size limit")


# --- volumes -------------------------------------------------------------

def volume_to_bytes(vol: np.ndarray) -> bytes:
    vol = np.asarray(vol, dtype="<f4")
    if vol.ndim != 4:
        raise FormatError(f"volume must be 4-D, got shape {vol.shape}")
    return b"CVOL" + struct.pack("<4I", *vol.shape) + vol.ravel(order="F").tobytes()


def _read_volume(r: _Reader) -> np.ndarray:
    r.magic(b"CVOL")
    dims = r.unpack("4I", "volume dims")
    _check_dims(dims, r.source)
    flat = r.floats(int(np.prod(dims)), "volume samples")
    return flat.reshape(dims, order="F").astype(np.float32)


def write_volume(path, vol: np.ndarray):
    Path(path).write_bytes(volume_to_bytes(vol))


def read_volume(path) -> np.ndarray:
    r = _read(path)
    vol = _read_volume(r)
    r.done()
    return vol


# --- descriptors ---------------------------------------------------------

@dataclass
class DescriptorSet:
    kind: str
    values: np.ndarray      # (count, dim)
    locations: np.ndarray   # (count, 3)

    def __len__(self):
        return self.values.shape[0]


def write_descriptors(path, ds: DescriptorSet):
    tag = ds.kind.encode("ascii")
    if len(tag) > 16:
        raise FormatError(f"descriptor kind tag {ds.kind!r} longer than 16 bytes")
    values = np.asarray(ds.values, dtype="<f4").reshape(len(ds.values), -1)
    locs = np.asarray(ds.locations, dtype="<f4").reshape(-1, 3)
    rows = np.hstack([values, locs]) if len(values) else np.zeros((0, values.shape[1] + 3), "<f4")
    header = b"CDSC" + tag.ljust(16, b"\0") + struct.pack("<2I", *values.shape)
    Path(path).write_bytes(header + rows.astype("<f4").tobytes())


def read_descriptors(path) -> DescriptorSet:
    r = _read(path)
    r.magic(b"CDSC")
    kind = r.take(16, "kind tag").rstrip(b"\0").decode("ascii")
    count, dim = r.unpack("2I", "descriptor count/dim")
    if dim < 1 or dim > MAX_DIM:
        raise FormatError(f"{r.source}: descriptor dim {dim} out of range")
    rows = r.floats(count * (dim + 3), "descriptor rows").reshape(count, dim + 3)
    r.done()
    return DescriptorSet(kind, rows[:, :dim].astype(np.float32), rows[:, dim:].astype(np.float32))


# --- video ---------------------------------------------------------------

def write_video(path, frames: np.ndarray, fps: float, label: int | None):
    frames = np.asarray(frames, dtype="<f4")
    header = b"CVID" + struct.pack("<3Ifi", frames.shape[0], frames.shape[1], frames.shape[2],
                                   float(fps), -1 if label is None else int(label))
    Path(path).write_bytes(header + volume_to_bytes(frames))


def read_video(path):
    """Return ``(frames, fps, label)``; ``label`` is ``None`` when stored as -1."""
    r = _read(path)
    r.magic(b"CVID")
    w, h, t, fps, label = r.unpack("3Ifi", "video header")
    if t == 0:
        raise FormatError(f"{r.source}: video has zero frames")
    _check_dims((w, h, t), r.source)
    frames = _read_volume(r)
    r.done()
    if frames.shape[:3] != (w, h, t) or frames.shape[3] != 1:
        raise FormatError(f"{r.source}: frame payload {frames.shape} disagrees with header {(w, h, t)}")
    return frames, float(fps), (None if label < 0 else int(label))


# --- Middlebury .flo -----------------------------------------------------

def write_flo(path, flow: np.ndarray):
    """Write a ``(W, H, 2)`` or ``(W, H, 1, 2)`` field as Middlebury ``.flo``."""
    flow = np.asarray(flow, dtype="<f4")
    if flow.ndim == 4:
        flow = flow[:, :, 0, :]
    w, h = flow.shape[:2]
    # .flo is row-major (height, width, 2)
    payload = np.ascontiguousarray(flow.transpose(1, 0, 2)).tobytes()
    Path(path).write_bytes(struct.pack("<f2i", FLO_MAGIC, w, h) + payload)


def read_flo(path):
    """Return ``(flow, unknown_mask)`` with flow shaped ``(W, H, 1, 2)``."""
    r = _read(path)
    (magic,) = r.unpack("f", "magic")
    if magic != np.float32(FLO_MAGIC):
        raise FormatError(f"{r.source}: bad .flo magic {magic!r}")
    w, h = r.unpack("2i", ".flo dims")
    if w < 1 or h < 1 or w > MAX_DIM or h > MAX_DIM:
        raise FormatError(f"{r.source}: bad .flo dims {(w, h)}")
    data = r.floats(w * h * 2, ".flo payload").reshape(h, w, 2).transpose(1, 0, 2)
    r.done()
    unknown = np.any(np.abs(data) > 1e9, axis=2) | ~np.all(np.isfinite(data), axis=2)
    data = np.where(unknown[..., None], 0.0, data).astype(np.float32)
    return data[:, :, None, :], unknown


# --- matrices with a header ----------------------------------------------

def _write_arrays(path, magic: bytes, ints, arrays, floats64=()):
    parts = [magic, struct.pack(f"<{len(ints)}I", *ints)]
    if floats64:
        parts.append(struct.pack(f"<{len(floats64)}d", *floats64))
    parts += [np.asarray(a, dtype="<f4").tobytes() for a in arrays]
    Path(path).write_bytes(b"".join(parts))


def write_isa_model(path, model):
    pca = model.pca
    d, m = model.V.shape
    n = model.W.shape[1]
    n_raw = pca.mean.shape[0]
    _write_arrays(path, b"CISA", (n_raw, n, m, d, model.group_size),
                  [pca.mean, pca.components, pca.eigenvalues, model.W, model.V],
                  floats64=(model.eps, pca.eps_whiten))


def read_isa_model(path):
    from .isa import IsaModel, PcaModel

    r = _read(path)
    r.magic(b"CISA")
    n_raw, n, m, d, g = r.unpack("5I", "model dims")
    eps, eps_whiten = r.unpack("2d", "smoothing constants")
    if d * g != m or n < 1 or n_raw < 1:
        raise FormatError(f"{r.source}: inconsistent model dims {(n_raw, n, m, d, g)}")
    mean = r.floats(n_raw, "mean").astype(np.float64)
    comps = r.floats(n * n_raw, "components").reshape(n, n_raw).astype(np.float64)
    eig = r.floats(n, "eigenvalues").astype(np.float64)
    W = r.floats(m * n, "W").reshape(m, n).astype(np.float64)
    V = r.floats(d * m, "V").reshape(d, m).astype(np.float64)
    r.done()
    pca = PcaModel(mean, comps, eig, True, eps_whiten)
    return IsaModel(W, V, pca, eps)


def write_gmm(path, gmm):
    K, D = gmm.means.shape
    _write_arrays(path, b"CGMM", (K, D), [gmm.weights, gmm.means, gmm.variances])


def read_gmm(path):
    from .encoding import GmmModel

    r = _read(path)
    r.magic(b"CGMM")
    K, D = r.unpack("2I", "gmm dims")
    w = r.floats(K, "weights").astype(np.float64)
    mu = r.floats(K * D, "means").reshape(K, D).astype(np.float64)
    var = r.floats(K * D, "variances").reshape(K, D).astype(np.float64)
    r.done()
    return GmmModel(w / w.sum(), mu, var)


def write_svm(path, svm):
    n_cls, dim = svm.weights.shape
    _write_arrays(path, b"CSVM", (n_cls, dim), [svm.classes, svm.weights, svm.biases],
                  floats64=(svm.C, svm.bias_scale))


def read_svm(path):
    from .encoding import SvmModel

    r = _read(path)
    r.magic(b"CSVM")
    n_cls, dim = r.unpack("2I", "svm dims")
    C, bias_scale = r.unpack("2d", "svm constants")
    classes = r.floats(n_cls, "classes").astype(np.int64)
    W = r.floats(n_cls * dim, "weights").reshape(n_cls, dim).astype(np.float64)
    b = r.floats(n_cls, "biases").astype(np.float64)
    r.done()
    return SvmModel(classes, W, b, C, bias_scale)


def write_centroids(path, centroids: np.ndarray):
    K, D = centroids.shape
    _write_arrays(path, b"CKMS", (K, D), [centroids])


def read_centroids(path) -> np.ndarray:
    r = _read(path)
    r.magic(b"CKMS")
    K, D = r.unpack("2I", "centroid dims")
    c = r.floats(K * D, "centroids").reshape(K, D).astype(np.float64)
    r.done()
    return c


def write_encoded(path, X: np.ndarray, labels):
    """Encoded-video matrix: ``CENC``, rows, dim, int32 labels, float32 rows."""
    X = np.asarray(X, dtype="<f4")
    labels = np.asarray(labels, dtype="<i4")
    Path(path).write_bytes(b"CENC" + struct.pack("<2I", *X.shape) + labels.tobytes() + X.tobytes())


def read_encoded(path):
    r = _read(path)
    r.magic(b"CENC")
    rows, dim = r.unpack("2I", "encoded dims")
    labels = np.frombuffer(r.take(4 * rows, "labels"), dtype="<i4").astype(np.int64)
    X = r.floats(rows * dim, "encoded rows").reshape(rows, dim)
    r.done()
    return X, labels


# --- trajectories, patch stacks, PCA -------------------------------------

def write_trajectories(path, tracks):
    """``CTRJ``: count, then per track start frame, point count, ``(x, y)`` rows."""
    parts = [b"CTRJ", struct.pack("<I", len(tracks))]
    for tr in tracks:
        pts = np.asarray(tr.points, dtype="<f4")
        parts.append(struct.pack("<2I", int(tr.start_frame), len(pts)))
        parts.append(pts.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_trajectories(path):
    from .video import Trajectory

    r = _read(path)
    r.magic(b"CTRJ")
    (count,) = r.unpack("I", "track count")
    out = []
    for i in range(count):
        start, n = r.unpack("2I", f"track {i} header")
        if n < 2:
            raise FormatError(f"{r.source}: track {i} has {n} points, needs at least 2")
        pts = r.floats(2 * n, f"track {i} points").reshape(n, 2).astype(np.float64)
        out.append(Trajectory(pts, int(start)))
    r.done()
    return out


def write_patches(path, patches: np.ndarray, locations: np.ndarray):
    """``CPAT``: 5 dims ``(n, P, P, L, C)``, row-major samples, then ``n x 3`` locations."""
    patches = np.asarray(patches, dtype="<f4")
    if patches.ndim != 5:
        raise FormatError(f"patch stack must be 5-D, got shape {patches.shape}")
    locations = np.asarray(locations, dtype="<f4").reshape(len(patches), 3)
    _write_arrays(path, b"CPAT", patches.shape, [patches, locations])


def read_patches(path):
    r = _read(path)
    r.magic(b"CPAT")
    dims = r.unpack("5I", "patch dims")
    _check_dims(dims[1:], r.source)
    n = dims[0]
    data = r.floats(int(np.prod(dims)), "patch samples").reshape(dims)
    loc = r.floats(3 * n, "locations").reshape(n, 3).astype(np.float64)
    r.done()
    return data, loc


def write_pca(path, pca):
    m, n_raw = pca.components.shape
    _write_arrays(path, b"CPCA", (n_raw, m, int(pca.whiten)),
                  [pca.mean, pca.components, pca.eigenvalues], floats64=(pca.eps_whiten,))


def read_pca(path):
    from .isa import PcaModel

    r = _read(path)
    r.magic(b"CPCA")
    n_raw, m, whiten = r.unpack("3I", "pca dims")
    (eps_whiten,) = r.unpack("d", "whitening constant")
    if m < 1 or n_raw < 1 or m > n_raw:
        raise FormatError(f"{r.source}: inconsistent pca dims {(n_raw, m)}")
    mean = r.floats(n_raw, "mean").astype(np.float64)
    comps = r.floats(m * n_raw, "components").reshape(m, n_raw).astype(np.float64)
    eig = r.floats(m, "eigenvalues").astype(np.float64)
    r.done()
    return PcaModel(mean, comps, eig, bool(whiten), eps_whiten)
