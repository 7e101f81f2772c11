"""PCA whitening and Independent Subspace Analysis under ``W W^T = I``.

The ISA layer squares the projections ``W x``, sums them within fixed
groups and takes a square root. Training minimizes the summed group norms
over whitened data, i.e. the group l1-norm of the latent codes, by
projected gradient descent onto the orthonormal-row manifold.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DivergenceError, NumericalError

log = logging.getLogger(__name__)


@dataclass
class PcaModel:
    mean: np.ndarray          # (n_raw,)
    components: np.ndarray    # (m, n_raw), rows orthonormal, descending eigenvalue
    eigenvalues: np.ndarray   # (m,)
    whiten: bool = True
    eps_whiten: float = 0.0

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    @property
    def scale(self) -> np.ndarray:
        if not self.whiten:
            return np.ones_like(self.eigenvalues)
        return 1.0 / np.sqrt(self.eigenvalues + self.eps_whiten)

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.mean.shape[0]:
            raise DimensionError(
                f"PCA expects inputs of width {self.mean.shape[0]}, got {X.shape[-1]}")
        return ((X - self.mean) @ self.components.T) * self.scale

    def inverse_transform(self, Y) -> np.ndarray:
        Y = np.asarray(Y, dtype=np.float64) / self.scale
        return Y @ self.components + self.mean


def fit_pca(data, m: int, whiten: bool = True, eps_whiten_rel: float = 1e-5) -> PcaModel:
    """Eigendecomposition of the (1/T) sample covariance.

    ``eps_whiten`` is set to ``eps_whiten_rel`` times the leading eigenvalue
    and regularizes the whitening scale ``1/sqrt(lambda + eps_whiten)``.
    """
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"PCA data must be a T x n matrix, got shape {X.shape}")
    T, n = X.shape
    if m < 1 or m > n:
        raise DimensionError(f"cannot keep {m} components of {n}-dimensional data")
    if T < m:
        raise DimensionError(f"need at least {m} samples for {m} components, got {T}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / T
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:m]
    vals = np.clip(vals[order], 0.0, None)
    comps = vecs[:, order].T
    # deterministic sign: largest-magnitude entry of each component positive
    pivot = np.abs(comps).argmax(axis=1)
    comps *= np.sign(comps[np.arange(m), pivot])[:, None]
    eps_whiten = eps_whiten_rel * float(vals[0]) if vals[0] > 0 else eps_whiten_rel
    if vals[-1] < eps_whiten:
        warnings.warn(
            f"covariance is rank-deficient at {m} components "
            f"(eigenvalue {vals[-1]:.3g} < {eps_whiten:.3g}); whitening is regularized",
            RuntimeWarning, stacklevel=2)
    return PcaModel(mean, comps, vals, whiten, eps_whiten)


def grouping_matrix(d: int, group_size: int) -> np.ndarray:
    """Binary ``d x (d * group_size)`` matrix of contiguous groups."""
    return np.kron(np.eye(d), np.ones((1, group_size)))


def groups_from_matrix(V: np.ndarray) -> list[np.ndarray]:
    return [np.flatnonzero(row) for row in np.asarray(V)]


@dataclass
class IsaModel:
    W: np.ndarray             # (m, n)
    V: np.ndarray             # (d, m)
    pca: PcaModel
    eps: float = 1e-8
    history: list = field(default_factory=list)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.V = np.asarray(self.V, dtype=np.float64)
        m, n = self.W.shape
        d = self.V.shape[0]
        if self.V.shape[1] != m:
            raise DimensionError(f"V has {self.V.shape[1]} columns but W has {m} rows")
        if not np.all(self.V.sum(axis=0) == 1):
            raise ValueError("every latent unit must belong to exactly one group")
        sizes = self.V.sum(axis=1)
        if not np.all(sizes == sizes[0]) or sizes[0] * d != m:
            raise ValueError("groups must all have the same size with d * group_size = m")
        if self.pca is not None and self.pca.n_components != n:
            raise DimensionError(f"W expects {n} inputs but PCA yields {self.pca.n_components}")

    @property
    def d(self) -> int:
        return self.V.shape[0]

    @property
    def group_size(self) -> int:
        return int(self.V[0].sum())

    @property
    def input_dim(self) -> int:
        return self.pca.mean.shape[0]

    def filters(self) -> np.ndarray:
        """Rows of ``W`` pulled back to the raw input space, ``(m, n_raw)``."""
        return (self.W * self.pca.scale) @ self.pca.components


def group_l1_norm(a, groups) -> float:
    a = np.asarray(a, dtype=np.float64)
    groups = [np.asarray(g, dtype=int) for g in groups]
    flat = np.concatenate(groups) if groups else np.array([], dtype=int)
    if len(flat) != len(a) or len(np.unique(flat)) != len(flat) or \
            (len(flat) and (flat.min() < 0 or flat.max() >= len(a))):
        raise ValueError("groups must partition the coordinate indices without overlap")
    return float(sum(np.sqrt(np.sum(a[g] ** 2)) for g in groups))


def isa_activation(x, model: IsaModel, eps: float | None = None) -> np.ndarray:
    """Group energies ``sqrt(V (W x)^2 + eps)`` for one input or a batch of rows."""
    eps = model.eps if eps is None else eps
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.W.shape[1]:
        raise DimensionError(f"ISA expects inputs of width {model.W.shape[1]}, got {x.shape[-1]}")
    a = x @ model.W.T
    return np.sqrt((a * a) @ model.V.T + eps)


def isa_objective(data, model: IsaModel) -> float:
    return float(isa_activation(np.atleast_2d(data), model).sum())


def isa_gradient(data, model: IsaModel) -> np.ndarray:
    """Gradient of the eps-smoothed objective with respect to ``W``."""
    X = np.atleast_2d(np.asarray(data, dtype=np.float64))
    A = X @ model.W.T
    P = np.sqrt((A * A) @ model.V.T + model.eps)
    return (A * ((1.0 / P) @ model.V)).T @ X


def orthonormalize(W) -> np.ndarray:
    """Symmetric orthogonalization ``(W W^T)^{-1/2} W``."""
    W = np.asarray(W, dtype=np.float64)
    U, s, Vt = np.linalg.svd(W, full_matrices=False)
    if s.size == 0 or s[-1] <= 1e-12 * s[0]:
        raise NumericalError(f"cannot orthonormalize a rank-deficient {W.shape} matrix")
    return U @ Vt


@dataclass
class IsaTrainConfig:
    group_size: int = 10
    latent_dim: int = 40
    out_dim: int = 4
    learning_rate: float = 0.5
    epochs: int = 500
    batch_size: int = 0       # 0 means full batch
    eps: float = 1e-8
    seed: int = 0
    min_learning_rate: float = 1e-8

    def __post_init__(self):
        if self.out_dim * self.group_size != self.latent_dim:
            raise ValueError(
                f"latent_dim ({self.latent_dim}) must equal out_dim * group_size "
                f"({self.out_dim} * {self.group_size})")
        for name in ("group_size", "latent_dim", "out_dim", "learning_rate", "eps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0 (0 keeps the PCA stage only)")


def train_isa(data, cfg: IsaTrainConfig, pca: PcaModel | None = None) -> IsaModel:
    """Whiten with PCA, then descend the summed group norms with W kept orthonormal.

    Full-batch runs backtrack (halving the step) until the objective does
    not increase, so ``model.history`` is non-increasing. Mini-batch runs
    take plain projected steps.
    """
    X = np.asarray(data, dtype=np.float64)
    if len(X) < cfg.latent_dim:
        raise DimensionError(f"need at least {cfg.latent_dim} training rows, got {len(X)}")
    if not np.ptp(X, axis=0).any():
        raise NumericalError(f"all {len(X)} training rows are identical; no filters to learn")
    if pca is None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            pca = fit_pca(X, cfg.latent_dim, whiten=True)
    Z = pca.transform(X)
    T, n = Z.shape
    rng = np.random.default_rng(cfg.seed)
    W = orthonormalize(rng.standard_normal((cfg.latent_dim, n)))
    model = IsaModel(W, grouping_matrix(cfg.out_dim, cfg.group_size), pca, cfg.eps)

    def mean_objective(W_):
        model.W = W_
        return isa_objective(Z, model) / T

    f = mean_objective(W)
    initial = f
    model.history = [f * T]
    lr = cfg.learning_rate
    full_batch = cfg.batch_size <= 0 or cfg.batch_size >= T
    for epoch in range(cfg.epochs):
        if full_batch:
            model.W = W
            G = isa_gradient(Z, model) / T
            while True:
                W_new = orthonormalize(W - lr * G)
                f_new = mean_objective(W_new)
                if f_new <= f or lr < cfg.min_learning_rate:
                    break
                lr *= 0.5
            if f_new > f:
                log.debug("ISA: step size underflow at epoch %d", epoch)
                model.W = W
                break
            W, f = W_new, f_new
        else:
            order = rng.permutation(T)
            for start in range(0, T, cfg.batch_size):
                batch = Z[order[start:start + cfg.batch_size]]
                model.W = W
                G = isa_gradient(batch, model) / len(batch)
                W = orthonormalize(W - lr * G)
            f = mean_objective(W)
        model.history.append(f * T)
        if f > 10 * initial:
            raise DivergenceError(
                f"ISA objective rose from {initial * T:.6g} to {f * T:.6g} at epoch {epoch}")
    model.W = W
    return model


def isa_plus_extract(x, model: IsaModel, method: str = "isa+") -> np.ndarray:
    """ISA+ features: top-``d`` whitened PCA coefficients followed by ISA outputs.

    ``method`` selects ``"pca"`` or ``"isa"`` halves alone for ablations.
    Accepts a single raw input or a batch of rows.
    """
    z = model.pca.transform(x)
    d = model.d
    if method == "pca":
        return z[..., :d]
    p = isa_activation(z, model)
    if method == "isa":
        return p
    if method == "isa+":
        return np.concatenate([z[..., :d], p], axis=-1)
    raise ValueError(f"unknown feature method {method!r}")


def reconstruct(alpha, model: IsaModel) -> np.ndarray:
    """Pseudo-inverse reconstruction ``W^T alpha`` in the whitened space."""
    return np.asarray(alpha, dtype=np.float64) @ model.W


# --- visualization -------------------------------------------------------

def filter_tiles(model: IsaModel, shape) -> np.ndarray:
    """Raw-space filters reshaped to ``(tau, n_filters, n, m * c)`` tiles.

    ``shape`` is the receptive field ``(n, m, tau)`` or ``(n, m, tau, c)``;
    channels sit side by side along the tile's second axis.
    """
    shape = tuple(shape) + (1,) * (4 - len(shape))
    F = model.filters()
    if int(np.prod(shape)) != F.shape[1]:
        raise DimensionError(f"filters of length {F.shape[1]} cannot be reshaped to {shape}")
    vols = F.reshape((len(F),) + shape, order="F")        # (K, n, m, tau, c)
    tiles = vols.transpose(3, 0, 1, 4, 2)                  # (tau, K, n, c, m)
    n, m, tau, c = shape
    return tiles.reshape(tau, len(F), n, c * m)


def tile_spectrum(tile: np.ndarray) -> np.ndarray:
    """Log-scaled centered DFT magnitude of one 2-D tile."""
    mag = np.abs(np.fft.fftshift(np.fft.fft2(tile)))
    mag[mag < 1e-9 * max(mag.max(), 1e-300)] = 0.0
    return np.log1p(mag)


def _assemble(tiles: np.ndarray, pad: int = 1) -> np.ndarray:
    rows, cols, h, w = tiles.shape
    img = np.zeros((rows * (h + pad) + pad, cols * (w + pad) + pad))
    for r in range(rows):
        for c in range(cols):
            y, x = pad + r * (h + pad), pad + c * (w + pad)
            img[y:y + h, x:x + w] = tiles[r, c]
    return img


def filter_gallery(model: IsaModel, shape) -> np.ndarray:
    """Image grid: one row per time step, one column per filter.

    Each filter is min-max normalized over all its time steps.
    """
    tiles = filter_tiles(model, shape)
    lo = tiles.min(axis=(0, 2, 3), keepdims=True)
    hi = tiles.max(axis=(0, 2, 3), keepdims=True)
    tiles = (tiles - lo) / np.where(hi > lo, hi - lo, 1.0)
    return _assemble(tiles)


def filter_spectrum(model: IsaModel, shape) -> np.ndarray:
    tiles = filter_tiles(model, shape)
    spec = np.empty_like(tiles)
    for r in range(tiles.shape[0]):
        for c in range(tiles.shape[1]):
            spec[r, c] = tile_spectrum(tiles[r, c])
    hi = spec.max()
    return _assemble(spec / hi if hi > 0 else spec)


def save_image(img: np.ndarray, path):
    from PIL import Image

    arr = np.clip(np.asarray(img, dtype=np.float64), 0, 1)
    Image.fromarray((arr * 255).round().astype(np.uint8), mode="L").save(path)
