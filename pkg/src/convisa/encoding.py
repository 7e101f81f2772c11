"""Codebooks, Fisher-vector encoding, normalization and one-vs-all linear SVMs."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionError
from .handcrafted import IdtDescriptor
from .isa import PcaModel, fit_pca


# --- k-means -------------------------------------------------------------

def _sq_dists(X, C):
    d = (X ** 2).sum(1)[:, None] - 2 * X @ C.T + (C ** 2).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeans_pp(X, K, rng):
    n = len(X)
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(X, X[chosen]).ravel()
    for _ in range(1, K):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            rest = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(rest))
        chosen.append(idx)
        d2 = np.minimum(d2, _sq_dists(X, X[idx:idx + 1]).ravel())
    return X[chosen].copy()


def fit_kmeans(data, K: int, seed: int = 0, max_iter: int = 100, return_history: bool = False):
    """Lloyd iterations from a seeded k-means++ start.

    Empty clusters are re-seeded at the point farthest from its centroid.
    With ``return_history`` the within-cluster sum of squares after every
    iteration is returned as well.
    """
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2 or len(X) < K or K < 1:
        raise DimensionError(f"k-means needs at least K={K} rows, got {len(X)}")
    rng = np.random.default_rng(seed)
    C = _kmeans_pp(X, K, rng)
    history = []
    assign = None
    for _ in range(max_iter):
        d2 = _sq_dists(X, C)
        new_assign = d2.argmin(axis=1)
        history.append(float(d2[np.arange(len(X)), new_assign].sum()))
        if assign is not None and np.array_equal(assign, new_assign):
            break
        assign = new_assign
        for k in range(K):
            members = assign == k
            if members.any():
                C[k] = X[members].mean(axis=0)
        for k in range(K):
            if not np.any(assign == k):
                resid = _sq_dists(X, C)[np.arange(len(X)), assign]
                far = int(resid.argmax())
                C[k] = X[far]
                assign[far] = k
    return (C, history) if return_history else C


# --- GMM -----------------------------------------------------------------

@dataclass
class GmmModel:
    weights: np.ndarray     # (K,)
    means: np.ndarray       # (K, D)
    variances: np.ndarray   # (K, D)
    log_likelihood: list = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        if abs(self.weights.sum() - 1) > 1e-8:
            raise ValueError("mixture weights must sum to 1")
        if np.any(self.variances <= 0):
            raise ValueError("variances must be positive")

    @property
    def K(self) -> int:
        return len(self.weights)

    def log_joint(self, X) -> np.ndarray:
        """``log w_k + log N(x | mu_k, diag var_k)`` for every row and component."""
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != self.means.shape[1]:
            raise DimensionError(
                f"GMM expects {self.means.shape[1]}-d descriptors, got {X.shape[1]}")
        prec = 1.0 / self.variances
        quad = (X ** 2) @ prec.T - 2 * X @ (self.means * prec).T + (self.means ** 2 * prec).sum(1)
        logdet = np.log(self.variances).sum(1)
        D = X.shape[1]
        return np.log(self.weights) - 0.5 * (quad + logdet + D * np.log(2 * np.pi))

    def posteriors(self, X):
        lj = self.log_joint(X)
        ll = logsumexp(lj, axis=1)
        return np.exp(lj - ll[:, None]), ll

    def sample(self, n: int, rng) -> np.ndarray:
        comp = rng.choice(self.K, size=n, p=self.weights)
        return self.means[comp] + np.sqrt(self.variances[comp]) * rng.standard_normal(
            (n, self.means.shape[1]))


def fit_gmm(data, K: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-6,
            var_floor_rel: float = 1e-4) -> GmmModel:
    """Diagonal-covariance EM started from k-means; variances are floored."""
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2 or len(X) < K:
        raise DimensionError(f"GMM needs at least K={K} rows, got {len(X)}")
    floor = np.maximum(var_floor_rel * X.var(axis=0), 1e-12)
    C = fit_kmeans(X, K, seed)
    assign = _sq_dists(X, C).argmin(1)
    R = np.zeros((len(X), K))
    R[np.arange(len(X)), assign] = 1.0
    gmm = None
    prev = -np.inf
    history = []
    for _ in range(max_iter + 1):
        Nk = R.sum(0) + 1e-12
        w = Nk / Nk.sum()
        mu = (R.T @ X) / Nk[:, None]
        var = (R.T @ X ** 2) / Nk[:, None] - mu ** 2
        var = np.maximum(var, floor)
        gmm = GmmModel(w / w.sum(), mu, var)
        R, ll = gmm.posteriors(X)
        total = float(ll.sum())
        history.append(total)
        if np.isfinite(prev) and total - prev <= tol * abs(prev):
            break
        prev = total
    gmm.log_likelihood = history
    return gmm


# --- Fisher vectors ------------------------------------------------------

def fisher_vector(descriptors, gmm: GmmModel, include_weights: bool = False) -> np.ndarray:
    """Averaged, normalized GMM gradients w.r.t. means then variances.

    Length ``2 K D`` (``K`` more with ``include_weights``).
    """
    X = np.atleast_2d(np.asarray(descriptors, dtype=np.float64))
    if len(X) < 1:
        raise ValueError("need at least one descriptor")
    N = len(X)
    g, _ = gmm.posteriors(X)
    sk = g.sum(0)                             # (K,)
    s1 = g.T @ X                              # (K, D)
    s2 = g.T @ X ** 2
    mu, sigma, w = gmm.means, np.sqrt(gmm.variances), gmm.weights
    g_mu = (s1 - sk[:, None] * mu) / sigma / (N * np.sqrt(w)[:, None])
    g_var = ((s2 - 2 * mu * s1 + sk[:, None] * mu ** 2) / gmm.variances - sk[:, None]) \
        / (N * np.sqrt(2 * w)[:, None])
    parts = [g_mu.ravel(), g_var.ravel()]
    if include_weights:
        parts.insert(0, (sk - N * w) / (N * np.sqrt(w)))
    return np.concatenate(parts)


# --- descriptor preprocessing --------------------------------------------

def augment_location(desc) -> np.ndarray:
    """Append the normalized ``(x, y, t)`` location to a descriptor."""
    if isinstance(desc, IdtDescriptor):
        return np.concatenate([desc.values.astype(np.float64), np.asarray(desc.location, float)])
    raise TypeError("augment_location takes an IdtDescriptor; use augment_locations for matrices")


def augment_locations(values, locations) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    locations = np.asarray(locations, dtype=np.float64).reshape(len(values), 3)
    return np.hstack([values, locations])


def fit_pca_half(descriptors) -> PcaModel:
    X = np.asarray(descriptors, dtype=np.float64)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return fit_pca(X, max(1, X.shape[1] // 2), whiten=False)


def reduce_pca_half(descriptors, pca: PcaModel) -> np.ndarray:
    X = np.asarray(descriptors, dtype=np.float64)
    if X.shape[-1] != pca.mean.shape[0]:
        raise DimensionError(
            f"PCA was fit on {pca.mean.shape[0]}-d descriptors, got {X.shape[-1]}")
    return pca.transform(X)


def power_normalize(v, alpha: float = 0.5) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.abs(v) ** alpha


def l2_normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.where(norm > 0, v / np.where(norm > 0, norm, 1.0), v)


@dataclass
class EncodedVideo:
    vector: np.ndarray
    provenance: tuple


def encode_video(blocks: dict, alpha: float = 0.5) -> EncodedVideo:
    """Power + l2 normalize each descriptor kind's encoding, concatenate, renormalize."""
    kinds = tuple(blocks)
    parts = [l2_normalize(power_normalize(blocks[k], alpha)) for k in kinds]
    return EncodedVideo(l2_normalize(np.concatenate(parts)), kinds)


# --- linear SVM ----------------------------------------------------------

@dataclass
class SvmModel:
    classes: np.ndarray
    weights: np.ndarray      # (n_classes, D)
    biases: np.ndarray       # (n_classes,)
    C: float = 100.0
    bias_scale: float = 1.0
    dual_history: dict = field(default_factory=dict, repr=False)
    primal_history: dict = field(default_factory=dict, repr=False)

    def decision_function(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.weights.shape[1]:
            raise DimensionError(f"SVM expects {self.weights.shape[1]}-d inputs, got {X.shape[1]}")
        return X @ self.weights.T + self.biases


def _dcd_binary(Xa, y, C, rng, max_epochs, tol):
    """Dual coordinate descent for the l1-loss (hinge) SVM, bias folded into ``Xa``."""
    n = len(Xa)
    Q = (Xa ** 2).sum(1)
    alpha = np.zeros(n)
    w = np.zeros(Xa.shape[1])
    dual, primal = [], []
    for _ in range(max_epochs):
        pg_max, pg_min = -np.inf, np.inf
        for i in rng.permutation(n):
            G = y[i] * (w @ Xa[i]) - 1.0
            if alpha[i] == 0:
                pg = min(G, 0.0)
            elif alpha[i] == C:
                pg = max(G, 0.0)
            else:
                pg = G
            pg_max, pg_min = max(pg_max, pg), min(pg_min, pg)
            if pg != 0 and Q[i] > 0:
                old = alpha[i]
                alpha[i] = min(max(old - G / Q[i], 0.0), C)
                w += (alpha[i] - old) * y[i] * Xa[i]
        dual.append(0.5 * w @ w - alpha.sum())
        primal.append(0.5 * w @ w + C * np.maximum(0, 1 - y * (Xa @ w)).sum())
        if pg_max - pg_min < tol:
            break
    return w, dual, primal


def train_svm(X, y, C: float = 100.0, seed: int = 0, max_epochs: int = 1000,
              tol: float = 1e-3) -> SvmModel:
    """One-vs-all linear SVMs with a regularized bias.

    The bias feature equals the mean row norm of ``X``, so rescaling ``X`` by
    ``c`` together with ``C / c**2`` leaves every decision value unchanged.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError("SVM training needs at least 2 classes")
    bias_scale = float(np.linalg.norm(X, axis=1).mean()) or 1.0
    Xa = np.hstack([X, np.full((len(X), 1), bias_scale)])
    W = np.zeros((len(classes), X.shape[1]))
    b = np.zeros(len(classes))
    dual_hist, primal_hist = {}, {}
    for k, cls in enumerate(classes):
        rng = np.random.default_rng([seed, k])
        yk = np.where(y == cls, 1.0, -1.0)
        w, dual, primal = _dcd_binary(Xa, yk, C, rng, max_epochs, tol)
        W[k], b[k] = w[:-1], w[-1] * bias_scale
        dual_hist[int(cls)], primal_hist[int(cls)] = dual, primal
    return SvmModel(classes, W, b, C, bias_scale, dual_hist, primal_hist)


def predict(model: SvmModel, X) -> np.ndarray:
    """Arg-max decision value; ties go to the lowest class id."""
    scores = model.decision_function(X)
    return model.classes[scores.argmax(axis=1)]


def mean_accuracy(pred, truth, classes=None) -> float:
    """Mean over classes of per-class recall."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction/truth length mismatch: {pred.shape} vs {truth.shape}")
    classes = np.unique(truth) if classes is None else np.asarray(classes)
    recalls = []
    for c in classes:
        members = truth == c
        if not members.any():
            raise ValueError(f"class {c} has no ground-truth samples")
        recalls.append(np.mean(pred[members] == c))
    return float(np.mean(recalls))


def per_class_recall(pred, truth) -> dict:
    pred, truth = np.asarray(pred), np.asarray(truth)
    return {int(c): float(np.mean(pred[truth == c] == c)) for c in np.unique(truth)}


def confusion_matrix(pred, truth, classes=None) -> np.ndarray:
    pred, truth = np.asarray(pred), np.asarray(truth)
    classes = np.unique(np.concatenate([truth, pred])) if classes is None else np.asarray(classes)
    index = {int(c): i for i, c in enumerate(classes)}
    M = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(truth, pred):
        M[index[int(t)], index[int(p)]] += 1
    return M
