"""Rank-4 volumes and the convolution-pooling primitives.

A volume is a float32 ``ndarray`` indexed ``(x, y, t, c)``. A filter bank is
an ``ndarray`` of shape ``(n, m, tau, c_in, K)``. Convolution follows the
cross-correlation convention (kernels are never flipped) and accumulates in
float64.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .errors import DimensionError

NONLINEARITIES = ("identity", "relu", "softmax", "square", "sqrt")
POOL_KINDS = ("local_sum", "local_max", "global_sum")


def as_volume(data) -> np.ndarray:
    """Coerce ``data`` into a validated float32 volume.

    Arrays with fewer than four axes get trailing singleton axes, so an
    ``(N, M)`` image becomes ``(N, M, 1, 1)``.
    """
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim > 4:
        raise DimensionError(f"volume must have at most 4 axes, got shape {arr.shape}")
    while arr.ndim < 4:
        arr = arr[..., np.newaxis]
    if min(arr.shape) < 1:
        raise DimensionError(f"volume dims must all be >= 1, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DimensionError("volume contains non-finite samples")
    return arr


def as_filter_bank(filters) -> np.ndarray:
    """Coerce a bank to shape ``(n, m, tau, c_in, K)``.

    Accepts either a 5-D array or a sequence of equally shaped 4-D kernels.
    """
    if isinstance(filters, np.ndarray) and filters.ndim == 5:
        bank = filters.astype(np.float64)
    else:
        kernels = [np.asarray(k, dtype=np.float64) for k in filters]
        if not kernels:
            raise DimensionError("filter bank is empty")
        shapes = {k.shape for k in kernels}
        if len(shapes) != 1:
            raise DimensionError(f"kernels do not share one shape: {sorted(shapes)}")
        kernels = [as_volume(k).astype(np.float64) for k in kernels]
        bank = np.stack(kernels, axis=-1)
    if bank.ndim != 5 or min(bank.shape) < 1:
        raise DimensionError(f"filter bank must be 5-D with positive dims, got {bank.shape}")
    if not np.all(np.isfinite(bank)):
        raise DimensionError("filter bank contains non-finite values")
    return bank


def _same_pad(k: int) -> tuple[int, int]:
    # even kernels put the extra sample on the lower side
    return k // 2, (k - 1) // 2


def conv3d(volume, bank, padding: str = "valid") -> np.ndarray:
    """3-D cross-correlation of ``volume`` with every kernel in ``bank``."""
    x = as_volume(volume).astype(np.float64)
    w = as_filter_bank(bank)
    n, m, tau, c_in, n_out = w.shape
    if c_in != x.shape[3]:
        raise DimensionError(
            f"channel mismatch: bank expects {c_in} input channels, volume has {x.shape[3]}")
    if padding == "same":
        x = np.pad(x, [_same_pad(n), _same_pad(m), _same_pad(tau), (0, 0)])
    elif padding != "valid":
        raise ValueError(f"unknown padding {padding!r}")
    N, M, T = x.shape[:3]
    if n > N or m > M or tau > T:
        raise DimensionError(
            f"kernel {(n, m, tau)} larger than input {(N, M, T)} under valid padding")
    on, om, ot = N - n + 1, M - m + 1, T - tau + 1
    out = np.zeros((on, om, ot, n_out), dtype=np.float64)
    for i in range(n):
        for j in range(m):
            for k in range(tau):
                window = x[i:i + on, j:j + om, k:k + ot, :]
                out += window @ w[i, j, k]
    return out.astype(np.float32)


def apply_nonlinearity(volume, kind: str) -> np.ndarray:
    x = as_volume(volume)
    if kind == "identity":
        return x
    if kind == "relu":
        return np.maximum(x, 0).astype(np.float32)
    if kind == "square":
        return np.square(x.astype(np.float64)).astype(np.float32)
    if kind == "sqrt":
        if np.any(x < 0):
            raise ValueError("sqrt nonlinearity applied to a negative sample")
        return np.sqrt(x.astype(np.float64)).astype(np.float32)
    if kind == "softmax":
        z = x.astype(np.float64)
        z = z - z.max(axis=3, keepdims=True)
        e = np.exp(z)
        return (e / e.sum(axis=3, keepdims=True)).astype(np.float32)
    raise ValueError(f"unknown nonlinearity {kind!r}; expected one of {NONLINEARITIES}")


def local_pool(volume, kind: str, size: Sequence[int]) -> np.ndarray:
    """Non-overlapping pooling with stride equal to the window size.

    Trailing partial windows are pooled as they are.
    """
    x = as_volume(volume).astype(np.float64)
    size = tuple(int(s) for s in size)
    if len(size) != 3 or min(size) < 1:
        raise ValueError(f"pool size must be three integers >= 1, got {size}")
    if kind not in ("local_sum", "local_max"):
        raise ValueError(f"unknown local pool kind {kind!r}")
    N, M, T, C = x.shape
    out_dims = [-(-d // s) for d, s in zip((N, M, T), size)]
    pad = [(0, o * s - d) for o, s, d in zip(out_dims, size, (N, M, T))] + [(0, 0)]
    fill = 0.0 if kind == "local_sum" else -np.inf
    xp = np.pad(x, pad, constant_values=fill)
    blocks = xp.reshape(out_dims[0], size[0], out_dims[1], size[1], out_dims[2], size[2], C)
    if kind == "local_sum":
        out = blocks.sum(axis=(1, 3, 5))
    else:
        out = blocks.max(axis=(1, 3, 5))
    return out.astype(np.float32)


def global_sum_pool(volume) -> np.ndarray:
    x = as_volume(volume).astype(np.float64)
    return x.sum(axis=(0, 1, 2))


@dataclass
class Conv:
    bank: np.ndarray
    nonlinearity: str = "identity"
    padding: str = "valid"

    def __post_init__(self):
        self.bank = as_filter_bank(self.bank)
        if self.nonlinearity not in NONLINEARITIES:
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")

    @property
    def in_channels(self) -> int:
        return self.bank.shape[3]

    def out_channels(self, c_in: int) -> int:
        return self.bank.shape[4]

    def __call__(self, volume):
        return apply_nonlinearity(conv3d(volume, self.bank, self.padding), self.nonlinearity)


@dataclass
class Pool:
    kind: str
    size: tuple = (1, 1, 1)

    def __post_init__(self):
        if self.kind not in POOL_KINDS:
            raise ValueError(f"unknown pool kind {self.kind!r}")
        if self.kind != "global_sum":
            self.size = tuple(int(s) for s in self.size)
            if len(self.size) != 3 or min(self.size) < 1:
                raise ValueError(f"pool size must be three integers >= 1, got {self.size}")

    in_channels = None

    def out_channels(self, c_in: int) -> int:
        return c_in

    def __call__(self, volume):
        if self.kind == "global_sum":
            return global_sum_pool(volume)
        return local_pool(volume, self.kind, self.size)


Layer = Union[Conv, Pool, Callable]


@dataclass
class CascadeSpec:
    """Ordered conv/pool layers.

    Any object with ``__call__(volume)``, ``in_channels`` and
    ``out_channels(c_in)`` may act as a layer; the handcrafted nets use this
    for oriented binning with a zero-motion bin.
    """
    layers: list = field(default_factory=list)

    def __post_init__(self):
        channels = None
        for idx, layer in enumerate(self.layers):
            if isinstance(layer, Pool) and layer.kind == "global_sum" and idx != len(self.layers) - 1:
                raise ValueError(f"layer {idx}: global_sum pooling is only allowed as the final layer")
            c_in = getattr(layer, "in_channels", None)
            if channels is not None and c_in is not None and c_in != channels:
                raise DimensionError(
                    f"layer {idx} expects {c_in} channels but layer {idx - 1} produces {channels}")
            if c_in is not None:
                channels = c_in
            if channels is not None:
                channels = layer.out_channels(channels)

    @property
    def returns_vector(self) -> bool:
        return bool(self.layers) and isinstance(self.layers[-1], Pool) \
            and self.layers[-1].kind == "global_sum"


def cascade_eval(spec: CascadeSpec, volume):
    out = as_volume(volume)
    for idx, layer in enumerate(spec.layers):
        try:
            out = layer(out)
        except (ValueError, ArithmeticError) as exc:
            raise type(exc)(f"cascade layer {idx}: {exc}") from exc
    return out


def cascade_eval_batch(spec: CascadeSpec, volumes, workers: int | None = None) -> list:
    """Evaluate ``spec`` on many volumes; results keep the input order."""
    volumes = list(volumes)
    if workers is None or workers <= 1 or len(volumes) < 2:
        return [cascade_eval(spec, v) for v in volumes]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda v: cascade_eval(spec, v), volumes))
