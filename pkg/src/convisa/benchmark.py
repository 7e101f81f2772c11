"""Desk-scale action-recognition benchmark on synthetic clips.

Stages: generate clips -> flow -> dense tracks -> pixel/flow patches ->
filter learning per stream -> descriptors -> PCA-half + location ->
GMM / Fisher vectors -> power/l2 -> one-vs-all SVM -> mean accuracy.
"""
from __future__ import annotations

import hashlib
import logging
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .encoding import (augment_locations, encode_video, fisher_vector, fit_gmm, fit_pca_half,
                       mean_accuracy, predict, reduce_pca_half, train_svm)
from .handcrafted import describe_patch, trajectory_descriptor
from .isa import IsaModel, IsaTrainConfig, fit_pca, train_isa
from .two_stream import StreamConfig, extract_learned, temporal_correlation, training_rows
from .video import (FlowConfig, SynthConfig, TrackConfig, VideoClip, estimate_clip_flows,
                    generate_synth_dataset, sample_patch, track_trajectories)

log = logging.getLogger(__name__)


@dataclass
class FeatureConfig:
    patch_size: int = 16
    cell_grid: tuple = (2, 2, 3)
    max_tracks_per_clip: int = 60
    group_size: int = 4
    out_dim: int = 8
    epochs: int = 150
    learning_rate: float = 0.5
    train_rows: int = 12000


@dataclass
class EncodeConfig:
    gmm_components: int = 16
    gmm_samples: int = 20000
    pca_half: bool = True
    location: bool = True
    power_alpha: float = 0.5


@dataclass
class BenchmarkConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    track: TrackConfig = field(default_factory=TrackConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    encode: EncodeConfig = field(default_factory=EncodeConfig)
    svm_C: float = 100.0
    seed: int = 0


def worker_count() -> int:
    env = os.environ.get("CONVISA_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _ordered_map(fn, items):
    items = list(items)
    workers = worker_count()
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass
class ClipData:
    label: int
    n_frames: int
    trajectories: list
    pixels: np.ndarray       # (n, P, P, L, 1)
    flows: np.ndarray        # (n, P, P, L, 2)
    locations: np.ndarray    # (n, 3)


def select_tracks(tracks: list, cap: int, seed: int) -> list:
    """Seeded subset of at most ``cap`` tracks, kept in their original order."""
    if cap and len(tracks) > cap:
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(len(tracks), size=cap, replace=False))
        tracks = [tracks[i] for i in keep]
    return tracks


def clip_patches(frames: np.ndarray, flows: np.ndarray, tracks: list, patch_size: int,
                 length: int):
    """Pixel patches, flow patches and locations for every track."""
    P, L, T = patch_size, length, frames.shape[2]
    pix = np.zeros((len(tracks), P, P, L, 1), np.float32)
    flo = np.zeros((len(tracks), P, P, L, 2), np.float32)
    loc = np.zeros((len(tracks), 3))
    for i, tr in enumerate(tracks):
        p = sample_patch(frames, tr, P, n_frames=T)
        pix[i], loc[i] = p.volume, p.location
        flo[i] = sample_patch(flows, tr, P, n_frames=T).volume
    return pix, flo, loc


def prepare_clip(clip: VideoClip, cfg: BenchmarkConfig, seed: int) -> ClipData:
    """Flow, tracks and trajectory-aligned patches for one clip."""
    flows = estimate_clip_flows(clip, cfg.flow)
    tracks = track_trajectories(clip.shape, flows, cfg.track)
    tracks = select_tracks(tracks, cfg.features.max_tracks_per_clip, seed)
    pix, flo, loc = clip_patches(clip.frames, flows, tracks, cfg.features.patch_size,
                                 cfg.track.length)
    return ClipData(int(clip.label), clip.frames.shape[2], tracks, pix, flo, loc)


def prepare_clips(clips, cfg: BenchmarkConfig, seed: int) -> list[ClipData]:
    return _ordered_map(lambda ic: prepare_clip(ic[1], cfg, seed * 100003 + ic[0]),
                        list(enumerate(clips)))


def _subsample(X: np.ndarray, budget: int, rng) -> np.ndarray:
    if budget and len(X) > budget:
        return X[np.sort(rng.choice(len(X), size=budget, replace=False))]
    return X


def stream_config(kind: str, structure: str, cfg: BenchmarkConfig, method: str = "isa+",
                  pool: str = "mean") -> StreamConfig:
    stream = "appearance" if kind == "LOP" else "motion"
    cell_frames = cfg.track.length // cfg.features.cell_grid[2]
    if structure == "projection":
        return StreamConfig.projection(stream, cell_frames, cell_grid=cfg.features.cell_grid,
                                       method=method)
    return StreamConfig.pooling(stream, pool, cell_grid=cfg.features.cell_grid, method=method)


def _patches(cd: ClipData, stream: str) -> np.ndarray:
    return cd.pixels if stream == "appearance" else cd.flows


def train_stream_model(train: list[ClipData], scfg: StreamConfig, cfg: BenchmarkConfig,
                       seed: int) -> IsaModel:
    rng = np.random.default_rng([seed, 17])
    rows = [training_rows(_patches(cd, scfg.stream), scfg) for cd in train if len(cd.trajectories)]
    X = _subsample(np.vstack(rows), cfg.features.train_rows, rng)
    f = cfg.features
    icfg = IsaTrainConfig(group_size=f.group_size, latent_dim=f.group_size * f.out_dim,
                          out_dim=f.out_dim, learning_rate=f.learning_rate, epochs=f.epochs,
                          seed=seed)
    return train_isa(X, icfg)


def learned_descriptors(clips: list[ClipData], model: IsaModel, scfg: StreamConfig) -> list:
    out = []
    for cd in clips:
        if len(cd.trajectories) == 0:
            out.append(np.zeros((0, 0)))
            continue
        out.append(extract_learned(_patches(cd, scfg.stream), model, scfg))
    return out


def handcrafted_descriptors(clips: list[ClipData], kind: str, cfg: BenchmarkConfig) -> list:
    grid = cfg.features.cell_grid
    out = []
    for cd in clips:
        rows = []
        for i, tr in enumerate(cd.trajectories):
            if kind == "Trajectory":
                rows.append(trajectory_descriptor(tr.points).values)
            elif kind == "HOG":
                rows.append(describe_patch("HOG", cd.pixels[i], grid).values)
            else:
                rows.append(describe_patch(kind, cd.flows[i], grid).values)
        out.append(np.array(rows, dtype=np.float64).reshape(len(rows), -1))
    return out


@dataclass
class KindEncoder:
    pca: object
    gmm: object
    location: bool


def fit_encoder(train_desc: list, train_clips: list[ClipData], cfg: BenchmarkConfig,
                seed: int) -> KindEncoder:
    rng = np.random.default_rng([seed, 29])
    X = np.vstack([d for d in train_desc if len(d)])
    L = np.vstack([cd.locations for cd, d in zip(train_clips, train_desc) if len(d)])
    idx = np.arange(len(X))
    if cfg.encode.gmm_samples and len(X) > cfg.encode.gmm_samples:
        idx = np.sort(rng.choice(len(X), size=cfg.encode.gmm_samples, replace=False))
    X, L = X[idx], L[idx]
    pca = fit_pca_half(X) if cfg.encode.pca_half and X.shape[1] > 1 else None
    Z = reduce_pca_half(X, pca) if pca is not None else X
    if cfg.encode.location:
        Z = augment_locations(Z, L)
    gmm = fit_gmm(Z, cfg.encode.gmm_components, seed=seed)
    return KindEncoder(pca, gmm, cfg.encode.location)


def encode_kind(enc: KindEncoder, desc: np.ndarray, cd: ClipData) -> np.ndarray:
    D = enc.gmm.means.shape[1]
    if len(desc) == 0:
        return np.zeros(2 * enc.gmm.K * D)
    Z = reduce_pca_half(desc, enc.pca) if enc.pca is not None else desc
    if enc.location:
        Z = augment_locations(Z, cd.locations)
    return fisher_vector(Z, enc.gmm)


def encode_all(kinds: dict, train: list[ClipData], test: list[ClipData], cfg: BenchmarkConfig,
               seed: int):
    """``kinds`` maps a name to ``(train_desc, test_desc)``; returns normalized matrices."""
    enc_train = [dict() for _ in train]
    enc_test = [dict() for _ in test]
    for name, (dtr, dte) in kinds.items():
        enc = fit_encoder(dtr, train, cfg, seed)
        for i, cd in enumerate(train):
            enc_train[i][name] = encode_kind(enc, dtr[i], cd)
        for i, cd in enumerate(test):
            enc_test[i][name] = encode_kind(enc, dte[i], cd)
    a = cfg.encode.power_alpha
    Xtr = np.array([encode_video(b, a).vector for b in enc_train])
    Xte = np.array([encode_video(b, a).vector for b in enc_test])
    return Xtr, Xte


def classify(Xtr, ytr, Xte, yte, C: float, seed: int):
    svm = train_svm(Xtr, ytr, C=C, seed=seed)
    pred = predict(svm, Xte)
    return mean_accuracy(pred, yte), pred, svm


@dataclass
class PreparedData:
    train: list
    test: list
    seconds: float

    @property
    def y_train(self):
        return np.array([cd.label for cd in self.train])

    @property
    def y_test(self):
        return np.array([cd.label for cd in self.test])


def prepare(cfg: BenchmarkConfig) -> PreparedData:
    t0 = time.time()
    train_clips, test_clips = generate_synth_dataset(cfg.synth)
    train = prepare_clips(train_clips, cfg, cfg.seed)
    test = prepare_clips(test_clips, cfg, cfg.seed + 7919)
    return PreparedData(train, test, time.time() - t0)


def evaluate(data: PreparedData, kinds: dict, cfg: BenchmarkConfig):
    Xtr, Xte = encode_all(kinds, data.train, data.test, cfg, cfg.seed)
    macc, pred, _ = classify(Xtr, data.y_train, Xte, data.y_test, cfg.svm_C, cfg.seed)
    return macc, pred, Xtr, Xte


def run_benchmark(cfg: BenchmarkConfig, data: PreparedData | None = None,
                  with_handcrafted: bool = False) -> dict:
    """Every acceptance-relevant condition on one seeded dataset."""
    data = data or prepare(cfg)
    res = {"prepare_seconds": data.seconds,
           "tracks_train": int(sum(len(cd.trajectories) for cd in data.train)),
           "tracks_test": int(sum(len(cd.trajectories) for cd in data.test))}
    pix = [p for cd in data.train for p in cd.pixels]
    flo = [p for cd in data.train for p in cd.flows]
    res["corr_pixels"] = temporal_correlation(pix)
    res["corr_flow"] = temporal_correlation(flo)

    desc = {}
    for kind in ("LOP", "LOF"):
        for structure in ("projection", "pooling"):
            scfg = stream_config(kind, structure, cfg)
            model = train_stream_model(data.train, scfg, cfg, cfg.seed)
            for method in ("pca", "isa", "isa+"):
                mcfg = stream_config(kind, structure, cfg, method=method)
                desc[(kind, structure, method)] = (learned_descriptors(data.train, model, mcfg),
                                                   learned_descriptors(data.test, model, mcfg))
    hashes = {}
    for key in [(k, s, "isa+") for k in ("LOP", "LOF") for s in ("projection", "pooling")]:
        macc, pred, Xtr, Xte = evaluate(data, {key[0]: desc[key]}, cfg)
        res[f"{key[0]}_{key[1]}"] = macc
    for method in ("pca", "isa", "isa+"):
        kinds = {"LOP": desc[("LOP", "projection", method)], "LOF": desc[("LOF", "pooling", method)]}
        macc, pred, Xtr, Xte = evaluate(data, kinds, cfg)
        res[f"combined_{method}"] = macc
        if method == "isa+":
            res["predictions"] = pred.tolist()
            hashes["encoded"] = hashlib.sha256(Xtr.tobytes() + Xte.tobytes()).hexdigest()
            hashes["predictions"] = hashlib.sha256(pred.astype(np.int64).tobytes()).hexdigest()
    if with_handcrafted:
        for kind in ("Trajectory", "HOG", "HOF", "MBHx", "MBHy"):
            d = (handcrafted_descriptors(data.train, kind, cfg),
                 handcrafted_descriptors(data.test, kind, cfg))
            res[kind], *_ = evaluate(data, {kind: d}, cfg)
    res["hashes"] = hashes
    return res
