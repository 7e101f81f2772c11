"""``convisa``: the whole pipeline as subcommands over files.

Every command resolves its config (file, then ``--set`` overrides, then
dedicated flags), writes the resolved config and a run manifest next to its
outputs, and reports module errors as one JSON line on stderr.

Exit codes: 0 ok, 1 other module error, 2 config, 3 input format or
dimensions, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, formats
from .benchmark import (ClipData, clip_patches, handcrafted_descriptors, run_benchmark, select_tracks,
                        stream_config)
from .config import PipelineConfig, dump_config, load_config
from .encoding import (augment_locations, encode_video, fisher_vector, fit_gmm, fit_kmeans,
                       fit_pca_half, confusion_matrix, mean_accuracy, per_class_recall, predict,
                       reduce_pca_half, train_svm)
from .errors import ConfigError, ConvisaError, DimensionError, FormatError, NumericalError
from .handcrafted import bow_stream, kmeans_bow_cascade
from .isa import IsaTrainConfig, filter_gallery, filter_spectrum, save_image, train_isa
from .tensor_core import cascade_eval
from .two_stream import extract_learned, temporal_correlation, training_rows
from .video import (estimate_clip_flows, generate_synth_dataset, load_video, save_video,
                    track_trajectories)

VERSION = __version__

KINDS = {"hog": "HOG", "hof": "HOF", "mbhx": "MBHx", "mbhy": "MBHy", "traj": "Trajectory",
         "lop": "LOP", "lof": "LOF"}


# --- run bookkeeping -----------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict:
    import scipy

    return {"convisa": VERSION, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def _sidecars(out: Path) -> tuple[Path, Path]:
    if out.is_dir():
        return out / "config.yaml", out / "manifest.json"
    return out.with_name(out.name + ".config.yaml"), out.with_name(out.name + ".manifest.json")


def finish(out, cfg: PipelineConfig, args, inputs, t0: float, outputs=None):
    """Write the resolved config and manifest beside ``out``."""
    out = Path(out)
    cfg_path, man_path = _sidecars(out)
    dump_config(cfg, cfg_path)
    manifest = {
        "command": args.command,
        "argv": list(getattr(args, "argv", sys.argv[1:])),
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": sorted(str(p) for p in (outputs or [out])),
        "config": str(cfg_path),
        "versions": _versions(),
        "wall_seconds": round(time.time() - t0, 3),
    }
    man_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def resolve_config(args) -> PipelineConfig:
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides += [f"seed={args.seed}", f"synth.seed={args.seed}"]
    return load_config(args.config, overrides)


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FormatError(f"{what} {p} does not exist")
    return p


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _out_file(path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


# --- shared stage helpers ------------------------------------------------

def _clip_stages(video_path, cfg: PipelineConfig):
    clip = load_video(_require(video_path, "video"))
    flows = estimate_clip_flows(clip, cfg.flow)
    tracks = track_trajectories(clip.shape, flows, cfg.track)
    tracks = select_tracks(tracks, cfg.features.max_tracks_per_clip, cfg.seed)
    return clip, flows, tracks


def _stream_cfg(kind: str, cfg: PipelineConfig, structure=None, method=None):
    return stream_config(kind, structure or cfg.streams.structure(kind), cfg,
                         method=method or cfg.streams.method, pool=cfg.streams.temporal_pool)


def _labels_path(desc_dir: Path) -> Path:
    return desc_dir / "labels.json"


# --- commands ------------------------------------------------------------

def cmd_synth(args, cfg):
    out = _out_dir(args.out)
    train, test = generate_synth_dataset(cfg.synth)
    written = []
    for split, clips in (("train", train), ("test", test)):
        d = _out_dir(out / split)
        for i, clip in enumerate(clips):
            p = d / f"clip_{i:04d}.cvid"
            save_video(clip, p)
            written.append(p)
    print(f"wrote {len(train)} train and {len(test)} test clips to {out}")
    return out, [], written


def cmd_flow(args, cfg):
    clip = load_video(_require(args.video, "video"))
    flows = estimate_clip_flows(clip, cfg.flow)
    out = _out_file(args.out)
    formats.write_volume(out, flows)
    written = [out]
    if args.middlebury:
        d = _out_dir(args.middlebury)
        for t in range(flows.shape[2]):
            p = d / f"flow_{t:04d}.flo"
            formats.write_flo(p, flows[:, :, t:t + 1])
            written.append(p)
    print(f"{args.video}: {flows.shape[2]} flow fields -> {out}")
    return out, [args.video], written


def cmd_track(args, cfg):
    clip = load_video(_require(args.video, "video"))
    flows = formats.read_volume(args.flows)
    if flows.shape[:3] != (clip.shape[0], clip.shape[1], clip.shape[2] - 1) or flows.shape[3] != 2:
        raise DimensionError(f"flow stack {args.flows} has shape {flows.shape}, video {args.video} "
                             f"needs {(clip.shape[0], clip.shape[1], clip.shape[2] - 1, 2)}")
    tracks = track_trajectories(clip.shape, flows, cfg.track)
    tracks = select_tracks(tracks, cfg.features.max_tracks_per_clip, cfg.seed)
    out = _out_file(args.out)
    formats.write_trajectories(out, tracks)
    print(f"{args.video}: {len(tracks)} trajectories -> {out}")
    return out, [args.video, args.flows], [out]


def cmd_patches(args, cfg):
    clip = load_video(_require(args.video, "video"))
    flows = formats.read_volume(args.flows)
    tracks = formats.read_trajectories(args.tracks)
    if not tracks:
        raise ValueError(f"{args.tracks} holds no trajectories")
    pix, flo, loc = clip_patches(clip.frames, flows, tracks, cfg.features.patch_size,
                                 cfg.track.length)
    out = _out_file(args.out)
    formats.write_patches(out, pix if args.stream == "appearance" else flo, loc)
    print(f"{len(tracks)} {args.stream} patches -> {out}")
    return out, [args.video, args.flows, args.tracks], [out]


def cmd_train_filters(args, cfg):
    kind = "LOP" if args.stream == "appearance" else "LOF"
    scfg = _stream_cfg(kind, cfg, structure=args.structure)
    rows = []
    for p in args.patches:
        data, _ = formats.read_patches(_require(p, "patch file"))
        channels = 1 if kind == "LOP" else 2
        if data.shape[4] != channels:
            raise DimensionError(f"{p} holds {data.shape[4]}-channel patches, {kind} needs {channels}")
        rows.append(training_rows(data, scfg))
    X = np.vstack(rows)
    budget = cfg.features.train_rows
    if budget and len(X) > budget:
        rng = np.random.default_rng([cfg.seed, 17])
        X = X[np.sort(rng.choice(len(X), size=budget, replace=False))]
    f = cfg.features
    method = args.method or cfg.streams.method
    icfg = IsaTrainConfig(group_size=f.group_size, latent_dim=f.group_size * f.out_dim,
                          out_dim=f.out_dim, learning_rate=f.learning_rate,
                          epochs=0 if method == "pca" else f.epochs, seed=cfg.seed)
    model = train_isa(X, icfg)
    out = _out_file(args.model_out)
    formats.write_isa_model(out, model)
    print(f"{kind} {scfg.structure} model ({method}): {model.input_dim} inputs, "
          f"{model.d} subspaces of {model.group_size} -> {out}")
    return out, list(args.patches), [out]


def cmd_extract(args, cfg):
    kind = KINDS[args.kind]
    model = None
    if kind in ("LOP", "LOF"):
        if not args.model:
            raise ConfigError(f"--model is required for kind {args.kind}")
        model = formats.read_isa_model(args.model)
        scfg = _stream_cfg(kind, cfg, structure=args.structure, method=args.method)
    out = _out_dir(args.out)
    labels_file = _labels_path(out)
    labels = json.loads(labels_file.read_text()) if labels_file.exists() else {}
    written = []
    for v in args.videos:
        clip, flows, tracks = _clip_stages(v, cfg)
        pix, flo, loc = clip_patches(clip.frames, flows, tracks, cfg.features.patch_size,
                                     cfg.track.length)
        if not tracks:
            values = np.zeros((0, 1))
        elif model is not None:
            values = extract_learned(pix if kind == "LOP" else flo, model, scfg)
        else:
            cd = ClipData(int(clip.label), clip.frames.shape[2], tracks, pix, flo, loc)
            values = handcrafted_descriptors([cd], kind, cfg)[0]
        stem = Path(v).stem
        p = out / f"{stem}.{args.kind}.cdsc"
        formats.write_descriptors(p, formats.DescriptorSet(kind, values, loc))
        labels[stem] = int(clip.label)
        written.append(p)
    labels_file.write_text(json.dumps(labels, indent=1, sort_keys=True) + "\n")
    print(f"{len(written)} {kind} descriptor files -> {out}")
    inputs = list(args.videos) + ([args.model] if args.model else [])
    return out, inputs, written + [labels_file]


def _collect(desc_dir: Path):
    """``{kind: {stem: DescriptorSet}}`` and labels for one descriptor directory."""
    _require(desc_dir, "descriptor directory")
    lp = _labels_path(desc_dir)
    if not lp.exists():
        raise FormatError(f"{desc_dir} has no labels.json")
    labels = json.loads(lp.read_text())
    kinds: dict = {}
    for p in sorted(desc_dir.glob("*.cdsc")):
        stem, kind = p.name[:-len(".cdsc")].rsplit(".", 1)
        if kind not in KINDS:
            raise FormatError(f"{p}: unknown descriptor kind suffix {kind!r}")
        kinds.setdefault(kind, {})[stem] = formats.read_descriptors(p)
    if not kinds:
        raise FormatError(f"{desc_dir} holds no .cdsc descriptor files")
    stems = sorted(labels)
    for kind, per in kinds.items():
        missing = sorted(set(stems) - set(per))
        if missing:
            raise FormatError(f"{desc_dir}: kind {kind} missing for {missing[:3]}")
    return kinds, stems, labels


def _rows(ds, location: bool, pca):
    X = np.asarray(ds.values, dtype=np.float64)
    if pca is not None:
        X = reduce_pca_half(X, pca)
    if location:
        X = augment_locations(X, ds.locations)
    return X


def cmd_encode(args, cfg):
    desc_dir = Path(args.descriptors)
    kinds, stems, labels = _collect(desc_dir)
    enc = cfg.encode
    written, inputs = [], [p for p in sorted(desc_dir.glob("*.cdsc"))]
    model_dir = Path(args.model) if args.model else None
    fit = model_dir is None
    if fit:
        model_dir = _out_dir(args.model_out or Path(args.out).with_suffix(".codebook"))
    blocks = {s: {} for s in stems}
    for kind in sorted(kinds):
        sets = [kinds[kind][s] for s in stems]
        pca_path = model_dir / f"{kind}.cpca"
        book_path = model_dir / f"{kind}.{'cgmm' if args.codebook == 'fv' else 'ckms'}"
        if fit:
            rng = np.random.default_rng([cfg.seed, 29])
            X = np.vstack([d.values for d in sets if len(d)])
            L = np.vstack([d.locations for d in sets if len(d)])
            if enc.gmm_samples and len(X) > enc.gmm_samples:
                idx = np.sort(rng.choice(len(X), size=enc.gmm_samples, replace=False))
                X, L = X[idx], L[idx]
            pca = fit_pca_half(X) if enc.pca_half and X.shape[1] > 1 else None
            Z = reduce_pca_half(X, pca) if pca is not None else X
            if enc.location:
                Z = augment_locations(Z, L)
            if args.codebook == "fv":
                formats.write_gmm(book_path, fit_gmm(Z, enc.gmm_components, seed=cfg.seed))
            else:
                formats.write_centroids(book_path, fit_kmeans(Z, enc.gmm_components, seed=cfg.seed))
            if pca is not None:
                formats.write_pca(pca_path, pca)
            written += [book_path] + ([pca_path] if pca is not None else [])
        else:
            inputs += [book_path] + ([pca_path] if pca_path.exists() else [])
        pca = formats.read_pca(pca_path) if pca_path.exists() else None
        if args.codebook == "fv":
            gmm = formats.read_gmm(_require(book_path, "codebook"))
            for s, d in zip(stems, sets):
                blocks[s][kind] = (fisher_vector(_rows(d, enc.location, pca), gmm) if len(d)
                                   else np.zeros(2 * gmm.K * gmm.means.shape[1]))
        else:
            spec = kmeans_bow_cascade(formats.read_centroids(_require(book_path, "codebook")))
            for s, d in zip(stems, sets):
                Z = _rows(d, enc.location, pca)
                blocks[s][kind] = (cascade_eval(spec, bow_stream(Z)).reshape(-1) / len(Z)
                                   if len(d) else np.zeros(spec.layers[0].bank.shape[-1]))
    X = np.array([encode_video(blocks[s], enc.power_alpha).vector for s in stems])
    y = np.array([labels[s] for s in stems])
    out = _out_file(args.out)
    formats.write_encoded(out, X, y)
    print(f"{len(stems)} videos, kinds {sorted(kinds)}, {args.codebook} -> {out} ({X.shape[1]} dims)")
    return out, inputs, [out] + written


def cmd_classify(args, cfg):
    Xtr, ytr = formats.read_encoded(args.train)
    Xte, yte = formats.read_encoded(args.test)
    if Xtr.shape[1] != Xte.shape[1]:
        raise DimensionError(f"{args.train} has {Xtr.shape[1]} dims but {args.test} has {Xte.shape[1]}")
    C = cfg.svm_C if args.C is None else float(args.C)
    svm = train_svm(Xtr, ytr, C=C, seed=cfg.seed)
    pred = predict(svm, Xte)
    classes = np.unique(np.concatenate([ytr, yte]))
    present = np.unique(yte)
    metrics = {
        "macc": mean_accuracy(pred, yte),
        "per_class_recall": {str(k): float(v) for k, v in per_class_recall(pred, yte).items()},
        "confusion_matrix": confusion_matrix(pred, yte, classes).tolist(),
        "classes": classes.tolist(),
        "test_classes": present.tolist(),
        "predictions": pred.tolist(),
        "C": C,
    }
    out = _out_dir(args.out)
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    lines = [f"MAcc {metrics['macc']:.4f} over {len(present)} classes (C={C:g})"]
    lines += [f"  class {k}: recall {v:.4f}" for k, v in metrics["per_class_recall"].items()]
    lines.append("confusion (rows truth, cols predicted):")
    lines += ["  " + " ".join(f"{n:4d}" for n in row) for row in metrics["confusion_matrix"]]
    (out / "metrics.txt").write_text("\n".join(lines) + "\n")
    formats.write_svm(out / "svm.csvm", svm)
    print("\n".join(lines))
    return out, [args.train, args.test], [out / "metrics.json", out / "metrics.txt", out / "svm.csvm"]


def _filter_shape(model, cfg: PipelineConfig, text):
    if text:
        try:
            shape = tuple(int(v) for v in text.split(","))
        except ValueError as exc:
            raise ConfigError(f"--shape {text!r} is not a comma-separated list of ints") from exc
        return shape
    gx, gy, gt = cfg.features.cell_grid
    P = cfg.features.patch_size
    cw, ch = P // gx, P // gy
    tau = cfg.track.length // gt
    for shape in ((cw, ch, tau, 1), (cw, ch, 1, 1), (cw, ch, 1, 2), (cw, ch, tau, 2)):
        if int(np.prod(shape)) == model.input_dim:
            return shape
    raise ConfigError(f"cannot infer the receptive field of a {model.input_dim}-input model "
                      f"from the config; pass --shape n,m,tau,c")


def cmd_visualize(args, cfg):
    model = formats.read_isa_model(args.model)
    shape = _filter_shape(model, cfg, args.shape)
    out = _out_dir(args.out)
    save_image(filter_gallery(model, shape), out / "gallery.png")
    save_image(filter_spectrum(model, shape), out / "spectrum.png")
    print(f"filters of shape {shape} -> {out}/gallery.png, {out}/spectrum.png")
    return out, [args.model], [out / "gallery.png", out / "spectrum.png"]


def cmd_correlation(args, cfg):
    pix, _ = formats.read_patches(args.pixels)
    flo, _ = formats.read_patches(args.flows)
    report = {"pixels": temporal_correlation(pix), "flow": temporal_correlation(flo),
              "pixel_patches": int(len(pix)), "flow_patches": int(len(flo))}
    out = _out_file(args.out)
    out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    txt = (f"temporal correlation: pixels {report['pixels']:.4f}, "
           f"flow {report['flow']:.4f}")
    out.with_suffix(".txt").write_text(txt + "\n")
    print(txt)
    return out, [args.pixels, args.flows], [out, out.with_suffix(".txt")]


def cmd_benchmark(args, cfg):
    res = run_benchmark(cfg, with_handcrafted=args.handcrafted)
    out = _out_dir(args.out)
    (out / "metrics.json").write_text(json.dumps(res, indent=2, sort_keys=True) + "\n")
    for k, v in res.items():
        if isinstance(v, float):
            print(f"{k:>20s} {v:.4f}")
    return out, [], [out / "metrics.json"]


# --- entry point ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON pipeline config")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config value, e.g. features.group_size=10")
    common.add_argument("--seed", type=int, help="shortcut for seed and synth.seed")

    ap = argparse.ArgumentParser(prog="convisa", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=VERSION)
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=fn)
        return p

    p = add("synth", cmd_synth, "generate the synthetic motion-class dataset")
    p.add_argument("--out", required=True)

    p = add("flow", cmd_flow, "estimate optical flow for every frame pair of a clip")
    p.add_argument("video")
    p.add_argument("--out", required=True, help="CVOL flow stack (W, H, T-1, 2)")
    p.add_argument("--middlebury", help="also write one .flo file per frame pair here")

    p = add("track", cmd_track, "dense trajectories from a clip and its flow stack")
    p.add_argument("video")
    p.add_argument("flows")
    p.add_argument("--out", required=True)

    p = add("patches", cmd_patches, "trajectory-aligned pixel or flow patches")
    p.add_argument("video")
    p.add_argument("flows")
    p.add_argument("tracks")
    p.add_argument("--stream", choices=["appearance", "motion"], required=True)
    p.add_argument("--out", required=True)

    p = add("train-filters", cmd_train_filters, "learn a PCA / ISA / ISA+ filter bank")
    p.add_argument("patches", nargs="+")
    p.add_argument("--stream", choices=["appearance", "motion"], required=True)
    p.add_argument("--structure", choices=["projection", "pooling"])
    p.add_argument("--method", choices=["pca", "isa", "isa+"])
    p.add_argument("--model-out", required=True)

    p = add("extract", cmd_extract, "per-video descriptor files")
    p.add_argument("videos", nargs="+")
    p.add_argument("--kind", choices=sorted(KINDS), required=True)
    p.add_argument("--model")
    p.add_argument("--structure", choices=["projection", "pooling"])
    p.add_argument("--method", choices=["pca", "isa", "isa+"])
    p.add_argument("--out", required=True)

    p = add("encode", cmd_encode, "Fisher vector or BoW encoding of a descriptor directory")
    p.add_argument("descriptors")
    p.add_argument("--codebook", choices=["fv", "bow"], default="fv")
    p.add_argument("--model", help="directory of fitted codebooks to reuse")
    p.add_argument("--model-out", help="where to write fitted codebooks")
    p.add_argument("--out", required=True)

    p = add("classify", cmd_classify, "one-vs-all linear SVM and metrics")
    p.add_argument("train")
    p.add_argument("test")
    p.add_argument("--C", type=float)
    p.add_argument("--out", required=True)

    p = add("visualize", cmd_visualize, "filter gallery and spectrum images")
    p.add_argument("model")
    p.add_argument("--shape", help="receptive field n,m,tau,c")
    p.add_argument("--out", required=True)

    p = add("correlation", cmd_correlation, "temporal correlation of pixel vs flow patches")
    p.add_argument("pixels")
    p.add_argument("flows")
    p.add_argument("--out", required=True)

    p = add("benchmark", cmd_benchmark, "every stream condition on the synthetic benchmark")
    p.add_argument("--handcrafted", action="store_true")
    p.add_argument("--out", required=True)
    return ap


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return 2
    if isinstance(exc, (FormatError, DimensionError, OSError)):
        return 3
    if isinstance(exc, NumericalError):
        return 4
    return getattr(exc, "exit_code", 1)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    t0 = time.time()
    try:
        cfg = resolve_config(args)
        out, inputs, outputs = args.func(args, cfg)
        finish(out, cfg, args, [p for p in inputs if Path(p).is_file()], t0, outputs)
    except (ConvisaError, ValueError, ArithmeticError, OSError) as exc:
        code = _exit_code(exc)
        err = {"error": type(exc).__name__, "exit_code": code, "command": args.command,
               "message": str(exc)}
        print(json.dumps(err), file=sys.stderr)
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
