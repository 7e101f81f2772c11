"""Learn LOP and LOF filter banks on synthetic clips and save their galleries.

Writes one gallery and one amplitude-spectrum image per stream, structure
and method, so PCA, ISA and the projection/pooling variants can be compared
side by side.

    python3 scripts/visualize_filters.py --out results/filters --set synth.clips_per_class=10
"""
import argparse
import dataclasses
import logging
from pathlib import Path

from convisa.benchmark import prepare, stream_config, train_stream_model
from convisa.config import load_config
from convisa.isa import filter_gallery, filter_spectrum, save_image


def receptive_field(cfg, scfg):
    gx, gy, _ = cfg.features.cell_grid
    P = cfg.features.patch_size
    channels = 1 if scfg.stream == "appearance" else 2
    return (P // gx, P // gy, scfg.stack_len, channels)


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--config")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    ap.add_argument("--out", default="results/filters")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = load_config(args.config, args.set)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = prepare(cfg)
    logging.info("prepared %d training clips in %.0f s", len(data.train), data.seconds)
    for kind in ("LOP", "LOF"):
        for structure in ("projection", "pooling"):
            scfg = stream_config(kind, structure, cfg)
            shape = receptive_field(cfg, scfg)
            for method, epochs in (("pca", 0), ("isa", cfg.features.epochs)):
                run_cfg = dataclasses.replace(
                    cfg, features=dataclasses.replace(cfg.features, epochs=epochs))
                model = train_stream_model(data.train, scfg, run_cfg, cfg.seed)
                stem = out / f"{kind}_{structure}_{method}"
                save_image(filter_gallery(model, shape), stem.with_name(stem.name + "_gallery.png"))
                save_image(filter_spectrum(model, shape), stem.with_name(stem.name + "_spectrum.png"))
                logging.info("%s %s %s: %s filters -> %s", kind, structure, method, shape, stem)


if __name__ == "__main__":
    main()
