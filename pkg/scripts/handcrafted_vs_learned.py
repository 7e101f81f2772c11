"""Score each handcrafted descriptor and each learned stream on one seed.

    python3 scripts/handcrafted_vs_learned.py --seed 0 --set synth.clips_per_class=20
"""
import argparse
import json

from convisa.benchmark import (evaluate, handcrafted_descriptors, learned_descriptors, prepare,
                               stream_config, train_stream_model)
from convisa.config import load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--config")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", help="also write the scores here")
    args = ap.parse_args()

    cfg = load_config(args.config, args.set + [f"seed={args.seed}", f"synth.seed={args.seed}"])
    data = prepare(cfg)
    scores = {}
    for kind in ("Trajectory", "HOG", "HOF", "MBHx", "MBHy"):
        d = (handcrafted_descriptors(data.train, kind, cfg), handcrafted_descriptors(data.test, kind, cfg))
        scores[kind], *_ = evaluate(data, {kind: d}, cfg)
    for kind in ("LOP", "LOF"):
        scfg = stream_config(kind, cfg.streams.structure(kind), cfg, method=cfg.streams.method)
        model = train_stream_model(data.train, scfg, cfg, cfg.seed)
        d = (learned_descriptors(data.train, model, scfg), learned_descriptors(data.test, model, scfg))
        scores[kind], *_ = evaluate(data, {kind: d}, cfg)
    for k, v in scores.items():
        print(f"{k:>12s} {100 * v:6.1f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(scores, fh, indent=2)


if __name__ == "__main__":
    main()
