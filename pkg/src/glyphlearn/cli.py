"""Command-line surface: corpus synthesis, training, sampling, parsing,
classification, exemplar generation, and marginal-likelihood reports.

Every command takes --config/--seed/--out; all randomness flows from the
seed through named substreams, so reruns are byte-identical. Exit codes:
0 success, 2 usage, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import imageio
from .config import RunConfig
from .checkpoint import load_checkpoint, save_checkpoint
from .data import DrawingRecord, export_drawings, ingest_drawings
from .drawing import CharacterType
from .errors import DataError, GlyphLearnError, NumericalError
from .gmm import SamplerConfig
from .inference import build_posterior, parses_to_dict
from .parallel import ordered_parallel_map
from .render import as_binary_image
from .rng import fork, substream
from .splines import preprocess_drawing
from .tasks import (
    FULL_SCALE_REFERENCE,
    ClassificationEpisode,
    classify_episode,
    generate_concepts,
    generate_exemplars,
    marginal_log_lik,
    parse_map,
)
from .token_model import TokenNoiseParams, fit_token_noise
from .toy_corpus import synthesize_toy_corpus
from .type_model import train_mle

SCHEMA = "gns/1"


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_bundle(args, cfg: RunConfig):
    weights, noise = load_checkpoint(args.ckpt, expect=cfg)
    return weights, noise


def _read_binary_image(path: str, cfg: RunConfig):
    gray = imageio.read_image(path)
    image = imageio.to_binary_ink(gray)
    return as_binary_image(image, cfg.canvas_size)


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "workers", None):
        cfg.workers = args.workers
    return cfg.validate()


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    os.makedirs(args.out, exist_ok=True)
    drawings = synthesize_toy_corpus(args.classes, args.per_class, cfg.seed, cfg, args.class_offset)
    records = [
        DrawingRecord(d.drawing_id, d.class_name, [s for s in d.strokes], d.image)
        for d in drawings
    ]
    export_drawings(records, os.path.join(args.out, "drawings.ndjson"))
    img_dir = os.path.join(args.out, "images")
    os.makedirs(img_dir, exist_ok=True)
    for d in drawings:
        imageio.write_png(os.path.join(img_dir, f"{d.drawing_id}.png"), imageio.binary_to_gray(d.image))
    manifest = {
        "schema": SCHEMA,
        "classes": sorted({d.class_name for d in drawings}),
        "n_drawings": len(drawings),
        "true_stroke_counts": {d.drawing_id: d.kappa_true for d in drawings},
        "seed": cfg.seed,
    }
    _write_json(os.path.join(args.out, "manifest.json"), manifest)
    print(f"wrote {len(drawings)} drawings over {args.classes} classes to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if args.epochs:
        cfg.train.epochs = args.epochs
    os.makedirs(args.out, exist_ok=True)
    records = ingest_drawings(args.data, cfg.canvas_size, strict=args.strict, report=print)
    by_class: dict[str, list[CharacterType]] = {}
    types = []
    for rec in records:
        ct = CharacterType.from_splines(preprocess_drawing(rec.strokes, cfg.spline))
        types.append(ct)
        by_class.setdefault(rec.class_label, []).append(ct)
    noise = fit_token_noise(list(by_class.values()), TokenNoiseParams.from_config(cfg.token_noise))
    weights, report = train_mle(types, cfg, log=print)
    ckpt_path = os.path.join(args.out, "checkpoint.bin")
    save_checkpoint(weights, noise, ckpt_path)
    with open(os.path.join(args.out, "nll_curve.csv"), "w", encoding="utf-8") as fh:
        fh.write("epoch,train_nll,heldout_nll\n")
        fh.write(f"0,{report.init_train_nll!r},{report.init_heldout_nll!r}\n")
        for i, tr in enumerate(report.train_nll, start=1):
            ho = report.heldout_nll[i - 1] if report.heldout_nll else float("nan")
            fh.write(f"{i},{tr!r},{ho!r}\n")
    _write_json(
        os.path.join(args.out, "train_report.json"),
        {"schema": SCHEMA, "report": report.to_dict(), "n_drawings": len(types),
         "noise": {"sigma_loc": noise.sigma_loc, "sigma_traj": noise.sigma_traj}},
    )
    print(f"checkpoint written to {ckpt_path}")
    return 0


def cmd_sample(args) -> int:
    cfg = _load_config(args)
    os.makedirs(args.out, exist_ok=True)
    weights, _ = _load_bundle(args, cfg)
    temperature = args.temperature if args.temperature is not None else cfg.tasks.concept_temperature
    out = generate_concepts(args.n, weights, cfg, substream(cfg.seed, "cli/sample"), temperature)
    grays = [imageio.prob_map_to_gray(pm) for _, pm in out]
    n_cols = int(np.ceil(np.sqrt(len(grays))))
    imageio.write_png(os.path.join(args.out, "concepts.png"), imageio.image_grid(grays, n_cols))
    payload = {
        "schema": SCHEMA,
        "temperature": temperature,
        "types": [
            {
                "strokes": [
                    {"start": [float(v) for v in s], "rel_points": [[float(a), float(b)] for a, b in t]}
                    for s, t in zip(ct.starts, ct.trajectories)
                ]
            }
            for ct, _ in out
        ],
    }
    _write_json(os.path.join(args.out, "concepts.json"), payload)
    print(f"sampled {args.n} concepts at temperature {temperature}")
    return 0


def cmd_parse(args) -> int:
    cfg = _load_config(args)
    os.makedirs(args.out, exist_ok=True)
    weights, noise = _load_bundle(args, cfg)
    image = _read_binary_image(args.image, cfg)
    parses = build_posterior(image, weights, noise, cfg, substream(cfg.seed, "cli/parse"))
    best = parse_map(parses)
    payload = parses_to_dict(parses, cfg.canvas_size)
    payload["map_index"] = int(np.argmax([p.weight for p in parses]))
    _write_json(os.path.join(args.out, "parses.json"), payload)
    imageio.write_png(os.path.join(args.out, "map_parse.png"), imageio.parse_overlay(image, best))
    print(f"map parse has {best.kappa} strokes; weights "
          + ", ".join(f"{p.weight:.4f}" for p in parses))
    return 0


def _load_episode(path: str, cfg: RunConfig) -> ClassificationEpisode:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            spec = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read episode file {path}: {e}") from e
    base = os.path.dirname(os.path.abspath(path))

    def img(rec):
        return _read_binary_image(os.path.join(base, rec["image"]), cfg)

    train = spec.get("train", [])
    test = spec.get("test", [])
    if not train or not test:
        raise DataError(f"episode {path} needs non-empty 'train' and 'test' lists")
    labels = [str(rec.get("label", i)) for i, rec in enumerate(train)]
    test_labels = [str(rec["label"]) for rec in test] if all("label" in r for r in test) else None
    return ClassificationEpisode(
        train_images=[img(r) for r in train],
        test_images=[img(r) for r in test],
        train_labels=labels,
        test_labels=test_labels,
    )


def cmd_classify(args) -> int:
    cfg = _load_config(args)
    os.makedirs(args.out, exist_ok=True)
    weights, noise = _load_bundle(args, cfg)
    episode = _load_episode(args.episode, cfg)
    pmap = (lambda f, xs: ordered_parallel_map(f, xs, cfg.workers)) if cfg.workers > 1 else None
    result = classify_episode(
        episode, weights, noise, cfg, substream(cfg.seed, "cli/classify"), parallel_map=pmap
    )
    _write_json(os.path.join(args.out, "predictions.json"), result.to_dict())
    with open(os.path.join(args.out, "score_matrix.csv"), "w", encoding="utf-8") as fh:
        fh.write("test_index," + ",".join(episode.train_labels) + "\n")
        for t, row in enumerate(result.two_way):
            fh.write(f"{t}," + ",".join(repr(float(v)) for v in row) + "\n")
    if result.accuracy is not None:
        print(f"accuracy {result.accuracy:.4f} over {len(episode.test_images)} test images")
    else:
        print(f"classified {len(episode.test_images)} test images")
    return 0


def cmd_exemplars(args) -> int:
    cfg = _load_config(args)
    os.makedirs(args.out, exist_ok=True)
    weights, noise = _load_bundle(args, cfg)
    image = _read_binary_image(args.image, cfg)
    rng = substream(cfg.seed, "cli/exemplars")
    parses = build_posterior(image, weights, noise, cfg, rng)
    temperature = args.temperature if args.temperature is not None else cfg.tasks.exemplar_temperature
    exemplars = generate_exemplars(parses, args.n, weights, noise, cfg, rng, temperature)
    figure = imageio.exemplar_figure(
        imageio.binary_to_gray(image), [imageio.binary_to_gray(e.image) for e in exemplars]
    )
    imageio.write_png(os.path.join(args.out, "exemplars.png"), figure)
    payload = {
        "schema": SCHEMA,
        "temperature": temperature,
        "exemplars": [
            {
                "parse_index": e.parse_index,
                "affine": [float(v) for v in e.token.affine],
                "ink_fraction": float(e.image.mean()),
            }
            for e in exemplars
        ],
    }
    _write_json(os.path.join(args.out, "exemplars.json"), payload)
    print(f"generated {args.n} exemplars at temperature {temperature}")
    return 0


def _image_paths(spec: str) -> list[str]:
    if os.path.isdir(spec):
        names = sorted(
            n for n in os.listdir(spec) if n.lower().endswith((".png", ".pgm"))
        )
        if not names:
            raise DataError(f"directory {spec} holds no .png/.pgm images")
        return [os.path.join(spec, n) for n in names]
    try:
        with open(spec, "r", encoding="utf-8") as fh:
            paths = [line.strip() for line in fh if line.strip()]
    except OSError as e:
        raise DataError(f"cannot read image list {spec}: {e}") from e
    if not paths:
        raise DataError(f"image list {spec} is empty")
    base = os.path.dirname(os.path.abspath(spec))
    return [p if os.path.isabs(p) else os.path.join(base, p) for p in paths]


def cmd_loglik(args) -> int:
    cfg = _load_config(args)
    os.makedirs(args.out, exist_ok=True)
    weights, noise = _load_bundle(args, cfg)
    paths = _image_paths(args.images)
    streams = fork(substream(cfg.seed, "cli/loglik"), len(paths))

    def one(item):
        index, path = item
        image = _read_binary_image(path, cfg)
        parses = build_posterior(image, weights, noise, cfg, streams[index])
        est = marginal_log_lik(parses, image, weights, noise, cfg)
        return est

    items = list(enumerate(paths))
    estimates = ordered_parallel_map(one, items, cfg.workers)
    rows = []
    for path, est in zip(paths, estimates):
        rows.append(
            {
                "image": os.path.basename(path),
                "log_lik": est.log_lower_bound,
                "ll_per_dim": est.ll_per_dim,
                "n_modes": len(est.per_parse_terms),
                "dropped": est.dropped,
            }
        )
    mean_ll = float(np.mean([r["log_lik"] for r in rows]))
    size = cfg.canvas_size
    payload = {
        "schema": SCHEMA,
        "rows": rows,
        "mean_log_lik": mean_ll,
        "mean_ll_per_dim": mean_ll / (size * size),
        "image_size": [size, size],
        "reference": FULL_SCALE_REFERENCE,
    }
    _write_json(os.path.join(args.out, "loglik.json"), payload)
    with open(os.path.join(args.out, "loglik.csv"), "w", encoding="utf-8") as fh:
        fh.write("image,log_lik,ll_per_dim\n")
        for r in rows:
            fh.write(f"{r['image']},{r['log_lik']!r},{r['ll_per_dim']!r}\n")
        fh.write(f"MEAN,{mean_ll!r},{mean_ll / (size * size)!r}\n")
    print(f"mean log-likelihood {mean_ll:.2f} ({mean_ll / (size * size):.4f} per dim)")
    return 0


# ---------------------------------------------------------------------------
# dispatch


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glyphlearn",
        description="Stroke-program concept learning: train, parse, classify, generate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="run configuration JSON")
        p.add_argument("--seed", type=int, default=None, help="root random seed")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--workers", type=int, default=None, help="parallel workers")

    p = sub.add_parser("synth", help="synthesize the procedural drawing corpus")
    common(p)
    p.add_argument("--classes", type=int, default=20)
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--class-offset", type=int, default=0)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="fit the concept prior on a drawing corpus")
    common(p)
    p.add_argument("--data", required=True, help="NDJSON drawing records")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--strict", action="store_true", help="abort on malformed records")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sample", help="sample new concepts unconditionally")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--n", type=int, default=36)
    p.add_argument("--temperature", type=float, default=None)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("parse", help="infer stroke programs for one image")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(fn=cmd_parse)

    p = sub.add_parser("classify", help="run a one-shot classification episode")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--episode", required=True, help="episode JSON file")
    p.set_defaults(fn=cmd_classify)

    p = sub.add_parser("exemplars", help="generate new exemplars of one image's concept")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--n", type=int, default=9)
    p.add_argument("--temperature", type=float, default=None)
    p.set_defaults(fn=cmd_exemplars)

    p = sub.add_parser("loglik", help="marginal likelihood bounds for images")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--images", required=True, help="image directory or list file")
    p.set_defaults(fn=cmd_loglik)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except (NumericalError, GlyphLearnError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
