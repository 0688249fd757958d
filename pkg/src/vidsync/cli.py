"""Command-line entry point.

Subcommands: gen-data, flow, train, sync, evaluate, plot.  Every command is
a pure function of (config, seed): outputs land under --out and re-runs are
byte-identical.  Exit codes: 0 ok, 1 usage/config error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import data as D
from .config import (RunConfig, build_grid_config, build_run_config,
                     parse_kv_file)
from .delay import (DenseDelayModel, delay_to_class, densedelay_estimate,
                    heatmap_estimate, train_densedelay)
from .errors import ConfigError, DataError
from .evaluate import emit_plot, read_reports_csv, run_experiment, write_reports_csv
from .matchers import (build_matcher, build_matching_matrix, load_matcher,
                       load_matcher_meta, save_matcher, train_siamese,
                       train_triplet)
from .params import ParamSet


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _add_common(p: _Parser, *names):
    if "config" in names:
        p.add_argument("--config", help="flat key=value config file")
    if "seed" in names:
        p.add_argument("--seed", type=int, default=None)
    if "out" in names:
        p.add_argument("--out", default="out", help="output directory")
    if "resolution" in names:
        p.add_argument("--resolution", type=int, default=None)
    if "input" in names:
        p.add_argument("--input", choices=("raw", "flow"), default=None)
    if "matcher" in names:
        p.add_argument("--matcher",
                       choices=("siamese", "triplet-euc", "triplet-sim", "oracle"),
                       default=None)
    if "delay" in names:
        p.add_argument("--delay", choices=("heatmap", "dense"), default=None)
    if "force" in names:
        p.add_argument("--force", action="store_true",
                       help="overwrite existing outputs")
    if "paper" in names:
        p.add_argument("--paper-defaults", action="store_true",
                       help="pin the published hyperparameters (224px, 100 epochs)")


def build_parser() -> _Parser:
    p = _Parser(prog="vidsync",
                description="Pixel-only time synchronization of stereo videos")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[], help="render a synthetic stereo dataset")
    _add_common(g, "config", "seed", "out", "resolution", "force")
    g.add_argument("--frames", type=int, default=None)
    g.add_argument("--disparity", type=float, default=None)
    g.add_argument("--blobs", type=int, default=None)
    g.add_argument("--n-sequences", type=int, default=None, dest="n_sequences")
    g.set_defaults(func=cmd_gen_data)

    f = sub.add_parser("flow", help="convert raw frames to optical-flow frames")
    _add_common(f, "config", "out", "resolution")
    f.add_argument("--data", required=True, help="dataset dir holding left/ and right/")
    f.set_defaults(func=cmd_flow)

    t = sub.add_parser("train", help="train a matcher (and optionally DenseDelay)")
    _add_common(t, "config", "seed", "out", "resolution", "input", "matcher",
                "delay", "paper")
    t.add_argument("--data", help="dataset dir holding left/ and right/")
    t.add_argument("--synthetic", type=int, default=None,
                   help="render a synthetic training set from this seed")
    t.add_argument("--resume", action="store_true",
                   help="continue training the model already in --out")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sync", help="estimate the delay between two frame dirs")
    _add_common(s, "config", "seed", "out", "resolution", "input", "matcher", "delay")
    s.add_argument("--left", required=True, help="left frame directory")
    s.add_argument("--right", required=True, help="right frame directory")
    s.add_argument("--model", help="trained matcher file (from vidsync train)")
    s.add_argument("--dense-model", help="trained DenseDelay file", dest="dense_model")
    s.set_defaults(func=cmd_sync)

    e = sub.add_parser("evaluate", help="run an experiment grid")
    _add_common(e, "config", "seed", "out", "force")
    e.set_defaults(func=cmd_evaluate)

    pl = sub.add_parser("plot", help="re-render results.svg from a results.csv")
    pl.add_argument("--results", required=True)
    pl.add_argument("--out", default=None, help="output SVG path")
    pl.set_defaults(func=cmd_plot)
    return p


def _run_config(args, extra_overrides=()) -> RunConfig:
    file_values = parse_kv_file(args.config) if getattr(args, "config", None) else {}
    keys = ("resolution", "input", "matcher", "delay", "seed", "frames",
            "disparity", "blobs", "n_sequences")
    overrides = {k: getattr(args, k) for k in keys if hasattr(args, k)}
    for k, v in extra_overrides:
        overrides[k] = v
    cfg = build_run_config(file_values, overrides)
    if getattr(args, "paper_defaults", False):
        cfg.apply_paper_defaults()
        if args.resolution is not None:
            cfg.resolution = args.resolution
    cfg.validate()
    return cfg


def _save_frame_png(frame: D.ImageFrame, path: Path):
    arr = np.round(frame.pixels * 255.0).astype(np.uint8)
    if arr.shape[2] == 1:
        Image.fromarray(arr[:, :, 0], mode="L").save(path)
    else:
        Image.fromarray(arr, mode="LA").save(path)


def _write_stream(frames, directory: Path):
    directory.mkdir(parents=True, exist_ok=True)
    for f in frames:
        _save_frame_png(f, directory / f"{f.index:05d}.png")


def cmd_gen_data(args) -> int:
    cfg = _run_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene = D.SceneConfig(resolution=cfg.resolution, n_frames=cfg.frames,
                          disparity=cfg.disparity, n_blobs=cfg.blobs,
                          noise=cfg.noise)
    left, right = D.render_synthetic_stereo(scene, seed=cfg.seed)
    _write_stream(left, out / "left")
    _write_stream(right, out / "right")

    records = []
    seqs = D.make_sequence_pairs(left, right, cfg.n_sequences, seed=cfg.seed)
    for i, sp in enumerate(seqs):
        records.append({"kind": "sequence", "split": "eval", "idx": i,
                        "left": sp.left[0].index, "right": sp.right[0].index,
                        "offset": sp.true_delay})
    pairs = D.make_pairs(left, right, cfg.n_pairs // 2,
                         cfg.n_pairs - cfg.n_pairs // 2, seed=cfg.seed)
    for i, pr in enumerate(pairs):
        records.append({"kind": "pair", "split": "train", "idx": i,
                        "left": pr.left.index, "right": pr.right.index,
                        "offset": pr.offset})
    trips = D.make_triplets(left, right, cfg.n_triplets, seed=cfg.seed)
    for i, tr in enumerate(trips):
        records.append({"kind": "triplet", "split": "train", "idx": i,
                        "left": tr.anchor.index, "right": tr.positive.index,
                        "offset": tr.offset})
    D.write_manifest(out / "manifest.csv", records)
    print(f"wrote {len(left)}+{len(right)} frames and manifest.csv under {out}")
    return 0


def cmd_flow(args) -> int:
    cfg = _run_config(args)
    root = Path(args.data)
    out = Path(args.out)
    params = cfg.flow_params()
    for side in ("left", "right"):
        frames = D.load_frames(root / side, cfg.resolution)
        flows = D.frames_to_flow_frames(frames, cfg.resolution, params)
        _write_stream(flows, out / side)
        print(f"{side}: {len(flows)} flow frames")
    return 0


def _load_streams(cfg: RunConfig, args):
    if getattr(args, "synthetic", None) is not None:
        scene = D.SceneConfig(resolution=cfg.resolution, n_frames=cfg.frames,
                              disparity=cfg.disparity, n_blobs=cfg.blobs,
                              noise=cfg.noise)
        left, right = D.render_synthetic_stereo(scene, seed=args.synthetic)
    elif getattr(args, "data", None):
        root = Path(args.data)
        left = D.load_frames(root / "left", cfg.resolution)
        right = D.load_frames(root / "right", cfg.resolution)
    else:
        raise ConfigError("need --data DIR or --synthetic SEED")
    if cfg.input == "flow":
        params = cfg.flow_params()
        left = D.frames_to_flow_frames(left, cfg.resolution, params)
        right = D.frames_to_flow_frames(right, cfg.resolution, params)
    return left, right


def cmd_train(args) -> int:
    cfg = _run_config(args)
    if cfg.matcher == "oracle":
        raise ConfigError("the oracle matcher needs no training")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model_path = out / "matcher.vsp"
    left, right = _load_streams(cfg, args)
    in_channels = left[0].channels

    if args.resume:
        if not model_path.exists():
            raise DataError(f"--resume: no model at {model_path}")
        model, meta = load_matcher(model_path)
        if (meta["kind"] != ("siamese" if cfg.matcher == "siamese" else "triplet")
                or meta.get("distance") not in (None, getattr(model, "distance_kind", None))
                or meta["in_channels"] != in_channels
                or meta.get("resolution") not in (None, cfg.resolution)
                or meta.get("input") not in (None, cfg.input)):
            raise DataError(
                f"--resume: stored model metadata {meta} does not match the "
                f"requested configuration")
    else:
        model = build_matcher(cfg.matcher, in_channels=in_channels, seed=cfg.seed)

    epochs, batch, lr = cfg.training_schedule()
    if cfg.matcher == "siamese":
        pairs = D.make_pairs(left, right, cfg.n_pairs // 2,
                             cfg.n_pairs - cfg.n_pairs // 2, seed=cfg.seed)
        logrec = train_siamese(model, pairs, epochs=epochs, batch_size=batch,
                               lr=lr, seed=cfg.seed)
    else:
        trips = D.make_triplets(left, right, cfg.n_triplets, seed=cfg.seed)
        logrec = train_triplet(model, trips, epochs=epochs, batch_size=batch,
                               lr=lr, seed=cfg.seed)
    save_matcher(model, model_path, resolution=cfg.resolution, input_kind=cfg.input)
    logrec.write_csv(out / "train_log.csv")
    print(f"trained {model.tag} for {epochs} epochs, "
          f"final loss {logrec.epoch_losses[-1]:.6f}")

    if cfg.delay == "dense":
        seqs = D.make_sequence_pairs(left, right, cfg.n_matrices, seed=cfg.seed)
        mats = [build_matching_matrix(model, sp) for sp in seqs]
        labels = [delay_to_class(sp.true_delay) for sp in seqs]
        dmodel = DenseDelayModel(seed=cfg.seed)
        dlog = train_densedelay(dmodel, mats, labels, epochs=cfg.dense_epochs,
                                lr=cfg.dense_lr, batch_size=cfg.dense_batch,
                                seed=cfg.seed)
        dmodel.params.save(out / "densedelay.vsp")
        dlog.write_csv(out / "dense_log.csv")
        print(f"trained DenseDelay for {cfg.dense_epochs} epochs, "
              f"final loss {dlog.epoch_losses[-1]:.6f}")
    return 0


def _load_sync_frames(cfg: RunConfig, directory: str):
    want = D.SEQUENCE_LENGTH + (1 if cfg.input == "flow" else 0)
    frames = D.load_frames(directory, cfg.resolution)
    if len(frames) < want:
        raise DataError(f"{directory}: need at least {want} frames for "
                        f"input={cfg.input}, found {len(frames)}")
    frames = frames[:want]
    if cfg.input == "flow":
        frames = D.frames_to_flow_frames(frames, cfg.resolution, cfg.flow_params())
    return frames


def cmd_sync(args) -> int:
    cfg = _run_config(args)
    if args.model:
        model, meta = load_matcher(args.model)
        if meta.get("resolution") not in (None, cfg.resolution):
            raise DataError(f"model was trained at resolution {meta['resolution']}, "
                            f"requested {cfg.resolution}")
        if meta.get("input") not in (None, cfg.input):
            raise DataError(f"model was trained on input={meta['input']}, "
                            f"requested input={cfg.input}")
    else:
        if cfg.matcher != "oracle":
            raise ConfigError(f"matcher {cfg.matcher!r} needs --model FILE "
                              f"(or use --matcher oracle)")
        model = build_matcher("oracle")

    left = _load_sync_frames(cfg, args.left)
    right = _load_sync_frames(cfg, args.right)
    seq = D.SequencePair(left=left[:D.SEQUENCE_LENGTH],
                         right=right[:D.SEQUENCE_LENGTH], true_delay=0)
    matrix = build_matching_matrix(model, seq)
    if cfg.delay == "dense":
        if not args.dense_model:
            raise ConfigError("--delay dense needs --dense-model FILE")
        dmodel = DenseDelayModel()
        dmodel.params.load_values_from(ParamSet.load(args.dense_model))
        est = densedelay_estimate(dmodel, matrix)
    else:
        est = heatmap_estimate(matrix)

    record = {
        "delay": est.delay,
        "confidence": round(est.confidence, 6),
        "method": est.method,
        "matcher": model.tag,
        "input": cfg.input,
        "resolution": cfg.resolution,
        "left": str(args.left),
        "right": str(args.right),
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sync.json", "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"delay {est.delay:+d}  confidence {est.confidence:.3f}  "
          f"method {est.method}")
    return 0


def cmd_evaluate(args) -> int:
    if not args.config:
        raise ConfigError("evaluate needs --config FILE with the grid definition")
    values = parse_kv_file(args.config)
    overrides = {"seed": args.seed} if args.seed is not None else {}
    grid = build_grid_config(values, overrides)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "results.csv"
    svg_path = out / "results.svg"
    for path in (csv_path, svg_path):
        if path.exists() and not args.force:
            raise ConfigError(f"{path} exists; pass --force to overwrite")
    reports = run_experiment(grid, progress=lambda msg: print(msg, flush=True))
    write_reports_csv(reports, csv_path)
    emit_plot(reports, svg_path)
    print(f"wrote {csv_path} and {svg_path} ({len(reports)} rows)")
    return 0


def cmd_plot(args) -> int:
    reports = read_reports_csv(args.results)
    out = args.out or str(Path(args.results).with_suffix(".svg"))
    emit_plot(reports, out)
    print(f"wrote {out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
