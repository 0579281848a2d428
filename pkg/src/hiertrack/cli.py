"""Command-line entry point: ``hiertrack {track,eval,synth,train,gap}``.

Exit codes: 0 success, 1 invalid input, 2 internal invariant violation.
Reports go to stdout; logs and diagnostics go to stderr. Values from
``--config`` are overridden by explicit flags.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .evaluation import evaluate, format_gap_table, match_detections_to_gt, reid_gap_analysis
from .features import EdgeLayout, build_features
from .hierarchy import GraphDump, run_hierarchy, training_graphs
from .ingest import (
    ParseError,
    SequenceBundle,
    load_config,
    load_sequence,
    load_sequence_dir,
    read_tracks,
    write_tracks,
)
from .model import EngineConfig, validate_trackset
from .rounding import FlowConstraintError
from .scorer import (
    TrainConfig,
    TrainingDiverged,
    WeightsError,
    edge_accuracy,
    init_weights,
    load_weights,
    prior_weights,
    save_weights,
    train_scorer,
)

log = logging.getLogger("hiertrack")

SCORER_FLAGS = {"logistic": "logistic", "mpn": "message_passing"}


class InvariantViolation(RuntimeError):
    pass


def _add_engine_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON engine config; flags below override it")
    p.add_argument("--levels", type=int, help="hierarchy depth L (window = 2**L frames)")
    p.add_argument("--k", type=int, dest="prune_k", help="K for nearest-candidate edge pruning")
    p.add_argument("--spatial-mode", choices=("field", "frame"))
    p.add_argument("--scorer", choices=sorted(SCORER_FLAGS))
    p.add_argument("--rounding", choices=("greedy", "exact"))
    p.add_argument("--seed", type=int)


def _engine_config(args) -> EngineConfig:
    cfg = load_config(args.config) if args.config else EngineConfig()
    over = {}
    for name in ("levels", "prune_k", "spatial_mode", "rounding", "seed"):
        v = getattr(args, name, None)
        if v is not None:
            over[name] = v
    if getattr(args, "scorer", None):
        over["scorer"] = SCORER_FLAGS[args.scorer]
    return cfg.replace(**over) if over else cfg


def _load_bundle(args, config: EngineConfig) -> SequenceBundle:
    if args.sequence:
        return load_sequence_dir(args.sequence, config)
    if not args.det or not args.features:
        raise ValueError("give --sequence DIR or both --det and --features")
    return load_sequence(args.det, args.features, args.homography, getattr(args, "gt", None), config)


def _sequence_flags(p: argparse.ArgumentParser, gt: bool = False) -> None:
    p.add_argument("--sequence", help="directory holding det.txt, features.tsv, homography.csv, gt.txt")
    p.add_argument("--det", help="MOT detection file")
    p.add_argument("--features", help="feature sidecar (.tsv)")
    p.add_argument("--homography", help="per-frame frame-to-field homographies (.csv)")
    if gt:
        p.add_argument("--gt", help="MOT ground-truth file")


# ---------------------------------------------------------------------------
# Commands


def cmd_track(args) -> int:
    config = _engine_config(args)
    bundle = _load_bundle(args, config)
    feats = build_features(bundle, config)
    layout = EdgeLayout.from_config(config, feats.image_diag)
    if args.weights:
        weights = load_weights(args.weights)
    elif config.scorer == "logistic":
        log.warning("no --weights given; using the untrained prior logistic scorer")
        weights = prior_weights(layout.names, config.levels)
    else:
        raise WeightsError("the message-passing scorer needs --weights")
    dump = GraphDump(args.debug_graphs) if args.debug_graphs else None
    tracks = run_hierarchy(feats, weights, config, bundle.info, dump, threads=args.threads)
    problems = validate_trackset(tracks)
    if problems:
        raise InvariantViolation("; ".join(problems[:5]))
    write_tracks(tracks, args.out)
    lengths = [len(p) for p in tracks.tracks.values()]
    mean_len = float(np.mean(lengths)) if lengths else 0.0
    print(f"tracks={len(tracks)} detections={tracks.n_points} mean_length={mean_len:.2f} output={args.out}")
    return 0


def cmd_eval(args) -> int:
    pred = read_tracks(args.pred)
    gt = read_tracks(args.gt)
    pf, gf = pred.frames(), gt.frames()
    if pf and gf and (pf[0] != gf[0] or pf[-1] != gf[-1]):
        log.warning("frame ranges differ (pred %d-%d, gt %d-%d); scoring over their union",
                    pf[0], pf[-1], gf[0], gf[-1])
    report = evaluate(pred, gt)
    sys.stdout.write(report.to_kv() if args.format == "kv" else report.to_text())
    return 0


def cmd_synth(args) -> int:
    from .synth import generate, load_spec, preset

    spec = load_spec(args.spec) if args.spec else preset(args.preset)
    seq = generate(spec, seed=args.seed, out_dir=args.out)
    print(f"scenario={spec.name} seed={args.seed} frames={spec.n_frames} "
          f"identities={spec.n_identities} detections={len(seq.bundle.detections)} "
          f"noise={','.join(f'{v:.6g}' for v in seq.noise)} output={args.out}")
    return 0


def cmd_train(args) -> int:
    config = _engine_config(args)
    graphs = []
    layout = None
    for directory in args.sequence:
        bundle = load_sequence_dir(directory, config)
        if bundle.gt is None:
            raise ValueError(f"{directory}: training needs gt.txt")
        feats = build_features(bundle, config)
        layout = EdgeLayout.from_config(config, feats.image_diag)
        gt_of = match_detections_to_gt(bundle.detections, bundle.gt)
        graphs.extend(training_graphs(feats, gt_of, config, bundle.n_frames))
    if args.init:
        init = load_weights(args.init)
    else:
        init = init_weights(config.scorer, layout.names, config.levels, hidden=args.hidden,
                            rounds=config.mp_rounds, seed=config.seed)
    tcfg = TrainConfig(lr=args.lr, stage_iters=args.stage_iters, epochs=args.epochs,
                       batch_graphs=args.batch, seed=config.seed)
    result = train_scorer(graphs, init, tcfg, log_path=args.log)
    save_weights(result.weights, args.out)
    acc = edge_accuracy(result.weights, graphs, config.edge_threshold)
    print(f"graphs={len(graphs)} final_loss={result.loss:.6f} edge_accuracy={100 * acc:.2f} output={args.out}")
    return 0


def cmd_gap(args) -> int:
    config = EngineConfig()
    bundle = _load_bundle(args, config)
    if bundle.gt is None:
        raise ValueError("gap analysis needs ground truth (--gt or gt.txt)")
    steps = [int(s) for s in args.steps.split(",") if s.strip()]
    if any(s < 0 for s in steps):
        raise ValueError("gap steps must be non-negative")
    sys.stdout.write(format_gap_table(reid_gap_analysis(bundle, steps)))
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hiertrack", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more log output on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("track", help="track a sequence and write MOT tracks")
    _sequence_flags(p)
    _add_engine_flags(p)
    p.add_argument("--weights", help="scorer weights file (JSON)")
    p.add_argument("--out", required=True, help="output MOT track file")
    p.add_argument("--debug-graphs", metavar="DIR", help="dump every solved graph as an edge list")
    p.add_argument("--threads", type=int, default=1, help="worker cap for window processing")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="HOTA / DetA / AssA of predicted tracks against ground truth")
    p.add_argument("pred", help="predicted MOT track file")
    p.add_argument("gt", help="ground-truth MOT track file")
    p.add_argument("--format", choices=("text", "kv"), default="text")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic sequence directory")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--spec", help="scenario JSON")
    src.add_argument("--preset", help="built-in scenario: tiny, soccer, hockey, occlusion")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit scorer weights on labelled sequences")
    p.add_argument("--sequence", action="append", required=True,
                   help="sequence directory with gt.txt (repeatable)")
    _add_engine_flags(p)
    p.add_argument("--init", help="start from these weights instead of a random init")
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--stage-iters", type=int, default=500)
    p.add_argument("--epochs", type=int, default=250)
    p.add_argument("--batch", type=int, default=32, help="graphs per minibatch")
    p.add_argument("--log", help="write the training log here")
    p.add_argument("--out", required=True, help="output weights file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gap", help="frame-gap re-identification accuracy")
    _sequence_flags(p, gt=True)
    p.add_argument("--steps", default="1,50,100,300", help="comma-separated frame gaps")
    p.set_defaults(func=cmd_gap)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s",
                        force=True)
    try:
        return args.func(args)
    except (FlowConstraintError, InvariantViolation) as exc:
        print(f"hiertrack: internal error: {exc}", file=sys.stderr)
        return 2
    except (ParseError, WeightsError, FileNotFoundError, TrainingDiverged, ValueError, OSError) as exc:
        print(f"hiertrack: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
