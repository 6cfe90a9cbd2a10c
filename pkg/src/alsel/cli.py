"""Command-line surface binding the modules into reproducible experiments.

Exit codes: 0 success, 1 domain error (invariant violation), 2 usage or
I/O error. Every output embeds the config digest and tool version, so a
rerun with an identical config is byte-identical.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .config import RunConfig, build_config
from .dataset import (
    DatasetIndex,
    parse_detections,
    parse_ground_truth,
    serialize_ground_truth,
    tile_dataset,
    write_tiles_csv,
)
from .density import fit_gmm, select_k
from .errors import DomainError
from .evalmap import evaluate, write_eval_csv
from .harness import (
    run_closed_loop,
    skill_model_from_config,
    synth_spec_from_config,
    write_curve_csv,
)
from .loop import (
    IterationState,
    batch_size_for,
    diff_histories,
    load_state,
    mark_double_weights,
    select_random,
    write_weight_manifest,
)
from .scoring import Strategy, score_pool, write_score_csv
from .simdet import simulate_detections, synth_dataset
from .weights import build_weight_table, write_weight_table_csv

import numpy as np

from .dataset import LabelState


def _meta(cfg: RunConfig) -> str:
    return f"config={cfg.digest()} version={__version__}"


def _load_index(cfg: RunConfig) -> DatasetIndex:
    if cfg.ground_truth is None:
        raise DomainError("a ground-truth manifest is required (ground_truth)")
    if cfg.categories is None:
        raise DomainError("the category list must be declared (categories)")
    with open(cfg.ground_truth, "rb") as fh:
        return parse_ground_truth(fh, cfg.categories)


def _apply_labeled(cfg: RunConfig, index: DatasetIndex) -> list[str]:
    if cfg.labeled_ids is None:
        return []
    labeled = [
        line.strip() for line in Path(cfg.labeled_ids).read_text().splitlines() if line.strip()
    ]
    for image_id in labeled:
        if image_id not in index.images:
            raise DomainError(f"labeled id {image_id!r} not in the manifest")
        index.label_state[image_id] = LabelState.LABELED
    return labeled


def _out_stream(args):
    return open(args.out, "w") if args.out else sys.stdout


def _labeled_features(index: DatasetIndex) -> np.ndarray:
    return np.asarray(
        [(max(o.w, o.h), min(o.w, o.h)) for o in index.labeled_objects()], dtype=np.float64
    )


def _detections_for(cfg: RunConfig, index: DatasetIndex, labeled, target_ids):
    if cfg.detections is not None:
        with open(cfg.detections, "rb") as fh:
            return parse_detections(fh, index)
    return simulate_detections(
        index, labeled, target_ids, skill_model_from_config(cfg), cfg.seed_simdet
    )


def cmd_stats(cfg: RunConfig, args) -> int:
    index = _load_index(cfg)
    _apply_labeled(cfg, index)
    table = build_weight_table(index, cfg.effective_w1_floor)
    with _out_stream(args) as out:
        write_weight_table_csv(table, out, _meta(cfg))
    return 0


def _scored_reports(cfg: RunConfig, index: DatasetIndex):
    labeled = _apply_labeled(cfg, index)
    strategy = Strategy(cfg.strategy)
    if strategy is Strategy.RANDOM:
        raise DomainError("scoring needs a non-random strategy (lc, wc, wcr)")
    pool = index.pool_ids()
    detections = _detections_for(cfg, index, labeled, pool)
    table = build_weight_table(index, cfg.effective_w1_floor)
    model = None
    if strategy is Strategy.WCR:
        features = _labeled_features(index)
        if features.size == 0:
            raise DomainError("no labeled objects to fit the size density on")
        k_max = min(cfg.k_max, features.shape[0])
        k = select_k(features, min(cfg.k_min, k_max), k_max, cfg.seed_gmm)
        model = fit_gmm(features, k, cfg.seed_gmm).model
    return score_pool(pool, detections, table, model, strategy, cfg.min_score)


def cmd_score(cfg: RunConfig, args) -> int:
    index = _load_index(cfg)
    reports = _scored_reports(cfg, index)
    with _out_stream(args) as out:
        write_score_csv(reports, out, _meta(cfg))
    return 0


def cmd_select(cfg: RunConfig, args) -> int:
    index = _load_index(cfg)
    strategy = Strategy(cfg.strategy)
    n = len(index.images)
    if strategy is Strategy.RANDOM:
        labeled = _apply_labeled(cfg, index)
        state = IterationState(
            index=index, labeled=labeled, pool=index.pool_ids(), k=0, t=0,
            init_fraction=cfg.init_fraction, batch_fraction=cfg.batch_fraction,
            seed=cfg.seed_init,
        )
        selected = select_random(
            state, batch_size_for(n, cfg.batch_fraction, len(state.pool)), cfg.seed_random
        )
    else:
        reports = _scored_reports(cfg, index)
        ranked = sorted(reports, key=lambda r: (-r.u_s, r.image_id))
        size = batch_size_for(n, cfg.batch_fraction, len(ranked))
        selected = [r.image_id for r in ranked[:size]]
    with _out_stream(args) as out:
        for image_id in selected:
            out.write(image_id + "\n")
    return 0


def cmd_loop(cfg: RunConfig, args) -> int:
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_index = None
    val_index = None
    if cfg.ground_truth is not None:
        train_index = _load_index(cfg)
        val_index = train_index  # no held-out set supplied: resubstitution curve
    state, curve = run_closed_loop(cfg, train_index=train_index, val_index=val_index, out_dir=out_dir)
    with open(out_dir / "learning_curve.csv", "w") as fh:
        write_curve_csv([curve], state.index.categories, fh, _meta(cfg))
    return 0


def cmd_double_weights(cfg: RunConfig, args) -> int:
    index = synth_dataset(synth_spec_from_config(cfg), cfg.seed_synth) if cfg.ground_truth is None else _load_index(cfg)
    if not args.state:
        raise DomainError("double-weights needs a completed loop state (--state)")
    with open(args.state) as fh:
        state = load_state(fh, index)
    detections = _detections_for(cfg, index, state.labeled, state.labeled)
    reports = score_pool(state.labeled, detections, None, None, Strategy.LC, cfg.min_score)
    manifest = mark_double_weights(reports, cfg.double_weight_fraction)
    with _out_stream(args) as out:
        write_weight_manifest(manifest, out, _meta(cfg))
    return 0


def cmd_tiles(cfg: RunConfig, args) -> int:
    index = _load_index(cfg)
    tiles, tiled = tile_dataset(index, cfg.window, cfg.stride, cfg.min_inside_fraction)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "tiles.csv", "w") as fh:
        write_tiles_csv(tiles, fh, _meta(cfg))
    with open(out_dir / "tiles.jsonl", "w") as fh:
        serialize_ground_truth(tiled, fh, {"config": cfg.digest(), "version": __version__})
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    index = _load_index(cfg)
    if cfg.detections is None:
        raise DomainError("eval needs a detections file (detections)")
    with open(cfg.detections, "rb") as fh:
        detections = parse_detections(fh, index)
    report = evaluate(detections, index, iou_threshold=cfg.iou_threshold, mode=cfg.ap_mode)
    with _out_stream(args) as out:
        write_eval_csv(report, out, _meta(cfg))
    return 0


def cmd_synth(cfg: RunConfig, args) -> int:
    index = synth_dataset(synth_spec_from_config(cfg), cfg.seed_synth)
    with _out_stream(args) as out:
        serialize_ground_truth(index, out, {"config": cfg.digest(), "version": __version__})
    return 0


def cmd_diff(cfg: RunConfig, args) -> int:
    histories = []
    for path in (args.history_a, args.history_b):
        data = json.loads(Path(path).read_text())
        histories.append(data["history"] if isinstance(data, dict) else data)
    summary = diff_histories(histories[0], histories[1])
    with _out_stream(args) as out:
        out.write(f"# {_meta(cfg)}\n")
        for row in summary["per_iteration"]:
            out.write(
                f"iteration {row['k']}: shared={row['shared']} "
                f"only_a={row['only_a']} only_b={row['only_b']}\n"
            )
        out.write(
            f"total: shared={summary['total_shared']} "
            f"only_a={summary['total_only_a']} only_b={summary['total_only_b']} "
            f"different={summary['total_different']}\n"
        )
    return 0


def _parse_k_range(text: str) -> tuple[int, int]:
    try:
        lo, hi = text.split(":")
        return int(lo), int(hi)
    except ValueError as exc:
        raise DomainError(f"k-range must look like 1:8, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="alsel", description=__doc__)
    parser.add_argument("--version", action="version", version=f"alsel {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(func=func)
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--ground-truth")
        p.add_argument("--detections")
        p.add_argument("--labeled-ids")
        p.add_argument("--categories-file")
        p.add_argument("--strategy", choices=["random", "lc", "wc", "wcr"])
        p.add_argument("--out-dir")
        p.add_argument("--min-score", type=float)
        p.add_argument("--k-range", help="GMM component range, e.g. 1:8")
        p.add_argument("--window", type=int)
        p.add_argument("--stride", type=int)
        p.add_argument("--init-fraction", type=float)
        p.add_argument("--batch-fraction", type=float)
        p.add_argument("--iterations", type=int)
        for seed in ("init", "random", "gmm", "simdet", "synth"):
            p.add_argument(f"--seed-{seed}", type=int)
        return p

    add("stats", cmd_stats, help="per-category counts and imbalance weights")
    add("score", cmd_score, help="ranked uncertainty scores for the pool")
    add("select", cmd_select, help="pick the next annotation batch")
    add("loop", cmd_loop, help="run the full closed selection loop")
    p = add("double-weights", cmd_double_weights, help="mark top-uncertainty labeled images")
    p.add_argument("--state", help="loop state file")
    add("tiles", cmd_tiles, help="plan sliding-window tiles and clip annotations")
    add("eval", cmd_eval, help="VOC-style AP/mAP evaluation")
    add("synth", cmd_synth, help="generate a synthetic ground-truth manifest")
    p = add("diff", cmd_diff, help="selection overlap between two run histories")
    p.add_argument("history_a")
    p.add_argument("history_b")
    return parser


def _config_from_args(args) -> RunConfig:
    overrides = {
        "ground_truth": args.ground_truth,
        "detections": args.detections,
        "labeled_ids": args.labeled_ids,
        "strategy": args.strategy,
        "out_dir": args.out_dir,
        "min_score": args.min_score,
        "window": args.window,
        "stride": args.stride,
        "init_fraction": args.init_fraction,
        "batch_fraction": args.batch_fraction,
        "iterations": args.iterations,
        "seed_init": args.seed_init,
        "seed_random": args.seed_random,
        "seed_gmm": args.seed_gmm,
        "seed_simdet": args.seed_simdet,
        "seed_synth": args.seed_synth,
    }
    if args.k_range:
        overrides["k_min"], overrides["k_max"] = _parse_k_range(args.k_range)
    if args.categories_file:
        overrides["categories"] = tuple(
            line.strip()
            for line in Path(args.categories_file).read_text().splitlines()
            if line.strip()
        )
    return build_config(args.config, overrides)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config_from_args(args)
        return args.func(cfg, args)
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
