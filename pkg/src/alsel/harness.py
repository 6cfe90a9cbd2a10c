"""Closed-loop experiment harness: synthetic data, simulated detector, mAP curves.

Binds the selection loop to the synthetic detector and a held-out
validation set so learning curves can be produced entirely at desk
scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import IO, Sequence

from .config import RunConfig
from .dataset import DatasetIndex
from .evalmap import evaluate
from .loop import IterationState, LoopConfig, run_loop
from .scoring import Strategy
from .simdet import SkillModel, SynthSpec, category_skills, simulate_detections, synth_dataset


@dataclass(frozen=True)
class CurvePoint:
    iteration: int
    labeled_fraction: float
    strategy: str
    mean_ap: float
    per_category_ap: dict[str, float | None]


def synth_spec_from_config(cfg: RunConfig, images: int | None = None) -> SynthSpec:
    names = tuple(f"cat{i:02d}" for i in range(cfg.synth_categories))
    return SynthSpec(
        categories=names,
        images=cfg.synth_images if images is None else images,
        count_exponent=cfg.synth_exponent,
        mean_objects_per_image=cfg.synth_mean_objects,
        outlier_fraction=cfg.synth_outlier_fraction,
        empty_image_fraction=cfg.synth_empty_fraction,
    )


def skill_model_from_config(cfg: RunConfig) -> SkillModel:
    return SkillModel(
        half_saturation=cfg.skill_half_saturation,
        miss_floor=cfg.skill_miss_floor,
        fp_rate=cfg.skill_fp_rate,
        loc_noise=cfg.skill_loc_noise,
        confidence_concentration=cfg.skill_kappa,
    )


def loop_config_from_config(cfg: RunConfig, strategy: Strategy | None = None) -> LoopConfig:
    return LoopConfig(
        strategy=Strategy(cfg.strategy) if strategy is None else strategy,
        init_fraction=cfg.init_fraction,
        batch_fraction=cfg.batch_fraction,
        iterations=cfg.iterations,
        seed_init=cfg.seed_init,
        seed_random=cfg.seed_random,
        seed_gmm=cfg.seed_gmm,
        k_min=cfg.k_min,
        k_max=cfg.k_max,
        min_score=cfg.min_score,
        w1_floor=cfg.effective_w1_floor,
    )


def make_evaluator(
    train_index: DatasetIndex,
    val_index: DatasetIndex,
    skill_model: SkillModel,
    seed_simdet: int,
    iou_threshold: float = 0.5,
):
    """Metrics callback: detect on the validation set with train-derived skills."""
    val_ids = list(val_index.images)

    def evaluator(labeled_ids: Sequence[str]) -> dict:
        skills = category_skills(train_index, labeled_ids, skill_model)
        # common random numbers across labeled sets: curves vary only through skill
        detections = simulate_detections(
            val_index, labeled_ids, val_ids, skill_model, seed_simdet,
            skills=skills, stream_tag="eval",
        )
        report = evaluate(detections, val_index, iou_threshold=iou_threshold)
        return {"map": report.mean_ap, "per_category_ap": report.per_category_ap}

    return evaluator


def make_detector(train_index: DatasetIndex, skill_model: SkillModel, seed_simdet: int):
    def detector(labeled_ids: Sequence[str], pool_ids: Sequence[str]):
        return simulate_detections(train_index, labeled_ids, pool_ids, skill_model, seed_simdet)

    return detector


def run_closed_loop(
    cfg: RunConfig,
    strategy: Strategy | None = None,
    train_index: DatasetIndex | None = None,
    val_index: DatasetIndex | None = None,
    out_dir: str | Path | None = None,
) -> tuple[IterationState, list[CurvePoint]]:
    """Run the full loop on synthetic data and return the learning curve."""
    if train_index is None:
        train_index = synth_dataset(synth_spec_from_config(cfg), cfg.seed_synth)
    if val_index is None:
        val_index = synth_dataset(
            synth_spec_from_config(cfg, images=cfg.eval_images), cfg.seed_synth + 1, id_prefix="val"
        )
    skill_model = skill_model_from_config(cfg)
    loop_cfg = loop_config_from_config(cfg, strategy)
    state = run_loop(
        train_index,
        loop_cfg,
        make_detector(train_index, skill_model, cfg.seed_simdet),
        evaluator=make_evaluator(
            train_index, val_index, skill_model, cfg.seed_simdet, cfg.iou_threshold
        ),
        out_dir=out_dir,
        config_digest=cfg.digest(),
    )
    n = len(train_index.images)
    curve = []
    labeled = 0
    for entry in state.history:
        labeled += len(entry["selected"])
        metrics = entry.get("metrics", {})
        curve.append(
            CurvePoint(
                iteration=entry["k"],
                labeled_fraction=labeled / n,
                strategy=loop_cfg.strategy.value,
                mean_ap=metrics.get("map", float("nan")),
                per_category_ap=metrics.get("per_category_ap", {}),
            )
        )
    return state, curve


def full_annotation_map(cfg: RunConfig, train_index: DatasetIndex, val_index: DatasetIndex) -> float:
    """mAP of the simulated detector with every train image labeled."""
    evaluator = make_evaluator(
        train_index, val_index, skill_model_from_config(cfg), cfg.seed_simdet, cfg.iou_threshold
    )
    return evaluator(list(train_index.images))["map"]


def fraction_to_reach(curve: Sequence[CurvePoint], target_map: float) -> float:
    """Smallest labeled fraction on the curve whose mAP reaches the target.

    Returns the fraction just past the curve's end (1.0 + one step) when
    the target is never reached, so comparisons still order correctly.
    """
    for point in curve:
        if point.mean_ap >= target_map:
            return point.labeled_fraction
    return curve[-1].labeled_fraction + (
        curve[-1].labeled_fraction - curve[-2].labeled_fraction if len(curve) > 1 else 1.0
    )


def write_curve_csv(
    curves: Sequence[Sequence[CurvePoint]],
    categories: Sequence[str],
    stream: IO,
    meta_line: str | None = None,
) -> None:
    if meta_line:
        stream.write(f"# {meta_line}\n")
    cat_cols = ",".join(f"ap_{c}" for c in categories)
    stream.write(f"iteration,labeled_fraction,strategy,map,{cat_cols}\n")
    for curve in curves:
        for p in curve:
            aps = ",".join(
                "" if p.per_category_ap.get(c) is None else repr(p.per_category_ap[c])
                for c in categories
            )
            stream.write(
                f"{p.iteration},{p.labeled_fraction!r},{p.strategy},{p.mean_ap!r},{aps}\n"
            )
