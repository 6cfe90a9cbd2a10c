"""Per-object and per-image uncertainty scores for every strategy.

An object's classification uncertainty is w1 * w2 * (1 - P) for its
predicted category; its regression uncertainty comes from the size
density model. An image scores the sum of its objects' contributions;
the sum is order-canonicalized so scores are exactly permutation
invariant.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import IO, Iterable, Sequence

import numpy as np

from .dataset import Detection
from .density import GmmModel, log_density_many, regression_uncertainty
from .errors import DomainError
from .weights import CategoryWeightTable

DEFAULT_MIN_SCORE = 0.05


class Strategy(Enum):
    RANDOM = "random"
    LC = "lc"
    WC = "wc"
    WCR = "wcr"


@dataclass(frozen=True)
class ObjectScore:
    detection: Detection
    u_c: float
    u_r: float

    @property
    def combined(self) -> float:
        return self.u_c * self.u_r


@dataclass(frozen=True)
class ImageScoreReport:
    image_id: str
    strategy: Strategy
    u_s: float
    object_count: int
    objects: tuple[ObjectScore, ...] = ()


def _canonical_sum(values: Iterable[float]) -> float:
    """Kahan-compensated sum over sorted contributions (permutation exact)."""
    total = 0.0
    comp = 0.0
    for v in sorted(values):
        y = v - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total


def _check_category(det: Detection, table: CategoryWeightTable) -> None:
    if not 0 <= det.category < table.cat_count:
        raise DomainError(f"detection category {det.category} not in weight table")


def _u_r_values(detections: Sequence[Detection], model: GmmModel) -> list[float]:
    if not detections:
        return []
    sizes = np.asarray(
        [(max(d.w, d.h), min(d.w, d.h)) for d in detections], dtype=np.float64
    )
    raws = log_density_many(model, sizes)
    return [regression_uncertainty(float(r)) for r in raws]


def object_uncertainty(det: Detection, table: CategoryWeightTable, model: GmmModel) -> ObjectScore:
    _check_category(det, table)
    if not 0.0 <= det.score <= 1.0:
        raise DomainError(f"detection score {det.score} outside [0, 1]")
    u_c = table.w1[det.category] * table.w2[det.category] * (1.0 - det.score)
    u_r = _u_r_values([det], model)[0]
    return ObjectScore(detection=det, u_c=u_c, u_r=u_r)


def image_score_wcr(
    image_id: str,
    detections: Sequence[Detection],
    table: CategoryWeightTable,
    model: GmmModel,
) -> ImageScoreReport:
    u_rs = _u_r_values(detections, model)
    objects = []
    for det, u_r in zip(detections, u_rs):
        _check_category(det, table)
        u_c = table.w1[det.category] * table.w2[det.category] * (1.0 - det.score)
        objects.append(ObjectScore(det, u_c, u_r))
    u_s = _canonical_sum(o.combined for o in objects)
    return ImageScoreReport(image_id, Strategy.WCR, u_s, len(objects), tuple(objects))


def image_score_wc(
    image_id: str, detections: Sequence[Detection], table: CategoryWeightTable
) -> ImageScoreReport:
    objects = []
    for det in detections:
        _check_category(det, table)
        u_c = table.w1[det.category] * table.w2[det.category] * (1.0 - det.score)
        objects.append(ObjectScore(det, u_c, 1.0))
    u_s = _canonical_sum(o.combined for o in objects)
    return ImageScoreReport(image_id, Strategy.WC, u_s, len(objects), tuple(objects))


def image_score_lc(image_id: str, detections: Sequence[Detection]) -> ImageScoreReport:
    objects = [ObjectScore(det, 1.0 - det.score, 1.0) for det in detections]
    u_s = _canonical_sum(o.combined for o in objects)
    return ImageScoreReport(image_id, Strategy.LC, u_s, len(objects), tuple(objects))


def score_pool(
    pool_ids: Sequence[str],
    detections_by_image: dict[str, list[Detection]],
    table: CategoryWeightTable | None,
    model: GmmModel | None,
    strategy: Strategy,
    min_score: float = DEFAULT_MIN_SCORE,
) -> list[ImageScoreReport]:
    """Score every pool image under one strategy, ordered by image_id.

    Detections below min_score are excluded before summation; images
    without detections score zero.
    """
    if strategy is Strategy.RANDOM:
        raise DomainError("RANDOM is a selection rule, not a scoring strategy")
    if strategy in (Strategy.WC, Strategy.WCR) and table is None:
        raise DomainError(f"strategy {strategy.value} needs a weight table")
    if strategy is Strategy.WCR and model is None:
        raise DomainError("strategy wcr needs a fitted density model")
    reports = []
    for image_id in sorted(pool_ids):
        dets = [
            d for d in detections_by_image.get(image_id, []) if d.score >= min_score
        ]
        if strategy is Strategy.LC:
            report = image_score_lc(image_id, dets)
        elif strategy is Strategy.WC:
            report = image_score_wc(image_id, dets, table)
        else:
            report = image_score_wcr(image_id, dets, table, model)
        reports.append(report)
    return reports


def write_score_csv(reports: Sequence[ImageScoreReport], stream: IO, meta_line: str | None = None) -> None:
    """Ranked export; rank 1 is the highest score, ties by ascending id."""
    if meta_line:
        stream.write(f"# {meta_line}\n")
    stream.write("image_id,strategy,u_s,object_count,rank\n")
    ranked = sorted(reports, key=lambda r: (-r.u_s, r.image_id))
    for rank, r in enumerate(ranked, start=1):
        stream.write(f"{r.image_id},{r.strategy.value},{r.u_s!r},{r.object_count},{rank}\n")
