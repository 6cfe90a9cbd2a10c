"""Axis-aligned detection evaluation: IoU, greedy matching, AP, mAP.

VOC-style protocol: detections are ranked by confidence per category,
greedily matched to at most one ground-truth box each, and AP is the
area under the precision envelope (all-points by default, 11-point
available). Oriented boxes are evaluated on their axis-aligned hulls.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import IO, Mapping, Sequence

from .dataset import DatasetIndex, Detection, GroundTruthObject
from .errors import DomainError

DEFAULT_IOU_THRESHOLD = 0.5


@dataclass(frozen=True)
class MatchOutcome:
    """TP/FP flags in score order plus the ground-truth count."""

    flags: tuple[bool, ...]
    n_gt: int


@dataclass(frozen=True)
class EvalReport:
    per_category_ap: dict[str, float | None]  # None when the category has no ground truth
    mean_ap: float
    iou_threshold: float
    n_gt: dict[str, int]

    @property
    def defined_categories(self) -> list[str]:
        return [c for c, ap in self.per_category_ap.items() if ap is not None]


Box = tuple[float, float, float, float]  # (cx, cy, w, h)


def iou(a: Box, b: Box) -> float:
    ax0, ax1 = a[0] - a[2] / 2, a[0] + a[2] / 2
    ay0, ay1 = a[1] - a[3] / 2, a[1] + a[3] / 2
    bx0, bx1 = b[0] - b[2] / 2, b[0] + b[2] / 2
    by0, by1 = b[1] - b[3] / 2, b[1] + b[3] / 2
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union


def match_detections(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthObject],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> MatchOutcome:
    """Greedy single-image matching; dets must arrive sorted by descending score.

    Each detection claims the highest-IoU unmatched same-category ground
    truth with IoU >= threshold (TP) or is counted a false positive.
    """
    matched = [False] * len(gts)
    flags = []
    for det in dets:
        best_iou, best_j = 0.0, -1
        dbox = (det.cx, det.cy, det.w, det.h)
        for j, gt in enumerate(gts):
            if matched[j] or gt.category != det.category:
                continue
            v = iou(dbox, (gt.cx, gt.cy, gt.w, gt.h))
            if v > best_iou:
                best_iou, best_j = v, j
        if best_j >= 0 and best_iou >= iou_threshold:
            matched[best_j] = True
            flags.append(True)
        else:
            flags.append(False)
    return MatchOutcome(flags=tuple(flags), n_gt=len(gts))


def average_precision(flags: Sequence[bool], n_gt: int, mode: str = "all_points") -> float | None:
    """AP from TP/FP flags in score order; None when n_gt = 0 (excluded from mAP)."""
    if n_gt < 0:
        raise DomainError("n_gt must be >= 0")
    if n_gt == 0:
        return None
    tp = 0
    precisions = []
    recalls = []
    for i, flag in enumerate(flags, start=1):
        tp += bool(flag)
        precisions.append(tp / i)
        recalls.append(tp / n_gt)
    if mode == "all_points":
        # precision envelope, integrated over recall steps
        mrec = [0.0] + recalls + [recalls[-1] if recalls else 0.0]
        mpre = [0.0] + precisions + [0.0]
        for i in range(len(mpre) - 2, -1, -1):
            mpre[i] = max(mpre[i], mpre[i + 1])
        ap = 0.0
        for i in range(1, len(mrec)):
            ap += (mrec[i] - mrec[i - 1]) * mpre[i]
        return ap
    if mode == "11_point":
        ap = 0.0
        for r in (i / 10 for i in range(11)):
            candidates = [p for p, rec in zip(precisions, recalls) if rec >= r]
            ap += (max(candidates) if candidates else 0.0) / 11.0
        return ap
    raise DomainError(f"unknown AP mode {mode!r}")


def mean_ap(per_category_ap: Mapping[str, float | None]) -> float:
    defined = [ap for ap in per_category_ap.values() if ap is not None]
    if not defined:
        raise DomainError("no category has ground truth; mAP undefined")
    return sum(defined) / len(defined)


def evaluate(
    detections_by_image: Mapping[str, Sequence[Detection]],
    index: DatasetIndex,
    image_ids: Sequence[str] | None = None,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    mode: str = "all_points",
) -> EvalReport:
    """Evaluate detections against ground truth over the given images."""
    ids = list(index.images) if image_ids is None else list(image_ids)
    per_cat_ap: dict[str, float | None] = {}
    n_gt_by_cat: dict[str, int] = {}
    for cat, name in enumerate(index.categories):
        records = []  # (score, order, image_id, det)
        order = 0
        for image_id in ids:
            for det in detections_by_image.get(image_id, []):
                if det.category == cat:
                    records.append((-det.score, order, image_id, det))
                    order += 1
        records.sort(key=lambda r: (r[0], r[1]))
        gt_by_image = {
            image_id: [g for g in index.images[image_id].objects if g.category == cat]
            for image_id in ids
        }
        matched = {image_id: [False] * len(g) for image_id, g in gt_by_image.items()}
        n_gt = sum(len(g) for g in gt_by_image.values())
        flags = []
        for _, _, image_id, det in records:
            gts = gt_by_image[image_id]
            dbox = (det.cx, det.cy, det.w, det.h)
            best_iou, best_j = 0.0, -1
            for j, gt in enumerate(gts):
                if matched[image_id][j]:
                    continue
                v = iou(dbox, (gt.cx, gt.cy, gt.w, gt.h))
                if v > best_iou:
                    best_iou, best_j = v, j
            if best_j >= 0 and best_iou >= iou_threshold:
                matched[image_id][best_j] = True
                flags.append(True)
            else:
                flags.append(False)
        per_cat_ap[name] = average_precision(flags, n_gt, mode=mode)
        n_gt_by_cat[name] = n_gt
    return EvalReport(
        per_category_ap=per_cat_ap,
        mean_ap=mean_ap(per_cat_ap),
        iou_threshold=iou_threshold,
        n_gt=n_gt_by_cat,
    )


def write_eval_csv(report: EvalReport, stream: IO, meta_line: str | None = None) -> None:
    if meta_line:
        stream.write(f"# {meta_line}\n")
    stream.write("category,ap,n_gt\n")
    for name, ap in report.per_category_ap.items():
        ap_text = "" if ap is None else repr(ap)
        stream.write(f"{name},{ap_text},{report.n_gt[name]}\n")
    stream.write(f"mAP,{report.mean_ap!r},{sum(report.n_gt.values())}\n")
