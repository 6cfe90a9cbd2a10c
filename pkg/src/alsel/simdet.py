"""Synthetic dataset generator and a parametric detector stand-in.

The detector's per-category skill saturates with labeled object count:
s = n / (n + h). More labeled objects of a category raise its recall,
confidence, and localization precision, which is all the closed-loop
experiments need from a detector.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import DatasetIndex, Detection, GroundTruthObject, ImageRecord
from .errors import DomainError


@dataclass(frozen=True)
class SkillModel:
    half_saturation: float = 8.0  # labeled objects at which a category reaches skill 0.5
    miss_floor: float = 0.7  # fraction of objects missed at zero skill
    fp_rate: float = 2.0  # false positives per image at zero mean skill
    loc_noise: float = 8.0  # box-coordinate sigma in pixels at zero skill
    confidence_concentration: float = 25.0

    def __post_init__(self) -> None:
        if self.half_saturation <= 0:
            raise DomainError("half_saturation must be > 0")
        if not 0 <= self.miss_floor <= 1:
            raise DomainError("miss_floor must be in [0, 1]")
        if self.fp_rate < 0 or self.loc_noise < 0 or self.confidence_concentration <= 0:
            raise DomainError("rates must be non-negative, concentration positive")


@dataclass(frozen=True)
class SynthSpec:
    """Shape of a synthetic detection dataset with class imbalance.

    Category c's frequency is proportional to (c + 1)^-count_exponent,
    so earlier categories dominate. Each category has one size mode in
    (long, short) space; a declared fraction of boxes are size outliers.
    """

    categories: tuple[str, ...]
    images: int
    image_width: int = 1024
    image_height: int = 1024
    count_exponent: float = 1.5
    mean_objects_per_image: float = 6.0
    size_means: tuple[tuple[float, float], ...] | None = None
    size_spread: float = 0.2  # relative std around a category's size mode
    outlier_fraction: float = 0.05
    outlier_range: tuple[float, float] = (320.0, 900.0)
    empty_image_fraction: float = 0.55  # background tiles with no objects at all
    cluster_scale: float = 5.0  # frequent categories appear in dense per-image clusters

    def __post_init__(self) -> None:
        if self.images < 1 or len(self.categories) < 1:
            raise DomainError("need at least one image and one category")
        if not 0 <= self.outlier_fraction <= 1:
            raise DomainError("outlier_fraction must be in [0, 1]")
        if self.outlier_range[0] <= 0 or self.outlier_range[0] > self.outlier_range[1]:
            raise DomainError("outlier_range must be positive and ordered")
        if not 0 <= self.empty_image_fraction < 1:
            raise DomainError("empty_image_fraction must be in [0, 1)")
        if self.size_means is not None and len(self.size_means) != len(self.categories):
            raise DomainError("size_means must give one (long, short) pair per category")

    def resolved_size_means(self) -> np.ndarray:
        if self.size_means is not None:
            return np.asarray(self.size_means, dtype=np.float64)
        c = len(self.categories)
        longs = np.geomspace(16.0, 200.0, c)
        return np.stack([longs, longs * 0.5], axis=1)

    def category_probs(self) -> np.ndarray:
        ranks = np.arange(1, len(self.categories) + 1, dtype=np.float64)
        weights = ranks ** -self.count_exponent
        return weights / weights.sum()


def default_spec(
    categories: int = 15, images: int = 500, count_exponent: float = 1.5, outlier_fraction: float = 0.05
) -> SynthSpec:
    names = tuple(f"cat{i:02d}" for i in range(categories))
    return SynthSpec(
        categories=names,
        images=images,
        count_exponent=count_exponent,
        outlier_fraction=outlier_fraction,
    )


def synth_dataset(spec: SynthSpec, seed: int, id_prefix: str = "img") -> DatasetIndex:
    """Generate a deterministic dataset following the declared size and count laws.

    Objects arrive in per-category clusters whose mean size scales with
    the category's frequency, so frequent categories crowd into few
    images (dense small-vehicle pattern) while per-category totals still
    follow the power law.
    """
    rng = np.random.default_rng(seed)
    probs = spec.category_probs()
    # group-category draw is deflated by cluster size so expected totals stay power-law
    cluster_means = spec.cluster_scale * probs / probs[0]
    group_probs = probs / (1.0 + cluster_means)
    group_probs = group_probs / group_probs.sum()
    size_means = spec.resolved_size_means()
    max_side = max(spec.image_width, spec.image_height)
    if size_means.max() >= max_side and spec.outlier_range[0] >= max_side:
        raise DomainError("all boxes would exceed the image size")
    images: dict[str, ImageRecord] = {}
    expected_cluster = float(np.sum(group_probs * (1.0 + cluster_means)))
    group_mean = spec.mean_objects_per_image / expected_cluster
    for i in range(spec.images):
        image_id = f"{id_prefix}{i:05d}"
        n_groups = 0 if rng.random() < spec.empty_image_fraction else max(
            1, int(rng.poisson(group_mean))
        )
        cats: list[int] = []
        for _ in range(n_groups):
            group_cat = int(rng.choice(len(group_probs), p=group_probs))
            cluster = 1 + int(rng.poisson(cluster_means[group_cat]))
            cats.extend([group_cat] * cluster)
        objects = []
        for cat in cats:
            if rng.random() < spec.outlier_fraction:
                long = float(rng.uniform(*spec.outlier_range))
                short = long * float(rng.uniform(0.3, 0.9))
            else:
                mean_long, mean_short = size_means[cat]
                long = float(mean_long * np.exp(rng.normal(0.0, spec.size_spread)))
                short = float(mean_short * np.exp(rng.normal(0.0, spec.size_spread)))
                if short > long:
                    long, short = short, long
            long = min(max(long, 2.0), max_side - 1.0)
            short = min(max(short, 1.0), long)
            w, h = (long, short) if rng.random() < 0.5 else (short, long)
            objects.append(
                GroundTruthObject(
                    category=cat,
                    cx=float(rng.uniform(0, spec.image_width)),
                    cy=float(rng.uniform(0, spec.image_height)),
                    w=w,
                    h=h,
                    angle=float(rng.uniform(0.0, 180.0)),
                )
            )
        images[image_id] = ImageRecord(image_id, spec.image_width, spec.image_height, tuple(objects))
    return DatasetIndex(categories=spec.categories, images=images)


def skill(labeled_count: int, model: SkillModel) -> float:
    """Saturating skill in [0, 1): 0 with nothing labeled, 0.5 at half-saturation."""
    if labeled_count < 0:
        raise DomainError("labeled_count must be >= 0")
    return labeled_count / (labeled_count + model.half_saturation)


def _seed_ints(*parts: str) -> list[int]:
    return [
        int.from_bytes(hashlib.sha256(p.encode("utf-8")).digest()[:8], "big") for p in parts
    ]


def _labeled_counts(index: DatasetIndex, labeled_ids: Sequence[str]) -> np.ndarray:
    counts = np.zeros(index.cat_count, dtype=np.int64)
    for image_id in labeled_ids:
        for obj in index.images[image_id].objects:
            counts[obj.category] += 1
    return counts


def category_skills(index: DatasetIndex, labeled_ids: Sequence[str], model: SkillModel) -> np.ndarray:
    counts = _labeled_counts(index, labeled_ids)
    return np.array([skill(int(c), model) for c in counts])


def simulate_detections(
    index: DatasetIndex,
    labeled_ids: Sequence[str],
    target_ids: Sequence[str],
    model: SkillModel,
    seed: int,
    skills: np.ndarray | None = None,
    stream_tag: str | None = None,
) -> dict[str, list[Detection]]:
    """Emit detections for target images given the current labeled set.

    Deterministic given (seed, labeled set, target image ids); each image
    draws from its own derived substream so output is order-independent.
    Pass precomputed per-category skills to detect on a held-out index
    whose images are not the source of the labeled counts. A fixed
    stream_tag replaces the labeled-set digest in the substream key,
    giving common random numbers across labeled sets (smooth evaluation
    curves).
    """
    s = category_skills(index, labeled_ids, model) if skills is None else skills
    mean_skill = float(s.mean())
    state_digest = (
        hashlib.sha256(",".join(sorted(labeled_ids)).encode("utf-8")).hexdigest()
        if stream_tag is None
        else stream_tag
    )

    # false positives mimic a random dataset object: hallucinated category
    # frequency and size follow the global object law
    all_objects = [
        (obj.category, obj.w, obj.h) for rec in index.images.values() for obj in rec.objects
    ]
    result: dict[str, list[Detection]] = {}
    for image_id in sorted(target_ids):
        rng = np.random.default_rng([seed] + _seed_ints(state_digest, image_id))
        record = index.images[image_id]
        dets: list[Detection] = []
        for obj in record.objects:
            s_c = float(s[obj.category])
            if rng.random() >= 1.0 - model.miss_floor * (1.0 - s_c):
                continue
            mu = 0.3 + 0.65 * s_c
            kappa = model.confidence_concentration
            conf = float(rng.beta(mu * kappa, (1.0 - mu) * kappa))
            sigma = model.loc_noise * (1.0 - s_c)
            noise = rng.normal(0.0, sigma, size=4) if sigma > 0 else np.zeros(4)
            dets.append(
                Detection(
                    image_id=image_id,
                    category=obj.category,
                    score=min(max(conf, 0.0), 1.0),
                    cx=obj.cx + float(noise[0]),
                    cy=obj.cy + float(noise[1]),
                    w=max(obj.w + float(noise[2]), 1.0),
                    h=max(obj.h + float(noise[3]), 1.0),
                )
            )
        n_fp = int(rng.poisson(model.fp_rate * (1.0 - mean_skill))) if all_objects else 0
        for _ in range(n_fp):
            cat, w, h = all_objects[int(rng.integers(len(all_objects)))]
            conf = float(rng.beta(0.3 * model.confidence_concentration, 0.7 * model.confidence_concentration))
            dets.append(
                Detection(
                    image_id=image_id,
                    category=cat,
                    score=min(max(conf, 0.0), 1.0),
                    cx=float(rng.uniform(0, record.width)),
                    cy=float(rng.uniform(0, record.height)),
                    w=float(w),
                    h=float(h),
                )
            )
        dets.sort(key=lambda d: -d.score)
        result[image_id] = dets
    return result
