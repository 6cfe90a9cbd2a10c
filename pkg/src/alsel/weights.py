"""Per-category statistics and the two class-imbalance weights.

Both weights are recomputed from the labeled set at the start of every
selection iteration. The first weight grows with a category's labeled
object count (log10, floored); the second penalizes categories whose
objects crowd into few images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import IO

from .dataset import DatasetIndex, LabelState

DEFAULT_W1_FLOOR = 10.0


@dataclass(frozen=True)
class CategoryWeightTable:
    categories: tuple[str, ...]
    n: tuple[int, ...]
    p: tuple[int, ...]
    x: tuple[float, ...]
    w1: tuple[float, ...]
    w2: tuple[float, ...]
    x_sum: float
    cat_count: int


def compute_category_stats(index: DatasetIndex) -> tuple[list[int], list[int]]:
    """Count labeled objects (n_i) and labeled images containing each category (p_i)."""
    c = index.cat_count
    n = [0] * c
    p = [0] * c
    for image_id in index.images:
        if index.label_state[image_id] is not LabelState.LABELED:
            continue
        seen: set[int] = set()
        for obj in index.images[image_id].objects:
            n[obj.category] += 1
            seen.add(obj.category)
        for cat in seen:
            p[cat] += 1
    return n, p


def weight_w1(n_i: int, floor: float = DEFAULT_W1_FLOOR) -> float:
    """log10 of the category's labeled object count, floored.

    The default floor of 10 keeps w1 >= 1; floor=1 gives the raw
    log10(n) form with n < 1 treated as 1.
    """
    if floor < 1:
        raise ValueError("floor must be >= 1")
    return math.log10(max(n_i, floor))


def weight_w2(n: list[int], p: list[int], cat_count: int) -> tuple[list[float], float, list[float]]:
    """Mean objects per containing image (x_i) and the crowding weight.

    Categories absent from the labeled set (p_i = 0) take x_i = 0, which
    maximizes their weight. Returns (x, sum, w2).
    """
    if cat_count < 1:
        raise ValueError("cat_count must be >= 1")
    x = [n_i / p_i if p_i > 0 else 0.0 for n_i, p_i in zip(n, p)]
    x_sum = sum(x)
    w2 = [(x_sum + cat_count) / (x_i + 1.0) for x_i in x]
    return x, x_sum, w2


def build_weight_table(index: DatasetIndex, w1_floor: float = DEFAULT_W1_FLOOR) -> CategoryWeightTable:
    n, p = compute_category_stats(index)
    x, x_sum, w2 = weight_w2(n, p, index.cat_count)
    w1 = [weight_w1(n_i, w1_floor) for n_i in n]
    return CategoryWeightTable(
        categories=index.categories,
        n=tuple(n),
        p=tuple(p),
        x=tuple(x),
        w1=tuple(w1),
        w2=tuple(w2),
        x_sum=x_sum,
        cat_count=index.cat_count,
    )


def write_weight_table_csv(table: CategoryWeightTable, stream: IO, meta_line: str | None = None) -> None:
    if meta_line:
        stream.write(f"# {meta_line}\n")
    stream.write("category,n,p,x,w1,w2\n")
    for i, name in enumerate(table.categories):
        stream.write(f"{name},{table.n[i]},{table.p[i]},{table.x[i]!r},{table.w1[i]!r},{table.w2[i]!r}\n")
    stream.write(f"# sum={table.x_sum!r} C={table.cat_count}\n")
