"""Data model, JSONL manifest parsing, and large-image tiling.

Single source of truth for images, ground-truth objects, and detections.
Manifests are line-delimited JSON (one image per line); a leading record
holding only a ``_meta`` key is skipped on parse and used to embed
config digests in emitted files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Iterable, Iterator

from .errors import DomainError, ManifestError


class LabelState(Enum):
    LABELED = "labeled"
    POOL = "pool"


@dataclass(frozen=True)
class GroundTruthObject:
    """One annotated object; angle is carried through but unused by scoring."""

    category: int
    cx: float
    cy: float
    w: float
    h: float
    angle: float | None = None


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    width: int
    height: int
    objects: tuple[GroundTruthObject, ...]


@dataclass(frozen=True)
class Detection:
    """One predicted object with post-NMS confidence in [0, 1]."""

    image_id: str
    category: int
    score: float
    cx: float
    cy: float
    w: float
    h: float


@dataclass
class DatasetIndex:
    """Images plus their current label state.

    ``images`` preserves manifest order for deterministic iteration.
    Content is immutable after construction; label-state transitions
    happen only through the loop module.
    """

    categories: tuple[str, ...]
    images: dict[str, ImageRecord]
    label_state: dict[str, LabelState] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.categories) < 1:
            raise DomainError("a dataset needs at least one category")
        for image_id in self.images:
            self.label_state.setdefault(image_id, LabelState.POOL)

    @property
    def cat_count(self) -> int:
        return len(self.categories)

    def ids(self) -> list[str]:
        return list(self.images)

    def labeled_ids(self) -> list[str]:
        return [i for i in self.images if self.label_state[i] is LabelState.LABELED]

    def pool_ids(self) -> list[str]:
        return [i for i in self.images if self.label_state[i] is LabelState.POOL]

    def labeled_objects(self) -> Iterator[GroundTruthObject]:
        for image_id in self.labeled_ids():
            yield from self.images[image_id].objects


@dataclass(frozen=True)
class TileWindow:
    """One sliding-window crop of a parent image.

    ``size`` is the nominal window side; ``width``/``height`` are the
    effective coverage, smaller than ``size`` only when the window
    exceeds an image dimension (then the window is flagged degenerate).
    """

    parent_id: str
    x0: int
    y0: int
    size: int
    width: int
    height: int
    degenerate: bool = False

    @property
    def tile_id(self) -> str:
        return f"{self.parent_id}__{self.x0}_{self.y0}"


def _iter_lines(stream: IO) -> Iterator[tuple[int, str]]:
    for lineno, raw in enumerate(stream, start=1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        line = raw.strip()
        if line:
            yield lineno, line


def _load_record(lineno: int, line: str) -> dict | None:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
    if not isinstance(record, dict):
        raise ManifestError(f"line {lineno}: expected a JSON object")
    if "_meta" in record:
        return None
    return record


def parse_ground_truth(stream: IO, categories: Iterable[str]) -> DatasetIndex:
    """Parse a ground-truth JSONL manifest into a DatasetIndex (all POOL)."""
    categories = tuple(categories)
    cat_index = {name: i for i, name in enumerate(categories)}
    images: dict[str, ImageRecord] = {}
    for lineno, line in _iter_lines(stream):
        record = _load_record(lineno, line)
        if record is None:
            continue
        try:
            image_id = str(record["image_id"])
            width = int(record["width"])
            height = int(record["height"])
            raw_objects = record.get("objects", [])
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"line {lineno}: missing or malformed field ({exc})") from exc
        if image_id in images:
            raise ManifestError(f"line {lineno}: duplicate image_id {image_id!r}")
        if width <= 0 or height <= 0:
            raise ManifestError(f"line {lineno}: non-positive image dimensions")
        objects = []
        for obj in raw_objects:
            cat_name = obj.get("category")
            if cat_name not in cat_index:
                raise ManifestError(f"line {lineno}: unknown category {cat_name!r}")
            w = float(obj["w"])
            h = float(obj["h"])
            if w <= 0:
                raise ManifestError(f"line {lineno}: field w must be > 0 (got {w})")
            if h <= 0:
                raise ManifestError(f"line {lineno}: field h must be > 0 (got {h})")
            cx = float(obj["cx"])
            cy = float(obj["cy"])
            if not (0 <= cx <= width and 0 <= cy <= height):
                raise ManifestError(f"line {lineno}: object center ({cx}, {cy}) outside image")
            angle = obj.get("angle")
            objects.append(
                GroundTruthObject(
                    category=cat_index[cat_name],
                    cx=cx,
                    cy=cy,
                    w=w,
                    h=h,
                    angle=None if angle is None else float(angle),
                )
            )
        images[image_id] = ImageRecord(image_id, width, height, tuple(objects))
    return DatasetIndex(categories=categories, images=images)


def serialize_ground_truth(index: DatasetIndex, stream: IO, meta: dict | None = None) -> None:
    """Write the manifest back out; parse(serialize(x)) == x on content."""
    if meta is not None:
        stream.write(json.dumps({"_meta": meta}, sort_keys=True) + "\n")
    for record in index.images.values():
        objects = []
        for obj in record.objects:
            entry = {
                "category": index.categories[obj.category],
                "cx": obj.cx,
                "cy": obj.cy,
                "w": obj.w,
                "h": obj.h,
            }
            if obj.angle is not None:
                entry["angle"] = obj.angle
            objects.append(entry)
        stream.write(
            json.dumps(
                {
                    "image_id": record.image_id,
                    "width": record.width,
                    "height": record.height,
                    "objects": objects,
                }
            )
            + "\n"
        )


def parse_detections(stream: IO, index: DatasetIndex) -> dict[str, list[Detection]]:
    """Parse a detections JSONL file, grouped per image.

    Groups are sorted by descending score; equal scores keep input order.
    """
    cat_index = {name: i for i, name in enumerate(index.categories)}
    grouped: dict[str, list[Detection]] = {}
    for lineno, line in _iter_lines(stream):
        record = _load_record(lineno, line)
        if record is None:
            continue
        image_id = str(record.get("image_id"))
        if image_id not in index.images:
            raise ManifestError(f"line {lineno}: unknown image_id {image_id!r}")
        group = grouped.setdefault(image_id, [])
        for det in record.get("detections", []):
            cat_name = det.get("category")
            if cat_name not in cat_index:
                raise ManifestError(f"line {lineno}: unknown category {cat_name!r}")
            score = float(det["score"])
            if not 0.0 <= score <= 1.0:
                raise ManifestError(f"line {lineno}: score {score} outside [0, 1]")
            w = float(det["w"])
            h = float(det["h"])
            if w <= 0 or h <= 0:
                raise ManifestError(f"line {lineno}: non-positive detection box side")
            group.append(
                Detection(
                    image_id=image_id,
                    category=cat_index[cat_name],
                    score=score,
                    cx=float(det["cx"]),
                    cy=float(det["cy"]),
                    w=w,
                    h=h,
                )
            )
    for group in grouped.values():
        group.sort(key=lambda d: -d.score)  # stable: ties keep input order
    return grouped


def serialize_detections(
    grouped: dict[str, list[Detection]],
    index: DatasetIndex,
    stream: IO,
    meta: dict | None = None,
) -> None:
    if meta is not None:
        stream.write(json.dumps({"_meta": meta}, sort_keys=True) + "\n")
    for image_id in sorted(grouped):
        dets = [
            {
                "category": index.categories[d.category],
                "score": d.score,
                "cx": d.cx,
                "cy": d.cy,
                "w": d.w,
                "h": d.h,
            }
            for d in grouped[image_id]
        ]
        stream.write(json.dumps({"image_id": image_id, "detections": dets}) + "\n")


def _axis_offsets(extent: int, window: int, stride: int) -> tuple[list[int], int, bool]:
    """Offsets along one axis plus effective window extent and degeneracy."""
    if window >= extent:
        return [0], extent, window > extent
    offsets = []
    o = 0
    while o + window < extent:
        offsets.append(o)
        o += stride
    if not offsets or offsets[-1] + window < extent:
        offsets.append(extent - window)
    return offsets, window, False


def plan_tiles(
    width: int, height: int, window: int, stride: int, parent_id: str = ""
) -> list[TileWindow]:
    """Plan sliding-window tiles with full coverage, row-major order.

    Per axis: offsets 0, stride, 2*stride, ... while offset + window < extent,
    plus a final clamped offset at extent - window when the last regular
    window stops short of the edge. A window larger than an image dimension
    collapses to a single clamped-to-origin window flagged degenerate.
    """
    if stride <= 0 or stride > window:
        raise DomainError(f"need 0 < stride <= window, got stride={stride} window={window}")
    if width <= 0 or height <= 0:
        raise DomainError("image dimensions must be positive")
    xs, eff_w, deg_x = _axis_offsets(width, window, stride)
    ys, eff_h, deg_y = _axis_offsets(height, window, stride)
    degenerate = deg_x or deg_y
    return [
        TileWindow(parent_id, x0, y0, window, eff_w, eff_h, degenerate)
        for y0 in ys
        for x0 in xs
    ]


def clip_annotations(
    tile: TileWindow,
    objects: Iterable[GroundTruthObject],
    min_inside_fraction: float = 0.5,
) -> list[GroundTruthObject]:
    """Translate objects into tile coordinates, dropping mostly-outside ones.

    An object is kept when intersection area / original area is at least
    ``min_inside_fraction``; its box is replaced by the intersection.
    """
    if not 0 < min_inside_fraction <= 1:
        raise DomainError("min_inside_fraction must be in (0, 1]")
    x_lo, x_hi = tile.x0, tile.x0 + tile.width
    y_lo, y_hi = tile.y0, tile.y0 + tile.height
    kept = []
    for obj in objects:
        bx_lo, bx_hi = obj.cx - obj.w / 2, obj.cx + obj.w / 2
        by_lo, by_hi = obj.cy - obj.h / 2, obj.cy + obj.h / 2
        ix_lo, ix_hi = max(bx_lo, x_lo), min(bx_hi, x_hi)
        iy_lo, iy_hi = max(by_lo, y_lo), min(by_hi, y_hi)
        iw, ih = ix_hi - ix_lo, iy_hi - iy_lo
        if iw <= 0 or ih <= 0:
            continue
        if (iw * ih) / (obj.w * obj.h) < min_inside_fraction:
            continue
        kept.append(
            GroundTruthObject(
                category=obj.category,
                cx=(ix_lo + ix_hi) / 2 - tile.x0,
                cy=(iy_lo + iy_hi) / 2 - tile.y0,
                w=iw,
                h=ih,
                angle=obj.angle,
            )
        )
    return kept


def tile_dataset(
    index: DatasetIndex, window: int, stride: int, min_inside_fraction: float = 0.5
) -> tuple[list[TileWindow], DatasetIndex]:
    """Tile every image and derive a manifest of tiles with clipped objects."""
    tiles: list[TileWindow] = []
    images: dict[str, ImageRecord] = {}
    for record in index.images.values():
        for tile in plan_tiles(record.width, record.height, window, stride, record.image_id):
            tiles.append(tile)
            clipped = clip_annotations(tile, record.objects, min_inside_fraction)
            images[tile.tile_id] = ImageRecord(
                tile.tile_id, tile.width, tile.height, tuple(clipped)
            )
    return tiles, DatasetIndex(categories=index.categories, images=images)


def write_tiles_csv(tiles: Iterable[TileWindow], stream: IO, meta_line: str | None = None) -> None:
    if meta_line:
        stream.write(f"# {meta_line}\n")
    stream.write("parent_id,x0,y0,size\n")
    for t in tiles:
        stream.write(f"{t.parent_id},{t.x0},{t.y0},{t.size}\n")
